#include "lambda/kernels.hpp"

#include <cmath>
#include <cstdlib>
#include <stdexcept>

#if defined(__x86_64__) || defined(_M_X64)
#include <immintrin.h>
#endif

namespace lambda::kern {

namespace scalar {

double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double sum(std::span<const double> x) {
  double acc = 0.0;
  for (double v : x) acc += v;
  return acc;
}

double sq_norm(std::span<const double> x) {
  double acc = 0.0;
  for (double v : x) acc += v * v;
  return acc;
}

void axpy(double a, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

void scale(double a, std::span<double> x) {
  for (double& v : x) v *= a;
}

void lerp(std::span<const double> theta, std::span<const double> a,
          std::span<const double> b, std::span<double> out) {
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = theta[i] * a[i] + (1.0 - theta[i]) * b[i];
}

void tanh_apply(std::span<const double> x, std::span<double> out) {
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::tanh(x[i]);
}

void sigmoid_apply(std::span<const double> x, std::span<double> out) {
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-x[i]));
}

void exp_apply(std::span<const double> x, std::span<double> out) {
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::exp(x[i]);
}

}  // namespace scalar

#ifdef LAMBDA_HAVE_AVX2_BUILD

namespace avx2 {

bool supported() { return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma"); }

#define LAMBDA_AVX2 __attribute__((target("avx2,fma")))

LAMBDA_AVX2 static inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d shuf = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, shuf));
}

LAMBDA_AVX2 double dot(std::span<const double> a, std::span<const double> b) {
  const std::size_t n = a.size();
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d va = _mm256_loadu_pd(a.data() + i);
    __m256d vb = _mm256_loadu_pd(b.data() + i);
    acc = _mm256_fmadd_pd(va, vb, acc);
  }
  double r = hsum(acc);
  for (; i < n; ++i) r += a[i] * b[i];
  return r;
}

LAMBDA_AVX2 double sum(std::span<const double> x) {
  const std::size_t n = x.size();
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x.data() + i));
  double r = hsum(acc);
  for (; i < n; ++i) r += x[i];
  return r;
}

LAMBDA_AVX2 double sq_norm(std::span<const double> x) {
  const std::size_t n = x.size();
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d v = _mm256_loadu_pd(x.data() + i);
    acc = _mm256_fmadd_pd(v, v, acc);
  }
  double r = hsum(acc);
  for (; i < n; ++i) r += x[i] * x[i];
  return r;
}

LAMBDA_AVX2 void axpy(double a, std::span<const double> x, std::span<double> y) {
  const std::size_t n = x.size();
  __m256d va = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d vx = _mm256_loadu_pd(x.data() + i);
    __m256d vy = _mm256_loadu_pd(y.data() + i);
    _mm256_storeu_pd(y.data() + i, _mm256_fmadd_pd(va, vx, vy));
  }
  for (; i < n; ++i) y[i] += a * x[i];
}

LAMBDA_AVX2 void scale(double a, std::span<double> x) {
  const std::size_t n = x.size();
  __m256d va = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(x.data() + i, _mm256_mul_pd(va, _mm256_loadu_pd(x.data() + i)));
  for (; i < n; ++i) x[i] *= a;
}

LAMBDA_AVX2 void lerp(std::span<const double> theta, std::span<const double> a,
                      std::span<const double> b, std::span<double> out) {
  const std::size_t n = out.size();
  __m256d one = _mm256_set1_pd(1.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d t = _mm256_loadu_pd(theta.data() + i);
    __m256d va = _mm256_loadu_pd(a.data() + i);
    __m256d vb = _mm256_loadu_pd(b.data() + i);
    __m256d r = _mm256_fmadd_pd(t, va, _mm256_mul_pd(_mm256_sub_pd(one, t), vb));
    _mm256_storeu_pd(out.data() + i, r);
  }
  for (; i < n; ++i) out[i] = theta[i] * a[i] + (1.0 - theta[i]) * b[i];
}

// Cephes-style vectorized exp. Cody-Waite range reduction against log(2),
// degree-2/3 rational approximation, 2^n reconstruction through the exponent
// bits. Accurate to a couple of ulps over the clamped range.
LAMBDA_AVX2 static inline __m256d exp_pd(__m256d x) {
  const __m256d kLog2E = _mm256_set1_pd(1.4426950408889634073599);
  const __m256d kC1 = _mm256_set1_pd(6.93145751953125e-1);
  const __m256d kC2 = _mm256_set1_pd(1.42860682030941723212e-6);
  const __m256d kP0 = _mm256_set1_pd(1.26177193074810590878e-4);
  const __m256d kP1 = _mm256_set1_pd(3.02994407707441961300e-2);
  const __m256d kP2 = _mm256_set1_pd(9.99999999999999999910e-1);
  const __m256d kQ0 = _mm256_set1_pd(3.00198505138664455042e-6);
  const __m256d kQ1 = _mm256_set1_pd(2.52448340349684104192e-3);
  const __m256d kQ2 = _mm256_set1_pd(2.27265548208155028766e-1);
  const __m256d kQ3 = _mm256_set1_pd(2.00000000000000000005e0);
  const __m256d kMax = _mm256_set1_pd(708.396418532264106224);
  const __m256d kMin = _mm256_set1_pd(-708.396418532264106224);

  x = _mm256_min_pd(_mm256_max_pd(x, kMin), kMax);

  __m256d n = _mm256_round_pd(_mm256_mul_pd(x, kLog2E),
                              _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
  x = _mm256_fnmadd_pd(n, kC1, x);
  x = _mm256_fnmadd_pd(n, kC2, x);

  __m256d xx = _mm256_mul_pd(x, x);
  __m256d px = _mm256_fmadd_pd(kP0, xx, kP1);
  px = _mm256_fmadd_pd(px, xx, kP2);
  px = _mm256_mul_pd(px, x);
  __m256d qx = _mm256_fmadd_pd(kQ0, xx, kQ1);
  qx = _mm256_fmadd_pd(qx, xx, kQ2);
  qx = _mm256_fmadd_pd(qx, xx, kQ3);
  __m256d e = _mm256_div_pd(px, _mm256_sub_pd(qx, px));
  e = _mm256_fmadd_pd(_mm256_set1_pd(2.0), e, _mm256_set1_pd(1.0));

  // e *= 2^n
  __m128i ni = _mm256_cvtpd_epi32(n);
  __m256i n64 = _mm256_cvtepi32_epi64(ni);
  n64 = _mm256_add_epi64(n64, _mm256_set1_epi64x(1023));
  n64 = _mm256_slli_epi64(n64, 52);
  return _mm256_mul_pd(e, _mm256_castsi256_pd(n64));
}

LAMBDA_AVX2 void exp_apply(std::span<const double> x, std::span<double> out) {
  const std::size_t n = x.size();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out.data() + i, exp_pd(_mm256_loadu_pd(x.data() + i)));
  for (; i < n; ++i) out[i] = std::exp(x[i]);
}

LAMBDA_AVX2 void sigmoid_apply(std::span<const double> x, std::span<double> out) {
  const std::size_t n = x.size();
  const __m256d one = _mm256_set1_pd(1.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d v = _mm256_loadu_pd(x.data() + i);
    __m256d e = exp_pd(_mm256_sub_pd(_mm256_setzero_pd(), v));
    _mm256_storeu_pd(out.data() + i, _mm256_div_pd(one, _mm256_add_pd(one, e)));
  }
  for (; i < n; ++i) out[i] = 1.0 / (1.0 + std::exp(-x[i]));
}

// tanh(x) = sign(x) * (1 - 2 / (exp(2|x|) + 1)); saturates past |x| = 19.
LAMBDA_AVX2 void tanh_apply(std::span<const double> x, std::span<double> out) {
  const std::size_t n = x.size();
  const __m256d one = _mm256_set1_pd(1.0);
  const __m256d two = _mm256_set1_pd(2.0);
  const __m256d sat = _mm256_set1_pd(19.0);
  const __m256d sign_mask = _mm256_set1_pd(-0.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d v = _mm256_loadu_pd(x.data() + i);
    __m256d s = _mm256_and_pd(v, sign_mask);
    __m256d a = _mm256_andnot_pd(sign_mask, v);
    __m256d e = exp_pd(_mm256_mul_pd(two, _mm256_min_pd(a, sat)));
    __m256d t = _mm256_sub_pd(one, _mm256_div_pd(two, _mm256_add_pd(e, one)));
    t = _mm256_blendv_pd(t, one, _mm256_cmp_pd(a, sat, _CMP_GE_OQ));
    _mm256_storeu_pd(out.data() + i, _mm256_or_pd(t, s));
  }
  for (; i < n; ++i) out[i] = std::tanh(x[i]);
}

#undef LAMBDA_AVX2

}  // namespace avx2

#endif  // LAMBDA_HAVE_AVX2_BUILD

namespace {

struct Dispatch {
  double (*dot)(std::span<const double>, std::span<const double>);
  double (*sum)(std::span<const double>);
  double (*sq_norm)(std::span<const double>);
  void (*axpy)(double, std::span<const double>, std::span<double>);
  void (*scale)(double, std::span<double>);
  void (*lerp)(std::span<const double>, std::span<const double>, std::span<const double>,
               std::span<double>);
  void (*tanh_apply)(std::span<const double>, std::span<double>);
  void (*sigmoid_apply)(std::span<const double>, std::span<double>);
  void (*exp_apply)(std::span<const double>, std::span<double>);
  std::string name;
};

Dispatch make_scalar() {
  return {scalar::dot,  scalar::sum,        scalar::sq_norm,       scalar::axpy,
          scalar::scale, scalar::lerp,       scalar::tanh_apply,    scalar::sigmoid_apply,
          scalar::exp_apply, "scalar"};
}

#ifdef LAMBDA_HAVE_AVX2_BUILD
Dispatch make_avx2() {
  return {avx2::dot,  avx2::sum,        avx2::sq_norm,       avx2::axpy,
          avx2::scale, avx2::lerp,       avx2::tanh_apply,    avx2::sigmoid_apply,
          avx2::exp_apply, "avx2"};
}
#endif

Dispatch select_initial() {
  const char* env = std::getenv("LAMBDA_KERNEL");
  std::string want = env ? env : "";
#ifdef LAMBDA_HAVE_AVX2_BUILD
  if (want == "avx2" || (want.empty() && avx2::supported())) return make_avx2();
#endif
  return make_scalar();
}

Dispatch& dispatch() {
  static Dispatch d = select_initial();
  return d;
}

}  // namespace

double dot(std::span<const double> a, std::span<const double> b) { return dispatch().dot(a, b); }
double sum(std::span<const double> x) { return dispatch().sum(x); }
double sq_norm(std::span<const double> x) { return dispatch().sq_norm(x); }
void axpy(double a, std::span<const double> x, std::span<double> y) { dispatch().axpy(a, x, y); }
void scale(double a, std::span<double> x) { dispatch().scale(a, x); }
void lerp(std::span<const double> theta, std::span<const double> a, std::span<const double> b,
          std::span<double> out) {
  dispatch().lerp(theta, a, b, out);
}
void tanh_apply(std::span<const double> x, std::span<double> out) { dispatch().tanh_apply(x, out); }
void sigmoid_apply(std::span<const double> x, std::span<double> out) {
  dispatch().sigmoid_apply(x, out);
}
void exp_apply(std::span<const double> x, std::span<double> out) { dispatch().exp_apply(x, out); }

const std::string& active_backend() { return dispatch().name; }

void force_backend(const std::string& name) {
  if (name == "scalar") {
    dispatch() = make_scalar();
    return;
  }
#ifdef LAMBDA_HAVE_AVX2_BUILD
  if (name == "avx2") {
    if (!avx2::supported()) throw std::runtime_error("avx2 backend not supported on this cpu");
    dispatch() = make_avx2();
    return;
  }
#endif
  throw std::runtime_error("unknown kernel backend: " + name);
}

}  // namespace lambda::kern
