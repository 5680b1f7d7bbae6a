#pragma once

#include <span>
#include <string>

// Data-parallel inner loops used by the encoder and training code. Every
// kernel has a scalar reference implementation and, on x86-64 with AVX2, a
// vectorized variant. The active backend is selected once at startup
// (overridable via the LAMBDA_KERNEL environment variable or force_backend,
// which the equivalence tests use).
namespace lambda::kern {

double dot(std::span<const double> a, std::span<const double> b);
double sum(std::span<const double> x);
double sq_norm(std::span<const double> x);
// y += a * x
void axpy(double a, std::span<const double> x, std::span<double> y);
// x *= a
void scale(double a, std::span<double> x);
// out = theta .* a + (1 - theta) .* b
void lerp(std::span<const double> theta, std::span<const double> a,
          std::span<const double> b, std::span<double> out);
void tanh_apply(std::span<const double> x, std::span<double> out);
void sigmoid_apply(std::span<const double> x, std::span<double> out);
void exp_apply(std::span<const double> x, std::span<double> out);

const std::string& active_backend();
// "scalar" or "avx2"; throws if the backend is unavailable on this machine.
void force_backend(const std::string& name);

namespace scalar {
double dot(std::span<const double> a, std::span<const double> b);
double sum(std::span<const double> x);
double sq_norm(std::span<const double> x);
void axpy(double a, std::span<const double> x, std::span<double> y);
void scale(double a, std::span<double> x);
void lerp(std::span<const double> theta, std::span<const double> a,
          std::span<const double> b, std::span<double> out);
void tanh_apply(std::span<const double> x, std::span<double> out);
void sigmoid_apply(std::span<const double> x, std::span<double> out);
void exp_apply(std::span<const double> x, std::span<double> out);
}  // namespace scalar

#if defined(__x86_64__) || defined(_M_X64)
#define LAMBDA_HAVE_AVX2_BUILD 1
namespace avx2 {
bool supported();
double dot(std::span<const double> a, std::span<const double> b);
double sum(std::span<const double> x);
double sq_norm(std::span<const double> x);
void axpy(double a, std::span<const double> x, std::span<double> y);
void scale(double a, std::span<double> x);
void lerp(std::span<const double> theta, std::span<const double> a,
          std::span<const double> b, std::span<double> out);
void tanh_apply(std::span<const double> x, std::span<double> out);
void sigmoid_apply(std::span<const double> x, std::span<double> out);
void exp_apply(std::span<const double> x, std::span<double> out);
}  // namespace avx2
#endif

}  // namespace lambda::kern
