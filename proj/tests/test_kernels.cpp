#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "lambda/kernels.hpp"

using namespace lambda;

namespace {

std::vector<double> random_vec(std::size_t n, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, scale);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

bool close(double a, double b, double tol) {
  return std::abs(a - b) <= tol * std::max({1.0, std::abs(a), std::abs(b)});
}

}  // namespace

#ifdef LAMBDA_HAVE_AVX2_BUILD

TEST_CASE("avx2 kernels match scalar references") {
  if (!kern::avx2::supported()) return;  // nothing to compare on this machine

  // Odd lengths exercise the remainder loops.
  for (std::size_t n : {1u, 3u, 4u, 7u, 64u, 129u, 1000u}) {
    auto a = random_vec(n, 11 * n + 1);
    auto b = random_vec(n, 13 * n + 2);

    CHECK(close(kern::scalar::dot(a, b), kern::avx2::dot(a, b), 1e-12));
    CHECK(close(kern::scalar::sum(a), kern::avx2::sum(a), 1e-12));
    CHECK(close(kern::scalar::sq_norm(a), kern::avx2::sq_norm(a), 1e-12));

    auto y1 = b, y2 = b;
    kern::scalar::axpy(0.37, a, y1);
    kern::avx2::axpy(0.37, a, y2);
    for (std::size_t i = 0; i < n; ++i) CHECK(close(y1[i], y2[i], 1e-13));

    auto s1 = a, s2 = a;
    kern::scalar::scale(-1.7, s1);
    kern::avx2::scale(-1.7, s2);
    for (std::size_t i = 0; i < n; ++i) CHECK(s1[i] == s2[i]);

    std::vector<double> theta(n), l1(n), l2(n);
    std::mt19937_64 rng(n);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (auto& t : theta) t = unit(rng);
    kern::scalar::lerp(theta, a, b, l1);
    kern::avx2::lerp(theta, a, b, l2);
    for (std::size_t i = 0; i < n; ++i) CHECK(close(l1[i], l2[i], 1e-13));
  }
}

TEST_CASE("avx2 transcendental kernels match libm closely") {
  if (!kern::avx2::supported()) return;
  const std::size_t n = 4001;
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = -30.0 + 60.0 * static_cast<double>(i) / (n - 1);

  std::vector<double> e1(n), e2(n), t1(n), t2(n), s1(n), s2(n);
  kern::scalar::exp_apply(x, e1);
  kern::avx2::exp_apply(x, e2);
  kern::scalar::tanh_apply(x, t1);
  kern::avx2::tanh_apply(x, t2);
  kern::scalar::sigmoid_apply(x, s1);
  kern::avx2::sigmoid_apply(x, s2);
  for (std::size_t i = 0; i < n; ++i) {
    CHECK(std::abs(e2[i] - e1[i]) <= 1e-13 * std::max(1.0, e1[i]));
    CHECK(std::abs(t2[i] - t1[i]) <= 1e-13);
    CHECK(std::abs(s2[i] - s1[i]) <= 1e-13);
  }
  // Saturation endpoints.
  std::vector<double> big = {-750.0, -20.0, 20.0, 750.0};
  std::vector<double> tb(4), sb(4);
  kern::avx2::tanh_apply(big, tb);
  kern::avx2::sigmoid_apply(big, sb);
  CHECK(tb[0] == -1.0);
  CHECK(tb[3] == 1.0);
  CHECK(sb[0] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(sb[3] == doctest::Approx(1.0).epsilon(1e-12));
}

#endif  // LAMBDA_HAVE_AVX2_BUILD

TEST_CASE("backend selection is sticky and reversible") {
  const std::string original = kern::active_backend();
  kern::force_backend("scalar");
  CHECK(kern::active_backend() == "scalar");
  std::vector<double> a = {1.0, 2.0, 3.0};
  CHECK(kern::dot(a, a) == doctest::Approx(14.0));
  CHECK_THROWS(kern::force_backend("no-such-backend"));
  kern::force_backend(original);
  CHECK(kern::active_backend() == original);
}
