#include "lambda/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>

#include "lambda/class_priors.hpp"
#include "lambda/losses.hpp"

namespace lambda {

namespace {

void require(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}

ClassPriors world_priors(const GaussianPUWorld& world) {
  // pi_p_tr recovered from pi_p_u = (pi_p - pi_p_tr) / (1 - pi_p_tr).
  require(world.pi_p_u <= world.pi_p, "world: pi_p_u cannot exceed pi_p");
  const double tr = (world.pi_p - world.pi_p_u) / (1.0 - world.pi_p_u);
  return ClassPriors::from_pi_p(world.pi_p, tr);
}

// Zero-one risk terms of sign(x - t) on one resample.
struct SampleTerms {
  double a = 0.0;  // R_p^+: positives predicted negative
  double b = 0.0;  // R_u^-: unlabeled predicted positive
  double c = 0.0;  // R_p^-: positives predicted positive
};

SampleTerms draw_zero_one(const GaussianPUWorld& world, int n_p, int n_u, double threshold,
                          std::mt19937_64& rng) {
  std::normal_distribution<double> pos(world.mean_p, world.sd);
  std::normal_distribution<double> neg(world.mean_n, world.sd);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  SampleTerms t;
  for (int i = 0; i < n_p; ++i) {
    const double x = pos(rng);
    if (x < threshold)
      t.a += 1.0;
    else
      t.c += 1.0;
  }
  t.a /= n_p;
  t.c /= n_p;
  for (int i = 0; i < n_u; ++i) {
    const double x = unit(rng) < world.pi_p_u ? pos(rng) : neg(rng);
    if (x >= threshold) t.b += 1.0;
  }
  t.b /= n_u;
  return t;
}

std::pair<double, double> mean_and_se(const std::vector<double>& xs) {
  const double n = static_cast<double>(xs.size());
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= n;
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  var /= (n - 1.0);
  return {mean, std::sqrt(var / n)};
}

}  // namespace

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double true_risk(const GaussianPUWorld& world, double threshold) {
  require(world.sd > 0.0, "world: sd must be positive");
  const double pi_n = 1.0 - world.pi_p;
  return world.pi_p * normal_cdf((threshold - world.mean_p) / world.sd) +
         pi_n * (1.0 - normal_cdf((threshold - world.mean_n) / world.sd));
}

McReport mc_unbiasedness(const GaussianPUWorld& world, int n_p, int n_u, int resamples,
                         double threshold) {
  require(resamples >= 100, "mc_unbiasedness: need at least 100 resamples");
  require(n_p >= 1 && n_u >= 1, "mc_unbiasedness: sample sizes must be positive");
  const ClassPriors priors = world_priors(world);
  std::vector<double> estimates(resamples);
  for (int r = 0; r < resamples; ++r) {
    auto rng = make_rng(world.seed + static_cast<std::uint64_t>(r));
    SampleTerms t = draw_zero_one(world, n_p, n_u, threshold, rng);
    estimates[r] = unbiased_risk({t.a, t.b, t.c}, priors);
  }
  auto [mean, se] = mean_and_se(estimates);
  return {mean, se, true_risk(world, threshold), resamples};
}

VarReport variance_compare(const GaussianPUWorld& world, int n_p, int n_u, int resamples,
                           double threshold) {
  require(resamples >= 2, "variance_compare: variance undefined below 2 resamples");
  const ClassPriors priors = world_priors(world);
  std::vector<double> ours(resamples), nn(resamples);
  for (int r = 0; r < resamples; ++r) {
    auto rng = make_rng(world.seed + static_cast<std::uint64_t>(r));
    SampleTerms t = draw_zero_one(world, n_p, n_u, threshold, rng);
    ours[r] = unbiased_risk({t.a, t.b, t.c}, priors);
    nn[r] = world.pi_p * t.a + (t.b - world.pi_p * t.c);
  }
  auto var_of = [](const std::vector<double>& xs) {
    auto [mean, se] = mean_and_se(xs);
    (void)mean;
    return se * se * static_cast<double>(xs.size());
  };
  return {var_of(ours), var_of(nn)};
}

std::vector<double> fd_gradient(const std::function<double(std::span<const double>)>& f,
                                std::span<const double> params, double eps) {
  require(eps > 0.0, "fd_gradient: eps must be positive");
  std::vector<double> x(params.begin(), params.end());
  std::vector<double> grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + eps;
    const double fp = f(x);
    x[i] = saved - eps;
    const double fm = f(x);
    x[i] = saved;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw std::runtime_error("fd_gradient: non-finite loss value");
    grad[i] = (fp - fm) / (2.0 * eps);
  }
  return grad;
}

namespace {

double oracle_dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double oracle_cos(std::span<const double> a, std::span<const double> b) {
  const double na = std::sqrt(oracle_dot(a, a));
  const double nb = std::sqrt(oracle_dot(b, b));
  return (na > 0.0 && nb > 0.0) ? oracle_dot(a, b) / (na * nb) : 0.0;
}

}  // namespace

Matrix naive_csls(const Matrix& src_emb, const Matrix& tgt_emb, int k) {
  require(k >= 1, "naive_csls: k must be at least 1");
  const std::size_t ns = src_emb.rows(), nt = tgt_emb.rows();
  k = std::min<int>(k, static_cast<int>(std::min(ns, nt)));

  Matrix out(ns, nt);
  for (std::size_t i = 0; i < ns; ++i) {
    // mean cosine of src i to its k nearest targets
    std::vector<double> to_tgt(nt);
    for (std::size_t j = 0; j < nt; ++j) to_tgt[j] = oracle_cos(src_emb.row(i), tgt_emb.row(j));
    std::vector<double> sorted = to_tgt;
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    double rt = 0.0;
    for (int q = 0; q < k; ++q) rt += sorted[q];
    rt /= static_cast<double>(k);

    for (std::size_t j = 0; j < nt; ++j) {
      std::vector<double> to_src(ns);
      for (std::size_t i2 = 0; i2 < ns; ++i2)
        to_src[i2] = oracle_cos(src_emb.row(i2), tgt_emb.row(j));
      std::sort(to_src.begin(), to_src.end(), std::greater<>());
      double rs = 0.0;
      for (int q = 0; q < k; ++q) rs += to_src[q];
      rs /= static_cast<double>(k);
      out(i, j) = 2.0 * to_tgt[j] - rt - rs;
    }
  }
  return out;
}

std::vector<std::pair<int, int>> naive_mutual_nn(const Matrix& sim) {
  std::vector<std::pair<int, int>> out;
  for (std::size_t i = 0; i < sim.rows(); ++i) {
    std::size_t best_j = 0;
    for (std::size_t j = 1; j < sim.cols(); ++j)
      if (sim(i, j) > sim(i, best_j)) best_j = j;
    std::size_t best_i = 0;
    for (std::size_t i2 = 1; i2 < sim.rows(); ++i2)
      if (sim(i2, best_j) > sim(best_i, best_j)) best_i = i2;
    if (best_i == i) out.push_back({static_cast<int>(i), static_cast<int>(best_j)});
  }
  return out;
}

namespace {

// log(1 + exp(z)) without overflow
double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

double gauss_expect(double mean, double sd, const std::function<double(double)>& f) {
  // Simpson quadrature over mean +- 10 sd.
  const int n = 4000;  // even
  const double lo = mean - 10.0 * sd, hi = mean + 10.0 * sd;
  const double h = (hi - lo) / n;
  const double inv = 1.0 / (sd * std::sqrt(2.0 * 3.14159265358979323846));
  auto dens = [&](double x) {
    const double z = (x - mean) / sd;
    return inv * std::exp(-0.5 * z * z);
  };
  double acc = f(lo) * dens(lo) + f(hi) * dens(hi);
  for (int i = 1; i < n; ++i) {
    const double x = lo + i * h;
    acc += f(x) * dens(x) * (i % 2 == 1 ? 4.0 : 2.0);
  }
  return acc * h / 3.0;
}

}  // namespace

double true_risk_logistic(const GaussianPUWorld& world, double threshold) {
  const double pi_n = 1.0 - world.pi_p;
  const double rp = gauss_expect(world.mean_p, world.sd,
                                 [&](double x) { return softplus(-(x - threshold)); });
  const double rn =
      gauss_expect(world.mean_n, world.sd, [&](double x) { return softplus(x - threshold); });
  return world.pi_p * rp + pi_n * rn;
}

McReport mc_unbiasedness_logistic(const GaussianPUWorld& world, int n_p, int n_u,
                                  int resamples, double threshold) {
  require(resamples >= 100, "mc_unbiasedness_logistic: need at least 100 resamples");
  const ClassPriors priors = world_priors(world);
  std::vector<double> estimates(resamples);
  std::normal_distribution<double> posd(world.mean_p, world.sd);
  std::normal_distribution<double> negd(world.mean_n, world.sd);
  for (int r = 0; r < resamples; ++r) {
    auto rng = make_rng(world.seed + 0x5851f42d4c957f2dull + static_cast<std::uint64_t>(r));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    RiskTerms t;
    for (int i = 0; i < n_p; ++i) {
      const double x = posd(rng);
      t.r_p_plus += softplus(-(x - threshold));
      t.r_p_minus += softplus(x - threshold);
    }
    t.r_p_plus /= n_p;
    t.r_p_minus /= n_p;
    for (int i = 0; i < n_u; ++i) {
      const double x = unit(rng) < world.pi_p_u ? posd(rng) : negd(rng);
      t.r_u_minus += softplus(x - threshold);
    }
    t.r_u_minus /= n_u;
    estimates[r] = unbiased_risk(t, priors);
  }
  auto [mean, se] = mean_and_se(estimates);
  return {mean, se, true_risk_logistic(world, threshold), resamples};
}

}  // namespace lambda
