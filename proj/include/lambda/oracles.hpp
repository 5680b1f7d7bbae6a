#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "lambda/common.hpp"

namespace lambda {

// Two-Gaussian PU world: positives ~ N(mean_p, sd), negatives ~ N(mean_n, sd),
// unlabeled drawn from the pi_p_u mixture. Closed-form truth exists for the
// zero-one loss of a threshold classifier.
struct GaussianPUWorld {
  double mean_p = 1.0;
  double mean_n = -1.0;
  double sd = 1.0;
  double pi_p = 0.6;
  double pi_p_u = 0.3;
  std::uint64_t seed = 17;
};

double normal_cdf(double x);

// Zero-one risk of sign(x - threshold):
// pi_p Phi((t - mu_p)/sd) + pi_n (1 - Phi((t - mu_n)/sd)).
double true_risk(const GaussianPUWorld& world, double threshold);

struct McReport {
  double mean_estimate = 0.0;
  double std_error = 0.0;
  double true_risk = 0.0;
  int resamples = 0;
};

// Draws fresh positive/unlabeled samples per resample, evaluates the
// unbiased estimator with zero-one losses, reports mean and standard error.
McReport mc_unbiasedness(const GaussianPUWorld& world, int n_p, int n_u, int resamples,
                         double threshold = 0.0);

struct VarReport {
  double var_ours = 0.0;
  double var_nn = 0.0;
};

// Empirical variances over shared resamples of the corrected estimator and
// the p_u = p form (pi_p_u replaced by pi_p, unlabeled factor 1); the two
// coincide per sample when pi_p_u == pi_p.
VarReport variance_compare(const GaussianPUWorld& world, int n_p, int n_u, int resamples,
                           double threshold = 0.0);

// Central differences (f(x + eps e_i) - f(x - eps e_i)) / (2 eps).
std::vector<double> fd_gradient(const std::function<double(std::span<const double>)>& f,
                                std::span<const double> params, double eps = 1e-4);

// Reference implementations by direct definition; equality oracles for the
// aligneval counterparts.
Matrix naive_csls(const Matrix& src_emb, const Matrix& tgt_emb, int k);
std::vector<std::pair<int, int>> naive_mutual_nn(const Matrix& sim);

// Secondary check with a smooth loss: logistic risk of g(x) = x - threshold,
// truth by numeric quadrature.
double true_risk_logistic(const GaussianPUWorld& world, double threshold);
McReport mc_unbiasedness_logistic(const GaussianPUWorld& world, int n_p, int n_u,
                                  int resamples, double threshold = 0.0);

}  // namespace lambda
