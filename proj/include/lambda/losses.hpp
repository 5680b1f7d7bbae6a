#pragma once

#include <utility>
#include <vector>

#include "lambda/class_priors.hpp"
#include "lambda/common.hpp"

namespace lambda {

enum class NegStrategy { Uniform, InBatch };

struct ContrastiveBatch {
  struct Item {
    int query = 0;
    int positive = 0;
    std::vector<int> negatives;
  };
  std::vector<Item> items;
  double lambda_temp = 30.0;
  double gamma = 1.0;
  // Loss normalization: rows are unit-normalized before similarities.
  bool normalize = true;
};

// Similarity is the negative Euclidean distance, so larger means closer.
double margin_h(double sim_neg, double sim_pos, double gamma);

// sum_i log(1 + sum_j exp(lambda * H_ij)), overflow-safe.
double spectral_contrastive_loss(const ContrastiveBatch& batch, const Matrix& emb);

// Same value; accumulates dLoss/dEmb into d_emb (same shape as emb).
double spectral_contrastive_loss_grad(const ContrastiveBatch& batch, const Matrix& emb,
                                      Matrix& d_emb);

// -log softmax ratio of the positive against positive+negatives; negs rows
// are the negative vectors. Raw (unnormalized) inputs.
double infonce(std::span<const double> q, std::span<const double> p_plus, const Matrix& negs,
               double lambda);

// Returns ((1/lambda) log sum_j exp(lambda h_j), max_j h_j).
std::pair<double, double> tuns_bound_check(std::span<const double> h_values, double lambda);

std::vector<int> sample_negatives(const std::pair<int, int>& anchor,
                                  std::span<const int> pool, int n, NegStrategy strategy,
                                  std::uint64_t seed);

struct RiskTerms {
  double r_p_plus = 0.0;
  double r_u_minus = 0.0;
  double r_p_minus = 0.0;
};

// Empirical negative log-likelihood means; prob_plus[i] is y_hat_i(+1) and
// probabilities are clipped to [1e-12, 1 - 1e-12] before the logs.
RiskTerms risk_terms(const std::vector<double>& prob_plus, const std::vector<int>& labeled_pos,
                     const std::vector<int>& unlabeled);

// alpha pi_p R_p^+ + max(0, R_u^- - pi_p_u R_p^-), non-negative.
double pu_loss(const RiskTerms& terms, const ClassPriors& priors);

// Same loss computed from the probabilities directly; accumulates the
// gradient w.r.t. prob_plus into d_prob (same length, zero elsewhere).
double pu_loss_grad(const std::vector<double>& prob_plus, const std::vector<int>& labeled_pos,
                    const std::vector<int>& unlabeled, const ClassPriors& priors,
                    std::vector<double>& d_prob);

// pi_p R_p^+ + (pi_n / pi_n_u) [R_u^- - pi_p_u R_p^-], unclamped.
double unbiased_risk(const RiskTerms& terms, const ClassPriors& priors);

double combined_warmup_loss(double l_info, double l_pu, double l_o, double beta, double mu_o);

}  // namespace lambda
