#pragma once

#include <filesystem>
#include <vector>

#include "lambda/class_priors.hpp"
#include "lambda/encoder.hpp"
#include "lambda/kgdata.hpp"
#include "lambda/losses.hpp"

namespace lambda {

struct IpuleConfig {
  EncoderConfig enc;
  int warmup_epochs = 10;
  double beta = 1e-3;
  double lr = 0.005;
  int batch = 5120;  // anchors per contrastive chunk
  int max_em_iters = 50;
  int m_epochs = 5;  // gradient epochs per M-step
  double tol_loss = 1e-4;   // relative loss change
  double tol_prior = 1e-3;  // absolute pi_p change
  double tau_align = 0.05;
  double mu_orth = 0.1;
  double lambda_temp = 30.0;
  double gamma = 1.0;
  NegStrategy neg_strategy = NegStrategy::InBatch;
  int n_negatives = 64;  // cap per anchor
  // Transductive runs overfit the labeled positives through the per-entity
  // embeddings; these keep the classifier honest on the unlabeled set.
  double weight_decay = 1e-3;   // on entity embeddings and head weights
  double head_dropout = -1.0;   // classifier-input dropout; <0 follows enc.dropout
  bool nn_defit = true;         // gradient step on the negated inner term
  double defit_slack = 0.0;     // only defit once inner < -slack
  std::uint64_t seed = 0;
};

struct HistoryRow {
  int step = 0;
  bool warmup = false;
  double loss = 0.0;
  double pi_p = 0.0;
  double pi_p_u = 0.0;
};

struct DetectionResult {
  int n_src = 0;
  std::vector<double> prob_matchable;  // per union entity, y_hat(+1)
  std::vector<std::uint8_t> labels;    // 1 = matchable (prob > 0.5)
  ClassPriors priors;
  std::vector<HistoryRow> history;
  bool alignable = false;
  bool converged = false;
};

// pi_p_u from threshold counts on the unlabeled probabilities, pi_p from
// (|P| + |U| pi_p_u) / (|P| + |U|); alpha and complements recomputed.
ClassPriors e_step(const std::vector<double>& probs_unlabeled, std::int64_t n_pos,
                   std::int64_t n_unlabeled);

// Warm-up on beta L_info + (1-beta) L_pu + mu_o L_o with cold-start priors,
// then alternating E-step prior updates and M-step minimization of L_pu until
// the loss or pi_p stabilizes for 3 consecutive iterations. Trained encoder
// parameters are written to out_params when provided.
DetectionResult run_ipule(const KGPair& pair, const AnchorSplit& split, const IpuleConfig& cfg,
                          EncoderParams* out_params = nullptr);

bool alignability(const ClassPriors& priors, double tau_align);

// Mutual-nearest unanchored pairs among entities predicted matchable,
// usable as quasi-supervision (off by default in the pipelines).
std::vector<AnchorPair> augment_anchors(const Matrix& hf, int n_src,
                                        const std::vector<std::uint8_t>& pred_matchable,
                                        const std::vector<AnchorPair>& current_anchors,
                                        bool use_csls, int csls_k);

void write_detection_json(const DetectionResult& result, const std::filesystem::path& path,
                          bool include_probabilities = true);
void write_history_csv(const std::vector<HistoryRow>& history,
                       const std::filesystem::path& path);
DetectionResult read_detection_json(const std::filesystem::path& path);

// --- alignment-phase training -------------------------------------------------

struct AlignTrainConfig {
  EncoderConfig enc;
  int epochs = 300;
  double lr = 0.005;
  int batch = 5120;
  double mu_orth = 0.1;
  double lambda_temp = 30.0;
  double gamma = 1.0;
  NegStrategy neg_strategy = NegStrategy::InBatch;
  int n_negatives = 64;
  std::uint64_t seed = 0;
};

// Second-phase model: trains a fresh encoder on L_info + mu_o L_o over the
// train anchors and returns the final embedding table.
Matrix train_alignment_model(const KGPair& pair, const AnchorSplit& split,
                             const AlignTrainConfig& cfg, EncoderParams* out_params = nullptr);

}  // namespace lambda
