#pragma once

#include <filesystem>
#include <string>

#include "lambda/aligneval.hpp"
#include "lambda/ipule.hpp"

namespace lambda {

// One experiment = one config. Defaults follow the reference hyperparameters:
// d=128, 2 layers, 64 proxies, dropout 0.3, gamma=1, lambda=30, beta=1e-3,
// RMSprop lr 0.005, batch 5120.
struct ExperimentConfig {
  std::string data_dir;
  std::string out_dir;
  std::string detection_path;

  int dim = 128;
  int depth = 2;
  int n_proxy = 64;
  int clf_hidden = 0;
  double dropout = 0.3;
  double gamma = 1.0;
  double lambda_temp = 30.0;
  double beta = 1e-3;
  double lr = 0.005;
  int batch = 5120;
  int warmup_epochs = 10;
  int m_epochs = 5;
  int max_em_iters = 50;
  int align_epochs = 300;
  double tol_loss = 1e-4;
  double tol_prior = 1e-3;
  double tau_align = 0.05;
  double mu_orth = 0.1;
  int csls_k = 10;
  int n_negatives = 64;
  std::string neg_strategy = "in-batch";  // in-batch | uniform
  std::string metric = "csls";            // csls | cosine
  double anchor_ratio = 0.3;              // (0,1]; 1 trains detection on all anchors
  bool shared_relations = false;
  std::uint64_t seed = 0;

  void validate() const;  // throws std::invalid_argument
  std::string canonical() const;
  std::uint64_t hash() const { return fnv1a(canonical()); }

  IpuleConfig to_ipule() const;
  AlignTrainConfig to_align() const;
  SimMetric sim_metric() const;
};

void write_manifest(const ExperimentConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace lambda
