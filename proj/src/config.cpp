#include "lambda/config.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "lambda/kernels.hpp"

namespace lambda {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument("config: " + msg);
}

}  // namespace

void ExperimentConfig::validate() const {
  require(dim >= 1 && dim <= 4096, "dim outside [1, 4096]");
  require(depth >= 0 && depth <= 8, "depth outside [0, 8]");
  require(n_proxy >= 1, "n_proxy must be at least 1");
  require(clf_hidden >= 0, "clf_hidden must be non-negative");
  require(dropout >= 0.0 && dropout < 1.0, "dropout outside [0, 1)");
  require(gamma >= 0.0, "gamma must be non-negative");
  require(lambda_temp > 0.0, "lambda must be positive");
  require(beta >= 0.0 && beta <= 1.0, "beta outside [0, 1]");
  require(lr > 0.0, "lr must be positive");
  require(batch >= 1, "batch must be positive");
  require(warmup_epochs >= 0, "warmup_epochs must be non-negative");
  require(m_epochs >= 1, "m_epochs must be positive");
  require(max_em_iters >= 0, "max_em_iters must be non-negative");
  require(align_epochs >= 1, "align_epochs must be positive");
  require(tol_loss > 0.0 && tol_prior > 0.0, "tolerances must be positive");
  require(tau_align >= 0.0 && tau_align <= 1.0, "tau_align outside [0, 1]");
  require(mu_orth >= 0.0, "mu_orth must be non-negative");
  require(csls_k >= 1, "csls_k must be at least 1");
  require(n_negatives >= 1, "n_negatives must be at least 1");
  require(neg_strategy == "in-batch" || neg_strategy == "uniform",
          "neg_strategy must be in-batch or uniform");
  require(metric == "csls" || metric == "cosine", "metric must be csls or cosine");
  require(anchor_ratio > 0.0 && anchor_ratio <= 1.0, "anchor_ratio outside (0, 1]");
}

std::string ExperimentConfig::canonical() const {
  std::ostringstream ss;
  ss.precision(17);
  ss << "align_epochs=" << align_epochs << "\nanchor_ratio=" << anchor_ratio
     << "\nbatch=" << batch << "\nbeta=" << beta << "\nclf_hidden=" << clf_hidden
     << "\ncsls_k=" << csls_k << "\ndata=" << data_dir << "\ndepth=" << depth
     << "\ndim=" << dim << "\ndropout=" << dropout << "\ngamma=" << gamma << "\nlr=" << lr
     << "\nlambda=" << lambda_temp << "\nm_epochs=" << m_epochs
     << "\nmax_em_iters=" << max_em_iters << "\nmetric=" << metric << "\nmu_orth=" << mu_orth
     << "\nn_negatives=" << n_negatives << "\nn_proxy=" << n_proxy
     << "\nneg_strategy=" << neg_strategy << "\nseed=" << seed
     << "\nshared_relations=" << (shared_relations ? 1 : 0) << "\ntau_align=" << tau_align
     << "\ntol_loss=" << tol_loss << "\ntol_prior=" << tol_prior
     << "\nwarmup_epochs=" << warmup_epochs << "\n";
  return ss.str();
}

IpuleConfig ExperimentConfig::to_ipule() const {
  IpuleConfig cfg;
  cfg.enc.dim = dim;
  cfg.enc.depth = depth;
  cfg.enc.n_proxy = n_proxy;
  cfg.enc.dropout = dropout;
  cfg.enc.clf_hidden = clf_hidden;
  cfg.enc.shared_relations = shared_relations;
  cfg.warmup_epochs = warmup_epochs;
  cfg.beta = beta;
  cfg.lr = lr;
  cfg.batch = batch;
  cfg.max_em_iters = max_em_iters;
  cfg.m_epochs = m_epochs;
  cfg.tol_loss = tol_loss;
  cfg.tol_prior = tol_prior;
  cfg.tau_align = tau_align;
  cfg.mu_orth = mu_orth;
  cfg.lambda_temp = lambda_temp;
  cfg.gamma = gamma;
  cfg.neg_strategy = neg_strategy == "uniform" ? NegStrategy::Uniform : NegStrategy::InBatch;
  cfg.n_negatives = n_negatives;
  cfg.seed = seed;
  return cfg;
}

AlignTrainConfig ExperimentConfig::to_align() const {
  AlignTrainConfig cfg;
  cfg.enc.dim = dim;
  cfg.enc.depth = depth;
  cfg.enc.n_proxy = n_proxy;
  cfg.enc.dropout = dropout;
  cfg.enc.clf_hidden = clf_hidden;
  cfg.enc.shared_relations = shared_relations;
  cfg.epochs = align_epochs;
  cfg.lr = lr;
  cfg.batch = batch;
  cfg.mu_orth = mu_orth;
  cfg.lambda_temp = lambda_temp;
  cfg.gamma = gamma;
  cfg.neg_strategy = neg_strategy == "uniform" ? NegStrategy::Uniform : NegStrategy::InBatch;
  cfg.n_negatives = n_negatives;
  cfg.seed = seed;
  return cfg;
}

SimMetric ExperimentConfig::sim_metric() const {
  return metric == "cosine" ? SimMetric::Cosine : SimMetric::Csls;
}

void write_manifest(const ExperimentConfig& cfg, const std::filesystem::path& out_dir) {
  nlohmann::json j;
  j["config_hash"] = cfg.hash();
  j["seed"] = cfg.seed;
  j["kernel_backend"] = kern::active_backend();
  j["version"] = 1;
  nlohmann::json conf;
  std::istringstream ss(cfg.canonical());
  std::string line;
  while (std::getline(ss, line)) {
    auto eq = line.find('=');
    if (eq != std::string::npos) conf[line.substr(0, eq)] = line.substr(eq + 1);
  }
  j["config"] = std::move(conf);
  std::ofstream out(out_dir / "manifest.json", std::ios::binary);
  if (!out) throw std::runtime_error("cannot write manifest.json");
  out << j.dump(2) << '\n';
}

}  // namespace lambda
