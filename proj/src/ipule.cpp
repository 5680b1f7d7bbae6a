#include "lambda/ipule.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <unordered_set>

#include <json.hpp>

#include "lambda/aligneval.hpp"
#include "lambda/kernels.hpp"

namespace lambda {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

std::vector<int> union_anchor_entities(const std::vector<AnchorPair>& anchors, int n_src) {
  std::vector<int> ids;
  ids.reserve(anchors.size() * 2);
  for (const auto& [s, t] : anchors) {
    ids.push_back(s);
    ids.push_back(n_src + t);
  }
  return ids;
}

// Contrastive items over the train anchors, both query directions. In-batch
// negatives come from the other anchors of the same chunk; uniform negatives
// from the whole union vocabulary.
ContrastiveBatch build_contrastive_batch(const std::vector<AnchorPair>& anchors, int n_src,
                                         int n_entities, int chunk, int n_negatives,
                                         NegStrategy strategy, double lambda_temp, double gamma,
                                         std::uint64_t seed) {
  ContrastiveBatch batch;
  batch.lambda_temp = lambda_temp;
  batch.gamma = gamma;

  std::vector<AnchorPair> order = anchors;
  auto rng = make_rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<int> pool;
  if (strategy == NegStrategy::Uniform) {
    pool.resize(n_entities);
    for (int i = 0; i < n_entities; ++i) pool[i] = i;
  }

  std::uint64_t item_seed = seed;
  for (std::size_t begin = 0; begin < order.size(); begin += chunk) {
    const std::size_t end = std::min(order.size(), begin + chunk);
    std::vector<int> members;
    for (std::size_t a = begin; a < end; ++a) {
      members.push_back(order[a].first);
      members.push_back(n_src + order[a].second);
    }
    for (std::size_t a = begin; a < end; ++a) {
      const int q_src = order[a].first;
      const int q_tgt = n_src + order[a].second;
      std::span<const int> neg_pool =
          strategy == NegStrategy::InBatch ? std::span<const int>(members)
                                           : std::span<const int>(pool);
      auto negs = sample_negatives({q_src, q_tgt}, neg_pool, n_negatives, strategy,
                                   ++item_seed);
      batch.items.push_back({q_src, q_tgt, negs});
      batch.items.push_back({q_tgt, q_src, std::move(negs)});
    }
  }
  return batch;
}

struct EpochLosses {
  double info = 0.0;
  double pu = 0.0;
  double orth = 0.0;
};

// Training gradient for the PU objective. While the clamped term is active
// this is the plain gradient; once R_u^- - pi_p_u R_p^- drops below zero the
// classifier has overfitted the labeled positives, so descend on the negated
// inner term instead to push it back up (the usual non-negative-risk
// training step). The reported loss stays the clamped objective.
double pu_train_grad(const std::vector<double>& probs, const std::vector<int>& pos_ids,
                     const std::vector<int>& unl_ids, const ClassPriors& priors,
                     bool nn_defit, double defit_slack, std::vector<double>& d_prob) {
  const RiskTerms terms = risk_terms(probs, pos_ids, unl_ids);
  const double loss = pu_loss(terms, priors);
  const double inner = terms.r_u_minus - priors.pi_p_u * terms.r_p_minus;
  const double alpha = priors.pi_n_u / priors.pi_n;
  const double np = static_cast<double>(pos_ids.size());
  const double nu = static_cast<double>(unl_ids.size());
  constexpr double kClip = 1e-12;
  auto interior = [](double p) { return p > kClip && p < 1.0 - kClip; };

  if (inner >= 0.0) {
    for (int i : pos_ids) {
      const double p = probs[i];
      if (!interior(p)) continue;
      d_prob[i] += -alpha * priors.pi_p / (np * p) - priors.pi_p_u / (np * (1.0 - p));
    }
    for (int i : unl_ids) {
      const double p = probs[i];
      if (!interior(p)) continue;
      d_prob[i] += 1.0 / (nu * (1.0 - p));
    }
  } else if (nn_defit && inner < -defit_slack) {
    // d/dp of (pi_p_u R_p^- - R_u^-)
    for (int i : pos_ids) {
      const double p = probs[i];
      if (!interior(p)) continue;
      d_prob[i] += priors.pi_p_u / (np * (1.0 - p));
    }
    for (int i : unl_ids) {
      const double p = probs[i];
      if (!interior(p)) continue;
      d_prob[i] += -1.0 / (nu * (1.0 - p));
    }
  } else {
    // Clamp shut: only the scaled positive risk moves.
    for (int i : pos_ids) {
      const double p = probs[i];
      if (!interior(p)) continue;
      d_prob[i] += -alpha * priors.pi_p / (np * p);
    }
  }
  return loss;
}

// One full-graph gradient step. with_info toggles the contrastive + orthogonal
// parts (warm-up and alignment training) versus pure L_pu (M-steps).
EpochLosses train_epoch(const EncodeGraph& graph, EncoderParams& params, EncoderGrads& grads,
                        RmsProp& opt, const std::vector<AnchorPair>& train_anchors,
                        const std::vector<int>& pos_ids, const std::vector<int>& unl_ids,
                        const ClassPriors& priors, const IpuleConfig& cfg, bool with_info,
                        bool with_pu, double info_weight, double pu_weight,
                        std::mt19937_64& rng) {
  ForwardCache cache;
  encoder_forward(params, graph, cache, /*training=*/true, cfg.enc.dropout, &rng);
  grads.reset();
  Matrix d_hf(cache.hf.rows(), cache.hf.cols());

  EpochLosses out;
  if (with_pu) {
    // Head-input dropout regularizes the direct path from per-entity
    // embeddings into the classifier.
    const double hd = cfg.head_dropout < 0.0 ? cfg.enc.dropout : cfg.head_dropout;
    Matrix hf_head = cache.hf;
    Matrix head_mask;
    if (hd > 0.0) {
      head_mask = Matrix(hf_head.rows(), hf_head.cols());
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      const double keep = 1.0 - hd;
      for (std::size_t t = 0; t < head_mask.size(); ++t) {
        head_mask.data()[t] = unit(rng) < keep ? 1.0 / keep : 0.0;
        hf_head.data()[t] *= head_mask.data()[t];
      }
    }
    HeadCache head;
    head_forward(params, hf_head, head);
    std::vector<double> probs(graph.n_entities);
    for (int i = 0; i < graph.n_entities; ++i) probs[i] = head.prob(i, 0);
    std::vector<double> d_prob(graph.n_entities, 0.0);
    out.pu = pu_train_grad(probs, pos_ids, unl_ids, priors, cfg.nn_defit, cfg.defit_slack,
                           d_prob);
    if (pu_weight != 1.0) kern::scale(pu_weight, std::span<double>(d_prob));
    if (hd > 0.0) {
      Matrix d_hf_head(d_hf.rows(), d_hf.cols());
      head_backward(params, hf_head, head, d_prob, grads, d_hf_head);
      for (std::size_t t = 0; t < d_hf.size(); ++t)
        d_hf.data()[t] += d_hf_head.data()[t] * head_mask.data()[t];
    } else {
      head_backward(params, hf_head, head, d_prob, grads, d_hf);
    }
  }

  if (with_info) {
    ContrastiveBatch batch = build_contrastive_batch(
        train_anchors, graph.n_src, graph.n_entities, cfg.batch, cfg.n_negatives,
        cfg.neg_strategy, cfg.lambda_temp, cfg.gamma, rng());
    Matrix d_info(cache.hf.rows(), cache.hf.cols());
    out.info = spectral_contrastive_loss_grad(batch, cache.hf, d_info);
    for (std::size_t i = 0; i < d_hf.size(); ++i)
      d_hf.data()[i] += info_weight * d_info.data()[i];
    out.orth = orth_penalty(params.rel_proj);
  }

  encoder_backward(params, graph, cache, d_hf, grads);
  if (with_info && cfg.mu_orth > 0.0) orth_penalty_grad(params.rel_proj, cfg.mu_orth, grads.rel_proj);
  if (cfg.weight_decay > 0.0) {
    kern::axpy(cfg.weight_decay, std::span<const double>(params.ent_emb.data(), params.ent_emb.size()),
               std::span<double>(grads.ent_emb.data(), grads.ent_emb.size()));
    kern::axpy(cfg.weight_decay, std::span<const double>(params.clf_w1.data(), params.clf_w1.size()),
               std::span<double>(grads.clf_w1.data(), grads.clf_w1.size()));
    kern::axpy(cfg.weight_decay, std::span<const double>(params.clf_w2.data(), params.clf_w2.size()),
               std::span<double>(grads.clf_w2.data(), grads.clf_w2.size()));
  }
  opt.step(params, grads);
  return out;
}

std::vector<double> inference_probs(const EncodeGraph& graph, const EncoderParams& params) {
  ForwardCache cache;
  encoder_forward(params, graph, cache);
  HeadCache head;
  head_forward(params, cache.hf, head);
  std::vector<double> probs(graph.n_entities);
  for (int i = 0; i < graph.n_entities; ++i) probs[i] = head.prob(i, 0);
  return probs;
}

}  // namespace

ClassPriors e_step(const std::vector<double>& probs_unlabeled, std::int64_t n_pos,
                   std::int64_t n_unlabeled) {
  require(static_cast<std::int64_t>(probs_unlabeled.size()) == n_unlabeled,
          "e_step: probability count does not match n_unlabeled");
  for (double p : probs_unlabeled)
    require(p >= 0.0 && p <= 1.0, "e_step: probability outside [0,1]");
  std::int64_t above = 0;
  for (double p : probs_unlabeled)
    if (p > 0.5) ++above;
  const double pi_p_u =
      n_unlabeled > 0 ? static_cast<double>(above) / static_cast<double>(n_unlabeled) : 0.0;
  return ClassPriors::from_pi_p_u(pi_p_u, n_pos, n_unlabeled);
}

bool alignability(const ClassPriors& priors, double tau_align) {
  priors.validate();
  return priors.pi_p_u >= tau_align;
}

DetectionResult run_ipule(const KGPair& pair, const AnchorSplit& split, const IpuleConfig& cfg,
                          EncoderParams* out_params) {
  require(!split.train.empty(), "run_ipule: empty train anchor set");
  const EncodeGraph graph = EncodeGraph::build(pair, cfg.enc.shared_relations);

  std::vector<int> pos_ids = union_anchor_entities(split.train, graph.n_src);
  std::unordered_set<int> pos_set(pos_ids.begin(), pos_ids.end());
  std::vector<int> unl_ids;
  for (int i = 0; i < graph.n_entities; ++i)
    if (!pos_set.count(i)) unl_ids.push_back(i);
  require(!unl_ids.empty(), "run_ipule: no unlabeled entities");

  EncoderParams params =
      EncoderParams::init(cfg.enc, graph.n_entities, graph.n_relations, cfg.seed);
  EncoderGrads grads = EncoderGrads::zeros_like(params);
  RmsProp opt(cfg.lr);
  auto rng = make_rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);

  DetectionResult result;
  result.n_src = graph.n_src;
  ClassPriors priors = ClassPriors::init_from_counts(
      static_cast<std::int64_t>(pos_ids.size()), static_cast<std::int64_t>(unl_ids.size()));

  int step = 0;
  auto record = [&](bool warmup, double loss) {
    result.history.push_back({step++, warmup, loss, priors.pi_p, priors.pi_p_u});
  };
  auto check_finite = [](double loss) {
    if (!std::isfinite(loss))
      throw std::runtime_error("run_ipule: non-finite loss, aborting (loss=" +
                               std::to_string(loss) + ")");
  };

  // Warm-up: priors stay at the cold-start values.
  for (int epoch = 0; epoch < cfg.warmup_epochs; ++epoch) {
    EpochLosses el = train_epoch(graph, params, grads, opt, split.train, pos_ids, unl_ids,
                                 priors, cfg, /*with_info=*/true, /*with_pu=*/true,
                                 cfg.beta, 1.0 - cfg.beta, rng);
    double loss = combined_warmup_loss(el.info, el.pu, el.orth, cfg.beta, cfg.mu_orth);
    check_finite(loss);
    record(true, loss);
  }

  double l = std::numeric_limits<double>::infinity();
  double prev_pi_p = priors.pi_p;
  int streak = 0;
  result.converged = cfg.max_em_iters == 0;

  for (int it = 0; it < cfg.max_em_iters; ++it) {
    std::vector<double> probs = inference_probs(graph, params);
    std::vector<double> probs_unl(unl_ids.size());
    for (std::size_t i = 0; i < unl_ids.size(); ++i) probs_unl[i] = probs[unl_ids[i]];
    priors = e_step(probs_unl, static_cast<std::int64_t>(pos_ids.size()),
                    static_cast<std::int64_t>(unl_ids.size()));
    if (priors.pi_n <= 0.0 || priors.pi_n_u <= 0.0) {
      // Degenerate estimate (every unlabeled entity classified positive);
      // the PU loss is undefined here, so stop and report non-convergence.
      result.converged = false;
      break;
    }

    const double l_prev = l;
    RiskTerms terms = risk_terms(probs, pos_ids, unl_ids);
    l = pu_loss(terms, priors);
    check_finite(l);
    record(false, l);

    for (int epoch = 0; epoch < cfg.m_epochs; ++epoch) {
      EpochLosses el = train_epoch(graph, params, grads, opt, split.train, pos_ids, unl_ids,
                                   priors, cfg, /*with_info=*/false, /*with_pu=*/true, 0.0,
                                   1.0, rng);
      check_finite(el.pu);
    }

    const bool loss_conv =
        std::isfinite(l_prev) && std::abs(l - l_prev) < cfg.tol_loss * std::max(1.0, std::abs(l_prev));
    const bool prior_conv = it > 0 && std::abs(priors.pi_p - prev_pi_p) < cfg.tol_prior;
    prev_pi_p = priors.pi_p;
    streak = (loss_conv || prior_conv) ? streak + 1 : 0;
    if (streak >= 3) {
      result.converged = true;
      break;
    }
  }

  std::vector<double> probs = inference_probs(graph, params);
  result.prob_matchable = probs;
  result.labels.resize(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) result.labels[i] = probs[i] > 0.5 ? 1 : 0;
  result.priors = priors;
  result.alignable = alignability(priors, cfg.tau_align);
  if (out_params) *out_params = std::move(params);
  return result;
}

std::vector<AnchorPair> augment_anchors(const Matrix& hf, int n_src,
                                        const std::vector<std::uint8_t>& pred_matchable,
                                        const std::vector<AnchorPair>& current_anchors,
                                        bool use_csls, int csls_k) {
  const int n_tgt = static_cast<int>(hf.rows()) - n_src;
  std::unordered_set<int> anchored_src, anchored_tgt;
  for (const auto& [s, t] : current_anchors) {
    anchored_src.insert(s);
    anchored_tgt.insert(t);
  }
  std::vector<int> src_ids, tgt_ids;
  for (int s = 0; s < n_src; ++s)
    if (pred_matchable[s] && !anchored_src.count(s)) src_ids.push_back(s);
  for (int t = 0; t < n_tgt; ++t)
    if (pred_matchable[n_src + t] && !anchored_tgt.count(t)) tgt_ids.push_back(t);
  if (src_ids.empty() || tgt_ids.empty()) return {};

  Matrix src_emb(src_ids.size(), hf.cols()), tgt_emb(tgt_ids.size(), hf.cols());
  for (std::size_t i = 0; i < src_ids.size(); ++i)
    std::copy(hf.row(src_ids[i]).begin(), hf.row(src_ids[i]).end(), src_emb.row(i).begin());
  for (std::size_t i = 0; i < tgt_ids.size(); ++i)
    std::copy(hf.row(n_src + tgt_ids[i]).begin(), hf.row(n_src + tgt_ids[i]).end(),
              tgt_emb.row(i).begin());

  Matrix sim = use_csls ? csls_matrix(src_emb, tgt_emb, csls_k)
                        : cosine_matrix(src_emb, tgt_emb);
  std::vector<AnchorPair> added;
  for (const auto& [i, j] : mutual_nn_pairs(sim))
    added.push_back({src_ids[i], tgt_ids[j]});
  return added;
}

Matrix train_alignment_model(const KGPair& pair, const AnchorSplit& split,
                             const AlignTrainConfig& cfg, EncoderParams* out_params) {
  require(!split.train.empty(), "train_alignment_model: empty train anchor set");
  const EncodeGraph graph = EncodeGraph::build(pair, cfg.enc.shared_relations);
  EncoderParams params =
      EncoderParams::init(cfg.enc, graph.n_entities, graph.n_relations, cfg.seed);
  EncoderGrads grads = EncoderGrads::zeros_like(params);
  RmsProp opt(cfg.lr);
  auto rng = make_rng(cfg.seed ^ 0xd1b54a32d192ed03ull);

  IpuleConfig shim;  // reuse the epoch driver; only the info path is active
  shim.enc = cfg.enc;
  shim.batch = cfg.batch;
  shim.n_negatives = cfg.n_negatives;
  shim.neg_strategy = cfg.neg_strategy;
  shim.lambda_temp = cfg.lambda_temp;
  shim.gamma = cfg.gamma;
  shim.mu_orth = cfg.mu_orth;
  shim.weight_decay = 0.0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochLosses el = train_epoch(graph, params, grads, opt, split.train, {}, {}, ClassPriors{},
                                 shim, /*with_info=*/true, /*with_pu=*/false, 1.0, 0.0, rng);
    if (!std::isfinite(el.info))
      throw std::runtime_error("train_alignment_model: non-finite loss");
  }

  ForwardCache cache;
  encoder_forward(params, graph, cache);
  if (out_params) *out_params = std::move(params);
  return cache.hf;
}

// --- reports -------------------------------------------------------------------

void write_detection_json(const DetectionResult& result, const std::filesystem::path& path,
                          bool include_probabilities) {
  nlohmann::json j;
  j["n_src"] = result.n_src;
  j["alignable"] = result.alignable;
  j["converged"] = result.converged;
  j["priors"] = {{"pi_p", result.priors.pi_p},       {"pi_n", result.priors.pi_n},
                 {"pi_p_tr", result.priors.pi_p_tr}, {"pi_p_u", result.priors.pi_p_u},
                 {"pi_n_u", result.priors.pi_n_u},   {"alpha", result.priors.alpha}};
  nlohmann::json hist = nlohmann::json::array();
  for (const auto& row : result.history)
    hist.push_back({{"step", row.step},
                    {"phase", row.warmup ? "warmup" : "em"},
                    {"loss", row.loss},
                    {"pi_p", row.pi_p},
                    {"pi_p_u", row.pi_p_u}});
  j["history"] = std::move(hist);
  if (include_probabilities) {
    j["prob_matchable"] = result.prob_matchable;
    nlohmann::json labels = nlohmann::json::array();
    for (auto l : result.labels) labels.push_back(static_cast<int>(l));
    j["labels"] = std::move(labels);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void write_history_csv(const std::vector<HistoryRow>& history,
                       const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "iteration,phase,loss,pi_p,pi_p_u\n";
  out.precision(17);
  for (const auto& row : history)
    out << row.step << ',' << (row.warmup ? "warmup" : "em") << ',' << row.loss << ','
        << row.pi_p << ',' << row.pi_p_u << '\n';
}

DetectionResult read_detection_json(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  nlohmann::json j;
  in >> j;
  DetectionResult r;
  r.n_src = j.at("n_src").get<int>();
  r.alignable = j.at("alignable").get<bool>();
  r.converged = j.at("converged").get<bool>();
  const auto& pr = j.at("priors");
  r.priors.pi_p = pr.at("pi_p").get<double>();
  r.priors.pi_n = pr.at("pi_n").get<double>();
  r.priors.pi_p_tr = pr.at("pi_p_tr").get<double>();
  r.priors.pi_p_u = pr.at("pi_p_u").get<double>();
  r.priors.pi_n_u = pr.at("pi_n_u").get<double>();
  r.priors.alpha = pr.at("alpha").get<double>();
  if (j.contains("history")) {
    for (const auto& row : j.at("history"))
      r.history.push_back({row.at("step").get<int>(), row.at("phase") == "warmup",
                           row.at("loss").get<double>(), row.at("pi_p").get<double>(),
                           row.at("pi_p_u").get<double>()});
  }
  if (j.contains("prob_matchable")) {
    r.prob_matchable = j.at("prob_matchable").get<std::vector<double>>();
    r.labels.resize(r.prob_matchable.size());
    for (std::size_t i = 0; i < r.prob_matchable.size(); ++i)
      r.labels[i] = r.prob_matchable[i] > 0.5 ? 1 : 0;
  }
  return r;
}

}  // namespace lambda
