#include <filesystem>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "lambda/config.hpp"
#include "lambda/verify.hpp"

namespace fs = std::filesystem;
using namespace lambda;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitNotConverged = 2;
constexpr int kExitNotAlignable = 3;

void add_common_options(CLI::App* cmd, ExperimentConfig& cfg) {
  cmd->set_config("--config", "", "key=value config file; flags override");
  cmd->add_option("--seed", cfg.seed, "random seed (mandatory)")
      ->envname("LAMBDA_SEED")
      ->required();
  cmd->add_option("--dim", cfg.dim)->envname("LAMBDA_DIM");
  cmd->add_option("--depth", cfg.depth)->envname("LAMBDA_DEPTH");
  cmd->add_option("--n-proxy", cfg.n_proxy)->envname("LAMBDA_N_PROXY");
  cmd->add_option("--clf-hidden", cfg.clf_hidden)->envname("LAMBDA_CLF_HIDDEN");
  cmd->add_option("--dropout", cfg.dropout)->envname("LAMBDA_DROPOUT");
  cmd->add_option("--gamma", cfg.gamma)->envname("LAMBDA_GAMMA");
  cmd->add_option("--lambda", cfg.lambda_temp)->envname("LAMBDA_LAMBDA");
  cmd->add_option("--beta", cfg.beta)->envname("LAMBDA_BETA");
  cmd->add_option("--lr", cfg.lr)->envname("LAMBDA_LR");
  cmd->add_option("--batch", cfg.batch)->envname("LAMBDA_BATCH");
  cmd->add_option("--warmup-epochs", cfg.warmup_epochs)->envname("LAMBDA_WARMUP_EPOCHS");
  cmd->add_option("--m-epochs", cfg.m_epochs)->envname("LAMBDA_M_EPOCHS");
  cmd->add_option("--max-em-iters", cfg.max_em_iters)->envname("LAMBDA_MAX_EM_ITERS");
  cmd->add_option("--align-epochs", cfg.align_epochs)->envname("LAMBDA_ALIGN_EPOCHS");
  cmd->add_option("--tol-loss", cfg.tol_loss)->envname("LAMBDA_TOL_LOSS");
  cmd->add_option("--tol-prior", cfg.tol_prior)->envname("LAMBDA_TOL_PRIOR");
  cmd->add_option("--tau-align", cfg.tau_align)->envname("LAMBDA_TAU_ALIGN");
  cmd->add_option("--mu-orth", cfg.mu_orth)->envname("LAMBDA_MU_ORTH");
  cmd->add_option("--csls-k", cfg.csls_k)->envname("LAMBDA_CSLS_K");
  cmd->add_option("--n-negatives", cfg.n_negatives)->envname("LAMBDA_N_NEGATIVES");
  cmd->add_option("--neg-strategy", cfg.neg_strategy, "in-batch | uniform")
      ->envname("LAMBDA_NEG_STRATEGY");
  cmd->add_option("--metric", cfg.metric, "csls | cosine")->envname("LAMBDA_METRIC");
  cmd->add_option("--anchor-ratio", cfg.anchor_ratio, "train anchor fraction; 1 = all")
      ->envname("LAMBDA_ANCHOR_RATIO");
  cmd->add_flag("--shared-relations", cfg.shared_relations,
                "treat equal relation ids in both graphs as the same relation")
      ->envname("LAMBDA_SHARED_RELATIONS");
}

AnchorSplit make_split(const KGPair& pair, const ExperimentConfig& cfg) {
  if (cfg.anchor_ratio >= 1.0) {
    AnchorSplit split;
    split.train = pair.anchors;
    split.seed = cfg.seed;
    return split;
  }
  return split_anchors(pair, cfg.anchor_ratio, cfg.seed);
}

int cmd_detect(const ExperimentConfig& cfg) {
  cfg.validate();
  KGPair pair = load_kg_pair(cfg.data_dir);
  AnchorSplit split = make_split(pair, cfg);

  fs::create_directories(cfg.out_dir);
  write_manifest(cfg, cfg.out_dir);

  EncoderParams params;
  DetectionResult det = run_ipule(pair, split, cfg.to_ipule(), &params);
  write_detection_json(det, fs::path(cfg.out_dir) / "detection.json");
  write_history_csv(det.history, fs::path(cfg.out_dir) / "history.csv");
  save_checkpoint(params, fs::path(cfg.out_dir) / "detect.ckpt");

  std::cout << "pi_p_u=" << det.priors.pi_p_u << " pi_p=" << det.priors.pi_p
            << " alignable=" << (det.alignable ? "true" : "false")
            << " converged=" << (det.converged ? "true" : "false") << "\n";
  if (!det.alignable) return kExitNotAlignable;
  if (!det.converged) return kExitNotConverged;
  return kExitOk;
}

int cmd_align(const ExperimentConfig& cfg, bool force) {
  cfg.validate();
  KGPair pair = load_kg_pair(cfg.data_dir);
  AnchorSplit split = make_split(pair, cfg);

  fs::path det_path = cfg.detection_path.empty()
                          ? fs::path(cfg.out_dir) / "detection.json"
                          : fs::path(cfg.detection_path);
  DetectionResult det = read_detection_json(det_path);
  if (!det.alignable && !force) {
    std::cerr << "detection reports the pair as not alignable (use --force to override)\n";
    return kExitNotAlignable;
  }
  if (det.labels.empty()) {
    std::cerr << "detection report carries no per-entity labels\n";
    return kExitUsage;
  }

  fs::create_directories(cfg.out_dir);
  write_manifest(cfg, cfg.out_dir);

  EncoderParams params;
  Matrix hf = train_alignment_model(pair, split, cfg.to_align(), &params);
  save_checkpoint(params, fs::path(cfg.out_dir) / "align.ckpt");

  AlignmentResult aligned =
      align(hf, pair.source.n_entities, det.labels, cfg.sim_metric(), cfg.csls_k);
  write_pairs_csv(aligned, fs::path(cfg.out_dir) / "pairs.csv");

  MetricReport report =
      evaluate_pair(hf, pair, split, &det.labels, cfg.sim_metric(), cfg.csls_k);
  write_metrics_json(report, fs::path(cfg.out_dir) / "metrics.json");

  std::cout << "pairs=" << aligned.pairs.size();
  if (!report.relaxed_hits.empty()) std::cout << " relaxed_h@1=" << report.relaxed_hits.at(1);
  std::cout << " consolidated_f1=" << report.consolidated.f1 << "\n";
  return kExitOk;
}

// Pair-set precision/recall against a truth link file. The relaxed setting
// scores only predictions whose source is a truth source; the consolidated
// setting scores every predicted pair.
int cmd_eval(const std::string& pred_path, const std::string& truth_path,
             const std::string& setting, const std::string& out_dir) {
  if (setting != "relaxed" && setting != "consolidated") {
    std::cerr << "unknown setting: " << setting << "\n";
    return kExitUsage;
  }
  auto pred = read_pairs_csv(pred_path);

  std::vector<AnchorPair> truth;
  {
    std::ifstream in(truth_path);
    if (!in) throw std::runtime_error("cannot read " + truth_path);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::istringstream ss(line);
      int s, t;
      if (!(ss >> s >> t)) throw std::runtime_error("bad truth line: " + line);
      truth.push_back({s, t});
    }
  }
  std::set<std::pair<int, int>> truth_set(truth.begin(), truth.end());
  std::set<int> truth_sources;
  for (const auto& [s, t] : truth) truth_sources.insert(s);

  std::size_t scored = 0, correct = 0;
  for (const auto& [s, t, score] : pred) {
    if (setting == "relaxed" && !truth_sources.count(s)) continue;
    ++scored;
    if (truth_set.count({s, t})) ++correct;
  }
  const double precision = scored ? static_cast<double>(correct) / scored : 0.0;
  const double recall =
      truth.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(truth.size());
  const double f1 =
      precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;

  nlohmann::json j = {{"setting", setting},   {"n_pred", pred.size()},
                      {"n_scored", scored},    {"n_truth", truth.size()},
                      {"precision", precision}, {"recall", recall},
                      {"f1", f1}};
  std::cout << j.dump(2) << "\n";
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    std::ofstream out(fs::path(out_dir) / "metrics.json", std::ios::binary);
    out << j.dump(2) << '\n';
  }
  return kExitOk;
}

int cmd_synth(const SyntheticConfig& scfg, const std::string& out_dir) {
  KGPair pair = gen_synthetic_pair(scfg);
  save_kg_pair(pair, out_dir);
  std::cout << "src entities=" << pair.source.n_entities
            << " tgt entities=" << pair.target.n_entities << " anchors=" << pair.anchors.size()
            << " triples=" << pair.source.triples.size() + pair.target.triples.size() << "\n";
  return kExitOk;
}

int cmd_verify(const std::string& suite, std::uint64_t seed) {
  std::vector<CheckResult> results;
  if (suite == "lemmas") {
    results = verify_lemma_identities(seed);
  } else if (suite == "pu") {
    results = verify_pu_oracles(seed);
  } else if (suite == "gradients") {
    results = verify_gradients(seed);
  } else if (suite == "all") {
    results = verify_all(seed);
  } else {
    std::cerr << "unknown suite: " << suite << " (expected lemmas|pu|gradients|all)\n";
    return kExitUsage;
  }
  bool all_pass = true;
  for (const auto& r : results) {
    nlohmann::json j = {{"check", r.name}, {"pass", r.pass}, {"detail", r.detail}};
    std::cout << j.dump() << "\n";
    all_pass = all_pass && r.pass;
  }
  return all_pass ? kExitOk : kExitNotConverged;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lambda: dangling-aware entity alignment over paired knowledge graphs"};
  app.require_subcommand(1);

  ExperimentConfig cfg;
  bool force = false;

  auto* detect = app.add_subcommand("detect", "dangling detection with iterative PU learning");
  detect->add_option("--data", cfg.data_dir, "dataset directory")->required();
  detect->add_option("--out", cfg.out_dir, "output directory")->required();
  add_common_options(detect, cfg);

  auto* align_cmd = app.add_subcommand("align", "train the alignment model and pair entities");
  align_cmd->add_option("--data", cfg.data_dir, "dataset directory")->required();
  align_cmd->add_option("--out", cfg.out_dir, "output directory")->required();
  align_cmd->add_option("--detection", cfg.detection_path,
                        "detection.json from a detect run (defaults to <out>/detection.json)");
  align_cmd->add_flag("--force", force, "align even if judged not alignable");
  add_common_options(align_cmd, cfg);

  std::string pred_path, truth_path, setting = "consolidated", eval_out;
  auto* eval_cmd = app.add_subcommand("eval", "score a pairs.csv against truth links");
  eval_cmd->add_option("--pred", pred_path, "pairs.csv")->required();
  eval_cmd->add_option("--truth", truth_path, "tab-separated truth links")->required();
  eval_cmd->add_option("--setting", setting, "relaxed | consolidated");
  eval_cmd->add_option("--out", eval_out, "optional output directory");

  SyntheticConfig scfg;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "generate a labeled synthetic KG pair");
  synth->add_option("--out", synth_out, "output dataset directory")->required();
  synth->add_option("--n-match", scfg.n_match);
  synth->add_option("--n-dang-src", scfg.n_dang_src);
  synth->add_option("--n-dang-tgt", scfg.n_dang_tgt);
  synth->add_option("--n-relations", scfg.n_relations);
  synth->add_option("--communities", scfg.community_count);
  synth->add_option("--intra-edge-prob", scfg.intra_edge_prob);
  synth->add_option("--cross-noise", scfg.cross_noise);
  synth->add_option("--dangling-degree", scfg.dangling_degree);
  synth->add_option("--seed", scfg.seed)->required();

  std::string suite = "all";
  std::uint64_t verify_seed = 7;
  auto* verify = app.add_subcommand("verify", "run the oracle acceptance checks");
  verify->add_option("suite", suite, "lemmas | pu | gradients | all");
  verify->add_option("--seed", verify_seed);

  CLI11_PARSE(app, argc, argv);

  try {
    if (detect->parsed()) return cmd_detect(cfg);
    if (align_cmd->parsed()) return cmd_align(cfg, force);
    if (eval_cmd->parsed()) return cmd_eval(pred_path, truth_path, setting, eval_out);
    if (synth->parsed()) return cmd_synth(scfg, synth_out);
    if (verify->parsed()) return cmd_verify(suite, verify_seed);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
