#include "lambda/aligneval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

namespace lambda {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

// Plain left-to-right accumulation; the brute-force oracles use the same
// arithmetic, so agreement is exact rather than within a tolerance.
double plain_dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

std::vector<double> row_norms(const Matrix& m) {
  std::vector<double> out(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) out[i] = std::sqrt(plain_dot(m.row(i), m.row(i)));
  return out;
}

double topk_mean(std::vector<double> vals, int k) {
  std::sort(vals.begin(), vals.end(), std::greater<>());
  double acc = 0.0;
  for (int i = 0; i < k; ++i) acc += vals[i];
  return acc / static_cast<double>(k);
}

}  // namespace

Matrix cosine_matrix(const Matrix& src_emb, const Matrix& tgt_emb) {
  require(src_emb.cols() == tgt_emb.cols(), "cosine_matrix: width mismatch");
  const auto sn = row_norms(src_emb);
  const auto tn = row_norms(tgt_emb);
  Matrix out(src_emb.rows(), tgt_emb.rows());
  for (std::size_t i = 0; i < src_emb.rows(); ++i)
    for (std::size_t j = 0; j < tgt_emb.rows(); ++j)
      out(i, j) = (sn[i] > 0.0 && tn[j] > 0.0)
                      ? plain_dot(src_emb.row(i), tgt_emb.row(j)) / (sn[i] * tn[j])
                      : 0.0;
  return out;
}

Matrix csls_matrix(const Matrix& src_emb, const Matrix& tgt_emb, int k) {
  require(k >= 1, "csls_matrix: k must be at least 1");
  require(src_emb.rows() > 0 && tgt_emb.rows() > 0, "csls_matrix: empty side");
  const int max_k = static_cast<int>(std::min(src_emb.rows(), tgt_emb.rows()));
  if (k > max_k) {
    std::cerr << "csls_matrix: k=" << k << " exceeds side size, clipping to " << max_k
              << "\n";
    k = max_k;
  }
  const Matrix cos = cosine_matrix(src_emb, tgt_emb);

  std::vector<double> rt(src_emb.rows());
  for (std::size_t i = 0; i < src_emb.rows(); ++i) {
    std::vector<double> row(cos.row(i).begin(), cos.row(i).end());
    rt[i] = topk_mean(std::move(row), k);
  }
  std::vector<double> rs(tgt_emb.rows());
  for (std::size_t j = 0; j < tgt_emb.rows(); ++j) {
    std::vector<double> col(cos.rows());
    for (std::size_t i = 0; i < cos.rows(); ++i) col[i] = cos(i, j);
    rs[j] = topk_mean(std::move(col), k);
  }

  Matrix out(cos.rows(), cos.cols());
  for (std::size_t i = 0; i < cos.rows(); ++i)
    for (std::size_t j = 0; j < cos.cols(); ++j) out(i, j) = 2.0 * cos(i, j) - rt[i] - rs[j];
  return out;
}

std::vector<std::pair<int, int>> mutual_nn_pairs(const Matrix& sim) {
  const std::size_t rows = sim.rows(), cols = sim.cols();
  std::vector<std::pair<int, int>> out;
  if (rows == 0 || cols == 0) return out;

  std::vector<int> row_arg(rows, 0);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 1; j < cols; ++j)
      if (sim(i, j) > sim(i, row_arg[i])) row_arg[i] = static_cast<int>(j);
  }
  std::vector<int> col_arg(cols, 0);
  for (std::size_t j = 0; j < cols; ++j) {
    for (std::size_t i = 1; i < rows; ++i)
      if (sim(i, j) > sim(col_arg[j], j)) col_arg[j] = static_cast<int>(i);
  }
  for (std::size_t i = 0; i < rows; ++i)
    if (col_arg[row_arg[i]] == static_cast<int>(i))
      out.push_back({static_cast<int>(i), row_arg[i]});
  return out;
}

AlignmentResult align(const Matrix& hf, int n_src,
                      const std::vector<std::uint8_t>& pred_matchable, SimMetric metric,
                      int csls_k) {
  require(pred_matchable.size() == hf.rows(), "align: mask size mismatch");
  AlignmentResult result;
  result.metric = metric;
  const int n_tgt = static_cast<int>(hf.rows()) - n_src;
  for (int s = 0; s < n_src; ++s)
    if (pred_matchable[s]) result.src_ids.push_back(s);
  for (int t = 0; t < n_tgt; ++t)
    if (pred_matchable[n_src + t]) result.tgt_ids.push_back(t);
  if (result.src_ids.empty() || result.tgt_ids.empty()) {
    result.empty_side = true;
    return result;
  }

  Matrix src_emb(result.src_ids.size(), hf.cols());
  Matrix tgt_emb(result.tgt_ids.size(), hf.cols());
  for (std::size_t i = 0; i < result.src_ids.size(); ++i)
    std::copy(hf.row(result.src_ids[i]).begin(), hf.row(result.src_ids[i]).end(),
              src_emb.row(i).begin());
  for (std::size_t j = 0; j < result.tgt_ids.size(); ++j)
    std::copy(hf.row(n_src + result.tgt_ids[j]).begin(),
              hf.row(n_src + result.tgt_ids[j]).end(), tgt_emb.row(j).begin());

  result.sim = metric == SimMetric::Csls ? csls_matrix(src_emb, tgt_emb, csls_k)
                                         : cosine_matrix(src_emb, tgt_emb);
  for (const auto& [i, j] : mutual_nn_pairs(result.sim))
    result.pairs.push_back({result.src_ids[i], result.tgt_ids[j], result.sim(i, j)});
  return result;
}

double hits_at_k(const std::map<int, std::vector<int>>& rankings,
                 const std::vector<AnchorPair>& truth, int k) {
  require(!truth.empty(), "hits_at_k: empty truth set");
  require(k >= 1, "hits_at_k: k must be at least 1");
  std::size_t hits = 0;
  for (const auto& [s, t] : truth) {
    auto it = rankings.find(s);
    if (it == rankings.end())
      throw std::invalid_argument("hits_at_k: missing ranking for source " + std::to_string(s));
    const auto& list = it->second;
    for (int pos = 0; pos < std::min<int>(k, static_cast<int>(list.size())); ++pos) {
      if (list[pos] == t) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

Prf detection_prf(const std::vector<std::uint8_t>& predicted_positive,
                  const std::vector<std::uint8_t>& truth_positive) {
  require(predicted_positive.size() == truth_positive.size(), "detection_prf: size mismatch");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < predicted_positive.size(); ++i) {
    if (predicted_positive[i] && truth_positive[i]) ++tp;
    if (predicted_positive[i] && !truth_positive[i]) ++fp;
    if (!predicted_positive[i] && truth_positive[i]) ++fn;
  }
  Prf prf;
  if (tp + fp == 0) {
    std::cerr << "detection_prf: no predicted positives, precision set to 0\n";
    prf.precision = 0.0;
  } else {
    prf.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  }
  prf.recall = (tp + fn == 0) ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
  prf.f1 = (prf.precision + prf.recall > 0.0)
               ? 2.0 * prf.precision * prf.recall / (prf.precision + prf.recall)
               : 0.0;
  return prf;
}

Prf consolidated_alignment_prf(double det_precision, double det_recall, double h1_t11) {
  require(det_precision >= 0.0 && det_precision <= 1.0, "det_precision outside [0,1]");
  require(det_recall >= 0.0 && det_recall <= 1.0, "det_recall outside [0,1]");
  require(h1_t11 >= 0.0 && h1_t11 <= 1.0, "h1_t11 outside [0,1]");
  Prf prf;
  prf.precision = det_precision * h1_t11;
  prf.recall = det_recall * h1_t11;
  prf.f1 = (prf.precision + prf.recall > 0.0)
               ? 2.0 * prf.precision * prf.recall / (prf.precision + prf.recall)
               : 0.0;
  return prf;
}

MetricReport evaluate_pair(const Matrix& hf, const KGPair& pair, const AnchorSplit& split,
                           const std::vector<std::uint8_t>* pred_matchable, SimMetric metric,
                           int csls_k) {
  MetricReport report;
  const int n_src = pair.source.n_entities;
  const int n_tgt = pair.target.n_entities;

  std::vector<std::uint8_t> truth_match_src(n_src, 0), truth_match_tgt(n_tgt, 0);
  std::unordered_map<int, int> truth_of_src;
  for (const auto& [s, t] : pair.anchors) {
    truth_match_src[s] = 1;
    truth_match_tgt[t] = 1;
    truth_of_src[s] = t;
  }
  std::vector<std::uint8_t> in_train_src(n_src, 0), in_train_tgt(n_tgt, 0);
  for (const auto& [s, t] : split.train) {
    in_train_src[s] = 1;
    in_train_tgt[t] = 1;
  }

  // Relaxed setting: candidates are the truly matchable entities; rankings
  // for the held-out anchor sources.
  if (!split.test.empty()) {
    std::vector<int> src_cands, tgt_cands;
    for (int s = 0; s < n_src; ++s)
      if (truth_match_src[s]) src_cands.push_back(s);
    for (int t = 0; t < n_tgt; ++t)
      if (truth_match_tgt[t]) tgt_cands.push_back(t);
    Matrix src_emb(src_cands.size(), hf.cols()), tgt_emb(tgt_cands.size(), hf.cols());
    for (std::size_t i = 0; i < src_cands.size(); ++i)
      std::copy(hf.row(src_cands[i]).begin(), hf.row(src_cands[i]).end(),
                src_emb.row(i).begin());
    for (std::size_t j = 0; j < tgt_cands.size(); ++j)
      std::copy(hf.row(n_src + tgt_cands[j]).begin(), hf.row(n_src + tgt_cands[j]).end(),
                tgt_emb.row(j).begin());
    Matrix sim = metric == SimMetric::Csls ? csls_matrix(src_emb, tgt_emb, csls_k)
                                           : cosine_matrix(src_emb, tgt_emb);
    std::unordered_map<int, std::size_t> src_pos;
    for (std::size_t i = 0; i < src_cands.size(); ++i) src_pos[src_cands[i]] = i;

    std::map<int, std::vector<int>> rankings;
    for (const auto& [s, t] : split.test) {
      const std::size_t row = src_pos.at(s);
      std::vector<int> order(tgt_cands.size());
      for (std::size_t j = 0; j < order.size(); ++j) order[j] = static_cast<int>(j);
      std::stable_sort(order.begin(), order.end(),
                       [&](int a, int b) { return sim(row, a) > sim(row, b); });
      std::vector<int> ranked(order.size());
      for (std::size_t j = 0; j < order.size(); ++j) ranked[j] = tgt_cands[order[j]];
      rankings[s] = std::move(ranked);
    }
    for (int k : {1, 10, 50})
      report.relaxed_hits[k] = hits_at_k(rankings, split.test, k);
  }

  if (!pred_matchable) return report;
  report.has_detection = true;
  const std::vector<std::uint8_t>& mask = *pred_matchable;

  // Detection P/R/F1 with dangling as the positive class, over the unlabeled
  // entities of both graphs (train anchors are supervision, not test cases).
  std::vector<std::uint8_t> pred_dang, truth_dang;
  for (int s = 0; s < n_src; ++s) {
    if (in_train_src[s]) continue;
    pred_dang.push_back(mask[s] ? 0 : 1);
    truth_dang.push_back(truth_match_src[s] ? 0 : 1);
  }
  for (int t = 0; t < n_tgt; ++t) {
    if (in_train_tgt[t]) continue;
    pred_dang.push_back(mask[n_src + t] ? 0 : 1);
    truth_dang.push_back(truth_match_tgt[t] ? 0 : 1);
  }
  report.detection = detection_prf(pred_dang, truth_dang);

  if (split.test.empty()) return report;

  // Matchable-class precision/recall on the source side feed the
  // consolidated alignment metrics.
  std::vector<std::uint8_t> pred_m, truth_m;
  for (int s = 0; s < n_src; ++s) {
    if (in_train_src[s]) continue;
    pred_m.push_back(mask[s] ? 1 : 0);
    truth_m.push_back(truth_match_src[s] ? 1 : 0);
  }
  Prf matchable = detection_prf(pred_m, truth_m);

  AlignmentResult aligned = align(hf, n_src, mask, metric, csls_k);
  std::vector<AnchorPair> t11;
  for (const auto& [s, t] : split.test)
    if (mask[s]) t11.push_back({s, t});
  if (!t11.empty() && !aligned.empty_side) {
    std::unordered_map<int, std::size_t> src_pos;
    for (std::size_t i = 0; i < aligned.src_ids.size(); ++i) src_pos[aligned.src_ids[i]] = i;
    std::map<int, std::vector<int>> rankings;
    for (const auto& [s, t] : t11) {
      const std::size_t row = src_pos.at(s);
      std::vector<int> order(aligned.tgt_ids.size());
      for (std::size_t j = 0; j < order.size(); ++j) order[j] = static_cast<int>(j);
      std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return aligned.sim(row, a) > aligned.sim(row, b);
      });
      std::vector<int> ranked(order.size());
      for (std::size_t j = 0; j < order.size(); ++j) ranked[j] = aligned.tgt_ids[order[j]];
      rankings[s] = std::move(ranked);
    }
    report.h1_t11 = hits_at_k(rankings, t11, 1);
  }
  report.consolidated =
      consolidated_alignment_prf(matchable.precision, matchable.recall, report.h1_t11);
  return report;
}

void write_pairs_csv(const AlignmentResult& result, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "src_id,tgt_id,score\n";
  out.precision(17);
  for (const auto& [s, t, score] : result.pairs) out << s << ',' << t << ',' << score << '\n';
}

std::vector<std::tuple<int, int, double>> read_pairs_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<std::tuple<int, int, double>> pairs;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      header = false;
      continue;
    }
    if (line.empty()) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ss(line);
    int s, t;
    double score;
    if (!(ss >> s >> t >> score)) throw std::runtime_error("bad pairs line: " + line);
    pairs.push_back({s, t, score});
  }
  return pairs;
}

void write_metrics_json(const MetricReport& report, const std::filesystem::path& path) {
  nlohmann::json j;
  nlohmann::json hits;
  for (const auto& [k, v] : report.relaxed_hits) hits["hits@" + std::to_string(k)] = v;
  j["alignment_relaxed"] = std::move(hits);
  if (report.has_detection) {
    j["detection"] = {{"precision", report.detection.precision},
                      {"recall", report.detection.recall},
                      {"f1", report.detection.f1}};
    j["alignment_consolidated"] = {{"precision", report.consolidated.precision},
                                   {"recall", report.consolidated.recall},
                                   {"f1", report.consolidated.f1},
                                   {"h1_t11", report.h1_t11}};
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace lambda
