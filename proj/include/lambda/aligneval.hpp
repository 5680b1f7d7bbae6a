#pragma once

#include <filesystem>
#include <map>
#include <tuple>
#include <vector>

#include "lambda/common.hpp"
#include "lambda/kgdata.hpp"

namespace lambda {

enum class SimMetric { Cosine, Csls };

Matrix cosine_matrix(const Matrix& src_emb, const Matrix& tgt_emb);

// CSLS(x, y) = 2 cos(x, y) - r_T(x) - r_S(y), where r_T(x) is the mean cosine
// of x to its k nearest targets and r_S(y) the symmetric term. k larger than
// the opposite side is clipped with a warning on stderr.
Matrix csls_matrix(const Matrix& src_emb, const Matrix& tgt_emb, int k);

// (i, j) kept iff j is i's row argmax and i is j's column argmax; ties break
// toward the lowest index.
std::vector<std::pair<int, int>> mutual_nn_pairs(const Matrix& sim);

struct AlignmentResult {
  std::vector<std::tuple<int, int, double>> pairs;  // src id, tgt id, score
  std::vector<int> src_ids;  // candidate original ids, row order of sim
  std::vector<int> tgt_ids;  // candidate original ids, column order of sim
  Matrix sim;
  SimMetric metric = SimMetric::Csls;
  bool empty_side = false;
};

// Drops entities predicted dangling from both sides, computes similarities
// over the survivors and pairs them by mutual nearest neighbors.
// pred_matchable is indexed by union id (target shifted by n_src).
AlignmentResult align(const Matrix& hf, int n_src,
                      const std::vector<std::uint8_t>& pred_matchable, SimMetric metric,
                      int csls_k);

// rankings[src id] = target ids in descending-similarity order. Throws if a
// truth source has no ranking; a truth target missing from the candidate
// list counts as a miss.
double hits_at_k(const std::map<int, std::vector<int>>& rankings,
                 const std::vector<AnchorPair>& truth, int k);

struct Prf {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Standard P/R/F1 of predicted_positive against truth_positive over one
// universe. Zero predicted positives gives precision 0 with a warning.
Prf detection_prf(const std::vector<std::uint8_t>& predicted_positive,
                  const std::vector<std::uint8_t>& truth_positive);

// Consolidated-setting alignment metrics: prec = det_precision * h1_t11,
// rec = det_recall * h1_t11, f1 their harmonic mean.
Prf consolidated_alignment_prf(double det_precision, double det_recall, double h1_t11);

struct MetricReport {
  Prf detection;                       // dangling as the positive class
  std::map<int, double> relaxed_hits;  // K -> Hits@K over matchable-only candidates
  double h1_t11 = 0.0;
  Prf consolidated;                    // H@1_t1y / H@1_ty1 / F1
  bool has_detection = false;
};

// Full measurement pass for a src->tgt run: relaxed Hits@K over the held-out
// anchors, and, when a detector output is supplied, detection P/R/F1 plus the
// consolidated alignment metrics on the filtered candidate sets.
MetricReport evaluate_pair(const Matrix& hf, const KGPair& pair, const AnchorSplit& split,
                           const std::vector<std::uint8_t>* pred_matchable, SimMetric metric,
                           int csls_k);

void write_pairs_csv(const AlignmentResult& result, const std::filesystem::path& path);
std::vector<std::tuple<int, int, double>> read_pairs_csv(const std::filesystem::path& path);
void write_metrics_json(const MetricReport& report, const std::filesystem::path& path);

}  // namespace lambda
