#pragma once

#include <filesystem>
#include <optional>
#include <utility>
#include <vector>

#include "lambda/common.hpp"

namespace lambda {

struct TripleStore {
  std::vector<Triple> triples;
  std::int32_t n_entities = 0;
  std::int32_t n_relations = 0;

  // Throws std::invalid_argument on out-of-range ids or duplicate triples.
  void validate() const;

  bool operator==(const TripleStore&) const = default;
};

using AnchorPair = std::pair<EntityId, EntityId>;

struct KGPair {
  TripleStore source;
  TripleStore target;
  std::vector<AnchorPair> anchors;
  // Ground-truth dangling ids, kept sorted. Evaluation only; never fed to
  // training.
  std::vector<EntityId> truth_dangling_src;
  std::vector<EntityId> truth_dangling_tgt;

  void validate() const;
  bool has_truth() const { return !truth_dangling_src.empty() || !truth_dangling_tgt.empty(); }

  bool operator==(const KGPair&) const = default;
};

struct AnchorSplit {
  std::vector<AnchorPair> train;
  std::vector<AnchorPair> test;
  std::uint64_t seed = 0;
};

// Directory layout follows the DBP2.0 convention: triples_1, triples_2,
// ent_links (tab-separated decimal ids), plus optional dangling_1/dangling_2
// id lists. Ids are re-indexed densely per graph, preserving numeric order.
KGPair load_kg_pair(const std::filesystem::path& dir);
void save_kg_pair(const KGPair& pair, const std::filesystem::path& dir);

AnchorSplit split_anchors(const KGPair& pair, double train_ratio, std::uint64_t seed);

struct SyntheticConfig {
  int n_match = 500;
  int n_dang_src = 200;
  int n_dang_tgt = 300;
  int n_relations = 8;
  int community_count = 25;
  double intra_edge_prob = 0.3;
  double cross_noise = 0.0;
  // Edges from each dangling entity to uniformly random matchable entities
  // across all communities; matchables sit inside one community each, which
  // is what makes the two classes structurally separable.
  int dangling_degree = 3;
  // Fraction of the relation vocabulary reserved for dangling attachments:
  // core edges draw from the first (1 - skew) * n_relations relations,
  // dangling edges from the full vocabulary. At 0 the profiles coincide and
  // separability rests on community structure alone.
  double dangling_rel_skew = 0.5;
  std::uint64_t seed = 1;
};

KGPair gen_synthetic_pair(const SyntheticConfig& cfg);

// Deletes a fraction of matchable pairs by removing one side (chosen
// uniformly); the survivor becomes dangling. Incident triples dropped,
// ids re-indexed densely preserving order.
KGPair transform_minus(const KGPair& pair, double delete_frac, std::uint64_t seed);
// Deletes a fraction of dangling entities from each graph.
KGPair transform_plus(const KGPair& pair, double delete_frac, std::uint64_t seed);

// Smallest power of two strictly above 8.33 * log(n_entities). The log base
// defaults to e, which reproduces d = 128 at N ~ 1e5.
int suggest_dim(std::int64_t n_entities, double log_base = 2.718281828459045235);

// Fraction of matchable entities over all entities (both graphs pooled);
// the pi_p of the pair when truth labels are present.
double matchable_fraction(const KGPair& pair);

}  // namespace lambda
