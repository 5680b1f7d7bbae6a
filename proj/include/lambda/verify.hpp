#pragma once

#include <string>
#include <vector>

#include "lambda/common.hpp"

namespace lambda {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

// Criterion 1: unbiasedness of the risk estimator on the Gaussian PU world.
// Criterion 2: variance ordering against the p_u = p estimator.
std::vector<CheckResult> verify_pu_oracles(std::uint64_t seed);

// Criterion 3: softmax-ratio / log-sum form identity of the contrastive loss.
// Criterion 4: log-sum-exp sandwich around the max.
std::vector<CheckResult> verify_lemma_identities(std::uint64_t seed);

// Criterion 5: analytic gradients of the contrastive loss, PU loss and
// orthogonality penalty against central finite differences.
std::vector<CheckResult> verify_gradients(std::uint64_t seed);

// Criterion 6: reflection orthogonality, attention normalization, encode
// determinism and triple-order invariance.
std::vector<CheckResult> verify_structural(std::uint64_t seed);

// Criteria 7-9: prior recovery on the separable synthetic pair, the
// alignability gate, and end-to-end desk-scale alignment quality.
std::vector<CheckResult> verify_pipeline(std::uint64_t seed);

// Criterion 10: trivial-classifier detection metrics and the consolidated
// precision/recall identities.
std::vector<CheckResult> verify_metrics(std::uint64_t seed);

// Criterion 11: exact agreement of the similarity/matching code with the
// brute-force oracles.
std::vector<CheckResult> verify_oracle_equivalence(std::uint64_t seed);

std::vector<CheckResult> verify_all(std::uint64_t seed);

}  // namespace lambda
