#pragma once

#include <cstdint>

namespace lambda {

// Full prior bookkeeping for the PU estimator: overall positive prior pi_p,
// its complement pi_n, the labeled-positive ratio pi_p_tr, the positive
// prior inside the unlabeled set pi_p_u with complement pi_n_u, and the
// scale alpha = pi_n_u / pi_n.
struct ClassPriors {
  double pi_p = 0.0;
  double pi_n = 1.0;
  double pi_p_tr = 0.0;
  double pi_p_u = 0.0;
  double pi_n_u = 1.0;
  double alpha = 1.0;

  // Cold-start values: pi_p = pi_p_u = |P| / (|P| + |U|), alpha = 1.
  static ClassPriors init_from_counts(std::int64_t n_pos, std::int64_t n_unlabeled);
  // Derives pi_p_u = (pi_p - pi_p_tr) / (1 - pi_p_tr) from the transductive
  // labeled ratio.
  static ClassPriors from_pi_p(double pi_p, double pi_p_tr);
  // E-step direction: given the unlabeled positive fraction, recover pi_p =
  // (|P| + |U| pi_p_u) / (|P| + |U|).
  static ClassPriors from_pi_p_u(double pi_p_u, std::int64_t n_pos, std::int64_t n_unlabeled);

  void validate() const;  // throws std::invalid_argument when out of range
};

}  // namespace lambda
