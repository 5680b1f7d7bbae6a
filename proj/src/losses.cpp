#include "lambda/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "lambda/kernels.hpp"

namespace lambda {

namespace {

constexpr double kProbClip = 1e-12;

void require(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}

double clip_prob(double p) { return std::clamp(p, kProbClip, 1.0 - kProbClip); }

}  // namespace

// --- ClassPriors -------------------------------------------------------------

ClassPriors ClassPriors::init_from_counts(std::int64_t n_pos, std::int64_t n_unlabeled) {
  require(n_pos >= 1 && n_unlabeled >= 1, "init_from_counts: counts must be positive");
  const double c = static_cast<double>(n_pos) / static_cast<double>(n_pos + n_unlabeled);
  ClassPriors pr;
  pr.pi_p = c;
  pr.pi_p_u = c;
  pr.pi_p_tr = c;
  pr.pi_n = 1.0 - c;
  pr.pi_n_u = 1.0 - c;
  pr.alpha = 1.0;
  return pr;
}

ClassPriors ClassPriors::from_pi_p(double pi_p, double pi_p_tr) {
  require(pi_p >= 0.0 && pi_p <= 1.0, "from_pi_p: pi_p outside [0,1]");
  require(pi_p_tr >= 0.0 && pi_p_tr < 1.0, "from_pi_p: pi_p_tr outside [0,1)");
  require(pi_p >= pi_p_tr, "from_pi_p: pi_p below the labeled ratio");
  ClassPriors pr;
  pr.pi_p = pi_p;
  pr.pi_n = 1.0 - pi_p;
  pr.pi_p_tr = pi_p_tr;
  pr.pi_p_u = (pi_p - pi_p_tr) / (1.0 - pi_p_tr);
  pr.pi_n_u = 1.0 - pr.pi_p_u;
  pr.alpha = pr.pi_n > 0.0 ? pr.pi_n_u / pr.pi_n : std::numeric_limits<double>::infinity();
  return pr;
}

ClassPriors ClassPriors::from_pi_p_u(double pi_p_u, std::int64_t n_pos,
                                     std::int64_t n_unlabeled) {
  require(pi_p_u >= 0.0 && pi_p_u <= 1.0, "from_pi_p_u: pi_p_u outside [0,1]");
  require(n_pos >= 1 && n_unlabeled >= 1, "from_pi_p_u: counts must be positive");
  const double np = static_cast<double>(n_pos);
  const double nu = static_cast<double>(n_unlabeled);
  ClassPriors pr;
  pr.pi_p_u = pi_p_u;
  pr.pi_n_u = 1.0 - pi_p_u;
  pr.pi_p_tr = np / (np + nu);
  pr.pi_p = (np + nu * pi_p_u) / (np + nu);
  pr.pi_n = 1.0 - pr.pi_p;
  pr.alpha = pr.pi_n > 0.0 ? pr.pi_n_u / pr.pi_n : std::numeric_limits<double>::infinity();
  return pr;
}

void ClassPriors::validate() const {
  auto in01 = [](double v) { return v >= 0.0 && v <= 1.0; };
  require(in01(pi_p) && in01(pi_n) && in01(pi_p_tr) && in01(pi_p_u) && in01(pi_n_u),
          "ClassPriors: field outside [0,1]");
  require(std::abs(pi_p + pi_n - 1.0) < 1e-12, "ClassPriors: pi_p + pi_n != 1");
  require(std::abs(pi_p_u + pi_n_u - 1.0) < 1e-12, "ClassPriors: pi_p_u + pi_n_u != 1");
}

// --- contrastive losses ------------------------------------------------------

double margin_h(double sim_neg, double sim_pos, double gamma) {
  return std::max(0.0, sim_neg - sim_pos + gamma);
}

namespace {

// Unit-normalized copy of a row; zero rows stay zero.
std::vector<double> unit_row(std::span<const double> row, bool normalize, double* norm_out) {
  std::vector<double> v(row.begin(), row.end());
  double n = std::sqrt(kern::sq_norm(row));
  if (norm_out) *norm_out = n;
  if (normalize && n > 0.0) kern::scale(1.0 / n, std::span<double>(v));
  return v;
}

double neg_l2(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    acc += d * d;
  }
  return -std::sqrt(acc);
}

}  // namespace

double spectral_contrastive_loss(const ContrastiveBatch& batch, const Matrix& emb) {
  const double lam = batch.lambda_temp;
  require(lam > 0.0, "spectral_contrastive_loss: lambda must be positive");
  double total = 0.0;
  for (const auto& item : batch.items) {
    if (item.negatives.empty()) continue;  // log 1
    auto q = unit_row(emb.row(item.query), batch.normalize, nullptr);
    auto p = unit_row(emb.row(item.positive), batch.normalize, nullptr);
    const double sim_pos = neg_l2(q, p);
    double max_term = 0.0;  // the implicit "1" is exp(0)
    std::vector<double> lh(item.negatives.size());
    for (std::size_t j = 0; j < item.negatives.size(); ++j) {
      auto nv = unit_row(emb.row(item.negatives[j]), batch.normalize, nullptr);
      lh[j] = lam * margin_h(neg_l2(q, nv), sim_pos, batch.gamma);
      max_term = std::max(max_term, lh[j]);
    }
    double acc = std::exp(-max_term);
    for (double v : lh) acc += std::exp(v - max_term);
    total += max_term + std::log(acc);
  }
  return total;
}

double spectral_contrastive_loss_grad(const ContrastiveBatch& batch, const Matrix& emb,
                                      Matrix& d_emb) {
  const double lam = batch.lambda_temp;
  require(lam > 0.0, "spectral_contrastive_loss_grad: lambda must be positive");
  require(d_emb.rows() == emb.rows() && d_emb.cols() == emb.cols(),
          "spectral_contrastive_loss_grad: gradient shape mismatch");
  const std::size_t w = emb.cols();

  // Gradients are first accumulated w.r.t. the (possibly normalized) rows,
  // then chained through the normalization once per row.
  Matrix d_hat(emb.rows(), w);
  std::vector<char> touched(emb.rows(), 0);
  double total = 0.0;

  std::vector<double> diff(w);
  for (const auto& item : batch.items) {
    if (item.negatives.empty()) continue;
    auto q = unit_row(emb.row(item.query), batch.normalize, nullptr);
    auto p = unit_row(emb.row(item.positive), batch.normalize, nullptr);
    touched[item.query] = touched[item.positive] = 1;
    const double sim_pos = neg_l2(q, p);

    std::vector<std::vector<double>> negs(item.negatives.size());
    std::vector<double> lh(item.negatives.size()), sims(item.negatives.size());
    double max_term = 0.0;
    for (std::size_t j = 0; j < item.negatives.size(); ++j) {
      negs[j] = unit_row(emb.row(item.negatives[j]), batch.normalize, nullptr);
      touched[item.negatives[j]] = 1;
      sims[j] = neg_l2(q, negs[j]);
      lh[j] = lam * margin_h(sims[j], sim_pos, batch.gamma);
      max_term = std::max(max_term, lh[j]);
    }
    double denom = std::exp(-max_term);
    for (double v : lh) denom += std::exp(v - max_term);
    total += max_term + std::log(denom);

    double d_sim_pos = 0.0;
    for (std::size_t j = 0; j < item.negatives.size(); ++j) {
      const double h = lh[j] / lam;
      if (h <= 0.0) continue;  // hinge inactive
      const double coef = lam * std::exp(lh[j] - max_term) / denom;
      d_sim_pos -= coef;
      // sim = -|q - n|: d/dq = -(q-n)/|q-n|, d/dn = (q-n)/|q-n|
      double nrm = -sims[j];
      if (nrm > 0.0) {
        for (std::size_t c = 0; c < w; ++c) diff[c] = (q[c] - negs[j][c]) / nrm;
        kern::axpy(-coef, diff, d_hat.row(item.query));
        kern::axpy(coef, diff, d_hat.row(item.negatives[j]));
      }
    }
    double nrm_p = -sim_pos;
    if (d_sim_pos != 0.0 && nrm_p > 0.0) {
      for (std::size_t c = 0; c < w; ++c) diff[c] = (q[c] - p[c]) / nrm_p;
      kern::axpy(-d_sim_pos, diff, d_hat.row(item.query));
      kern::axpy(d_sim_pos, diff, d_hat.row(item.positive));
    }
  }

  for (std::size_t r = 0; r < emb.rows(); ++r) {
    if (!touched[r]) continue;
    auto dh = d_hat.row(r);
    if (!batch.normalize) {
      kern::axpy(1.0, dh, d_emb.row(r));
      continue;
    }
    double norm = std::sqrt(kern::sq_norm(emb.row(r)));
    if (norm <= 0.0) continue;
    std::vector<double> hat(emb.row(r).begin(), emb.row(r).end());
    kern::scale(1.0 / norm, std::span<double>(hat));
    const double proj = kern::dot(dh, hat);
    kern::axpy(1.0 / norm, dh, d_emb.row(r));
    kern::axpy(-proj / norm, hat, d_emb.row(r));
  }
  return total;
}

double infonce(std::span<const double> q, std::span<const double> p_plus, const Matrix& negs,
               double lambda) {
  require(lambda > 0.0, "infonce: lambda must be positive");
  const double a = lambda * neg_l2(q, p_plus);
  if (negs.rows() == 0) return 0.0;
  double m = a;
  std::vector<double> b(negs.rows());
  for (std::size_t j = 0; j < negs.rows(); ++j) {
    b[j] = lambda * neg_l2(q, negs.row(j));
    m = std::max(m, b[j]);
  }
  double denom = std::exp(a - m);
  for (double v : b) denom += std::exp(v - m);
  return -(a - m - std::log(denom));
}

std::pair<double, double> tuns_bound_check(std::span<const double> h_values, double lambda) {
  require(!h_values.empty(), "tuns_bound_check: empty list");
  require(lambda > 0.0, "tuns_bound_check: lambda must be positive");
  double mx = *std::max_element(h_values.begin(), h_values.end());
  double acc = 0.0;
  for (double h : h_values) acc += std::exp(lambda * (h - mx));
  return {mx + std::log(acc) / lambda, mx};
}

std::vector<int> sample_negatives(const std::pair<int, int>& anchor,
                                  std::span<const int> pool, int n, NegStrategy strategy,
                                  std::uint64_t seed) {
  (void)strategy;  // both strategies draw from the caller-provided pool
  std::vector<int> candidates;
  candidates.reserve(pool.size());
  for (int id : pool)
    if (id != anchor.first && id != anchor.second) candidates.push_back(id);
  if (static_cast<int>(candidates.size()) <= n) return candidates;
  auto rng = make_rng(seed);
  // Partial Fisher-Yates for n distinct draws.
  for (int i = 0; i < n; ++i) {
    std::uniform_int_distribution<std::size_t> dist(i, candidates.size() - 1);
    std::swap(candidates[i], candidates[dist(rng)]);
  }
  candidates.resize(n);
  return candidates;
}

// --- PU risk -----------------------------------------------------------------

RiskTerms risk_terms(const std::vector<double>& prob_plus, const std::vector<int>& labeled_pos,
                     const std::vector<int>& unlabeled) {
  require(!labeled_pos.empty(), "risk_terms: empty labeled positive set");
  require(!unlabeled.empty(), "risk_terms: empty unlabeled set");
  RiskTerms t;
  for (int i : labeled_pos) {
    t.r_p_plus -= std::log(clip_prob(prob_plus[i]));
    t.r_p_minus -= std::log(clip_prob(1.0 - prob_plus[i]));
  }
  t.r_p_plus /= static_cast<double>(labeled_pos.size());
  t.r_p_minus /= static_cast<double>(labeled_pos.size());
  for (int i : unlabeled) t.r_u_minus -= std::log(clip_prob(1.0 - prob_plus[i]));
  t.r_u_minus /= static_cast<double>(unlabeled.size());
  return t;
}

double pu_loss(const RiskTerms& terms, const ClassPriors& priors) {
  priors.validate();
  require(priors.pi_n > 0.0, "pu_loss: pi_n = 0 (everything positive)");
  const double alpha = priors.pi_n_u / priors.pi_n;
  return alpha * priors.pi_p * terms.r_p_plus +
         std::max(0.0, terms.r_u_minus - priors.pi_p_u * terms.r_p_minus);
}

double pu_loss_grad(const std::vector<double>& prob_plus, const std::vector<int>& labeled_pos,
                    const std::vector<int>& unlabeled, const ClassPriors& priors,
                    std::vector<double>& d_prob) {
  const RiskTerms terms = risk_terms(prob_plus, labeled_pos, unlabeled);
  const double loss = pu_loss(terms, priors);
  const double alpha = priors.pi_n_u / priors.pi_n;
  const bool clamp_open = terms.r_u_minus - priors.pi_p_u * terms.r_p_minus > 0.0;
  const double np = static_cast<double>(labeled_pos.size());
  const double nu = static_cast<double>(unlabeled.size());

  auto interior = [](double p) { return p > kProbClip && p < 1.0 - kProbClip; };
  for (int i : labeled_pos) {
    const double p = prob_plus[i];
    if (!interior(p)) continue;
    d_prob[i] += alpha * priors.pi_p * (-1.0 / (np * p));
    if (clamp_open) d_prob[i] += -priors.pi_p_u * (1.0 / (np * (1.0 - p)));
  }
  if (clamp_open) {
    for (int i : unlabeled) {
      const double p = prob_plus[i];
      if (!interior(p)) continue;
      d_prob[i] += 1.0 / (nu * (1.0 - p));
    }
  }
  return loss;
}

double unbiased_risk(const RiskTerms& terms, const ClassPriors& priors) {
  require(priors.pi_n_u > 0.0, "unbiased_risk: pi_n_u = 0");
  return priors.pi_p * terms.r_p_plus +
         (priors.pi_n / priors.pi_n_u) * (terms.r_u_minus - priors.pi_p_u * terms.r_p_minus);
}

double combined_warmup_loss(double l_info, double l_pu, double l_o, double beta, double mu_o) {
  require(beta >= 0.0 && beta <= 1.0, "combined_warmup_loss: beta outside [0,1]");
  require(mu_o >= 0.0, "combined_warmup_loss: mu_o must be non-negative");
  return beta * l_info + (1.0 - beta) * l_pu + mu_o * l_o;
}

}  // namespace lambda
