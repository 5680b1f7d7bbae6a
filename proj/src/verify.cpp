#include "lambda/verify.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "lambda/aligneval.hpp"
#include "lambda/encoder.hpp"
#include "lambda/ipule.hpp"
#include "lambda/kgdata.hpp"
#include "lambda/losses.hpp"
#include "lambda/oracles.hpp"

namespace lambda {

namespace {

std::string fmt(double v) {
  std::ostringstream ss;
  ss.precision(6);
  ss << v;
  return ss.str();
}

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

double max_grad_rel_err(const std::vector<double>& analytic, const std::vector<double>& fd) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i)
    worst = std::max(worst, rel_err(analytic[i], fd[i]));
  return worst;
}

}  // namespace

std::vector<CheckResult> verify_pu_oracles(std::uint64_t seed) {
  std::vector<CheckResult> out;

  GaussianPUWorld world;
  world.pi_p = 0.6;
  world.pi_p_u = 3.0 / 7.0;  // labeled ratio 0.3
  world.seed = seed;

  {
    McReport rep = mc_unbiasedness(world, 500, 500, 1000, 0.0);
    const double err = std::abs(rep.mean_estimate - rep.true_risk);
    CheckResult c;
    c.name = "criterion 1: unbiased risk estimator (Gaussian world)";
    c.pass = err < 3.0 * rep.std_error;
    c.detail = "mean=" + fmt(rep.mean_estimate) + " truth=" + fmt(rep.true_risk) +
               " |err|=" + fmt(err) + " 3se=" + fmt(3.0 * rep.std_error);
    out.push_back(std::move(c));
  }

  {
    int wins = 0;
    const int trials = 20;
    for (int t = 0; t < trials; ++t) {
      GaussianPUWorld w = world;
      w.seed = seed + 1000ull * (t + 1);
      VarReport rep = variance_compare(w, 500, 500, 1000, 0.0);
      if (rep.var_ours < rep.var_nn) ++wins;
    }
    CheckResult c;
    c.name = "criterion 2: variance ordering vs p_u=p estimator";
    c.pass = wins >= 19;
    c.detail = "var_ours < var_nn in " + std::to_string(wins) + "/" + std::to_string(trials) +
               " trials";
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<CheckResult> verify_lemma_identities(std::uint64_t seed) {
  std::vector<CheckResult> out;
  auto rng = make_rng(seed);
  std::normal_distribution<double> gauss(0.0, 0.5);

  {
    const double lambdas[] = {1.0, 30.0};
    const int n_negs[] = {1, 5, 50};
    double worst = 0.0;
    for (int inst = 0; inst < 100; ++inst) {
      const double lam = lambdas[inst % 2];
      const int nn = n_negs[(inst / 2) % 3];
      const int d = 8;
      std::vector<double> q(d), p(d);
      for (auto& v : q) v = gauss(rng);
      for (auto& v : p) v = gauss(rng);
      Matrix negs(nn, d);
      for (std::size_t i = 0; i < negs.size(); ++i) negs.data()[i] = gauss(rng);

      const double lhs = infonce(q, p, negs, lam);
      // Independent arithmetic: the log[1 + sum exp(lambda(sim- - sim+))] form.
      auto dist = [&](std::span<const double> a, std::span<const double> b) {
        double acc = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
        return std::sqrt(acc);
      };
      const double sim_pos = -dist(q, p);
      double acc = 0.0;
      for (int j = 0; j < nn; ++j) acc += std::exp(lam * (-dist(q, negs.row(j)) - sim_pos));
      const double rhs = std::log1p(acc);
      worst = std::max(worst, rel_err(lhs, rhs));
    }
    CheckResult c;
    c.name = "criterion 3: infoNCE equals log[1 + sum exp(lambda(sim- - sim+))]";
    c.pass = worst < 1e-9;
    c.detail = "max relative error " + fmt(worst) + " over 100 instances";
    out.push_back(std::move(c));
  }

  {
    bool ok = true;
    std::string fail;
    std::uniform_int_distribution<int> size_dist(1, 40);
    for (int inst = 0; inst < 100 && ok; ++inst) {
      const double lam = inst % 2 == 0 ? 30.0 : 1.0;
      const int n = size_dist(rng);
      std::vector<double> h(n);
      for (auto& v : h) v = std::abs(gauss(rng)) * 2.0;
      auto [lse, mx] = tuns_bound_check(h, lam);
      const double upper = mx + std::log(static_cast<double>(n)) / lam;
      if (!(mx <= lse + 1e-12 && lse <= upper + 1e-12)) {
        ok = false;
        fail = "violated at instance " + std::to_string(inst);
      }
    }
    // Exact tightness: single element, and all-equal lists.
    {
      std::vector<double> one = {0.7};
      auto [lse, mx] = tuns_bound_check(one, 30.0);
      if (lse != mx) {
        ok = false;
        fail = "single-element case not exact";
      }
      std::vector<double> eq(8, 0.4);
      auto [lse2, mx2] = tuns_bound_check(eq, 30.0);
      if (lse2 != mx2 + std::log(8.0) / 30.0) {
        ok = false;
        fail = "all-equal case not exactly max + ln(N)/lambda";
      }
    }
    CheckResult c;
    c.name = "criterion 4: log-sum-exp sandwich max <= lse <= max + ln(N)/lambda";
    c.pass = ok;
    c.detail = ok ? "100 random instances + exact boundary cases" : fail;
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<CheckResult> verify_gradients(std::uint64_t seed) {
  std::vector<CheckResult> out;
  auto rng = make_rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  // Toy instance: 6 entities, 2 relations; anchors (0,3), (1,4).
  const int n = 6, d = 8;
  ContrastiveBatch batch;
  batch.lambda_temp = 2.0;
  batch.gamma = 1.0;
  batch.normalize = true;
  batch.items.push_back({0, 3, {4, 5, 2}});
  batch.items.push_back({3, 0, {1, 2, 5}});
  batch.items.push_back({1, 4, {3, 5, 0}});

  {
    Matrix emb(n, d);
    for (std::size_t i = 0; i < emb.size(); ++i) emb.data()[i] = gauss(rng);
    Matrix analytic(n, d);
    spectral_contrastive_loss_grad(batch, emb, analytic);
    auto f = [&](std::span<const double> x) {
      Matrix m(n, d);
      std::copy(x.begin(), x.end(), m.data());
      return spectral_contrastive_loss(batch, m);
    };
    auto fd = fd_gradient(f, std::span<const double>(emb.data(), emb.size()), 1e-5);
    std::vector<double> an(analytic.data(), analytic.data() + analytic.size());
    const double worst = max_grad_rel_err(an, fd);
    CheckResult c;
    c.name = "criterion 5a: contrastive loss gradient vs finite differences";
    c.pass = worst < 1e-4;
    c.detail = "max relative error " + fmt(worst);
    out.push_back(std::move(c));
  }

  {
    // PU loss as a function of per-entity logits through a sigmoid.
    std::vector<int> pos = {0, 1};
    std::vector<int> unl = {2, 3, 4, 5};
    ClassPriors priors = ClassPriors::from_pi_p(0.6, 0.3);
    std::vector<double> logits(n);
    for (auto& v : logits) v = gauss(rng);
    auto probs_of = [&](std::span<const double> z) {
      std::vector<double> p(z.size());
      for (std::size_t i = 0; i < z.size(); ++i) p[i] = 1.0 / (1.0 + std::exp(-z[i]));
      return p;
    };
    std::vector<double> probs = probs_of(logits);
    std::vector<double> d_prob(n, 0.0);
    pu_loss_grad(probs, pos, unl, priors, d_prob);
    std::vector<double> analytic(n);
    for (int i = 0; i < n; ++i) analytic[i] = d_prob[i] * probs[i] * (1.0 - probs[i]);
    auto f = [&](std::span<const double> z) {
      return pu_loss(risk_terms(probs_of(z), pos, unl), priors);
    };
    auto fd = fd_gradient(f, logits, 1e-5);
    const double worst = max_grad_rel_err(analytic, fd);
    CheckResult c;
    c.name = "criterion 5b: PU loss gradient vs finite differences";
    c.pass = worst < 1e-4;
    c.detail = "max relative error " + fmt(worst);
    out.push_back(std::move(c));
  }

  {
    Matrix w(d, d);
    for (std::size_t i = 0; i < w.size(); ++i) w.data()[i] = gauss(rng) * 0.5;
    Matrix analytic(d, d);
    orth_penalty_grad(w, 1.0, analytic);
    auto f = [&](std::span<const double> x) {
      Matrix m(d, d);
      std::copy(x.begin(), x.end(), m.data());
      return orth_penalty(m);
    };
    auto fd = fd_gradient(f, std::span<const double>(w.data(), w.size()), 1e-5);
    std::vector<double> an(analytic.data(), analytic.data() + analytic.size());
    const double worst = max_grad_rel_err(an, fd);
    CheckResult c;
    c.name = "criterion 5c: orthogonality penalty gradient vs finite differences";
    c.pass = worst < 1e-4;
    c.detail = "max relative error " + fmt(worst);
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<CheckResult> verify_structural(std::uint64_t seed) {
  std::vector<CheckResult> out;
  auto rng = make_rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  {
    const int d = 16;
    double worst_orth = 0.0, worst_norm = 0.0;
    for (int t = 0; t < 100; ++t) {
      std::vector<double> u(d), h(d);
      for (auto& v : u) v = gauss(rng);
      double nrm = 0.0;
      for (double v : u) nrm += v * v;
      nrm = std::sqrt(nrm);
      for (auto& v : u) v /= nrm;
      for (auto& v : h) v = gauss(rng);

      Matrix w(d, d);
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) w(i, j) = (i == j ? 1.0 : 0.0) - 2.0 * u[i] * u[j];
      for (int i = 0; i < d; ++i) {
        for (int j = 0; j < d; ++j) {
          double g = 0.0;
          for (int k = 0; k < d; ++k) g += w(k, i) * w(k, j);
          worst_orth = std::max(worst_orth, std::abs(g - (i == j ? 1.0 : 0.0)));
        }
      }
      std::vector<double> wh(d, 0.0);
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) wh[i] += w(i, j) * h[j];
      double nh = 0.0, nwh = 0.0;
      for (int i = 0; i < d; ++i) {
        nh += h[i] * h[i];
        nwh += wh[i] * wh[i];
      }
      worst_norm = std::max(worst_norm, std::abs(std::sqrt(nwh) - std::sqrt(nh)));
    }
    CheckResult c;
    c.name = "criterion 6a: Householder reflections orthogonal and norm-preserving";
    c.pass = worst_orth < 1e-6 && worst_norm < 1e-6;
    c.detail = "max |W^T W - I| = " + fmt(worst_orth) + ", max norm drift = " + fmt(worst_norm);
    out.push_back(std::move(c));
  }

  SyntheticConfig scfg;
  scfg.n_match = 40;
  scfg.n_dang_src = 10;
  scfg.n_dang_tgt = 12;
  scfg.n_relations = 4;
  scfg.community_count = 5;
  scfg.intra_edge_prob = 0.5;
  scfg.seed = seed;
  KGPair pair = gen_synthetic_pair(scfg);

  EncoderConfig ecfg;
  ecfg.dim = 8;
  ecfg.depth = 2;
  ecfg.n_proxy = 4;
  ecfg.shared_relations = true;
  EncodeGraph graph = EncodeGraph::build(pair, ecfg.shared_relations);
  EncoderParams params = EncoderParams::init(ecfg, graph.n_entities, graph.n_relations, seed);
  std::normal_distribution<double> jitter(0.0, 0.3);
  for (auto& v : params.indicator) v = 1.0 + jitter(rng);

  {
    std::vector<double> alpha = attention_coeffs(graph.inc, params);
    double worst = 0.0;
    for (int i = 0; i < graph.n_entities; ++i) {
      if (graph.offsets[i] == graph.offsets[i + 1]) continue;
      double s = 0.0;
      for (std::int64_t e = graph.offsets[i]; e < graph.offsets[i + 1]; ++e) s += alpha[e];
      worst = std::max(worst, std::abs(s - 1.0));
    }
    CheckResult c;
    c.name = "criterion 6b: attention rows sum to 1";
    c.pass = worst < 1e-6;
    c.detail = "max |row sum - 1| = " + fmt(worst);
    out.push_back(std::move(c));
  }

  {
    Matrix hf1 = encode(pair, params, ecfg);
    Matrix hf2 = encode(pair, params, ecfg);
    KGPair shuffled = pair;
    auto rng2 = make_rng(seed + 1);
    std::shuffle(shuffled.source.triples.begin(), shuffled.source.triples.end(), rng2);
    std::shuffle(shuffled.target.triples.begin(), shuffled.target.triples.end(), rng2);
    Matrix hf3 = encode(shuffled, params, ecfg);
    CheckResult c;
    c.name = "criterion 6c: encode deterministic and triple-order invariant";
    c.pass = hf1 == hf2 && hf1 == hf3;
    c.detail = c.pass ? "bit-identical outputs" : "outputs differ";
    out.push_back(std::move(c));
  }
  return out;
}

namespace {

IpuleConfig desk_ipule_config(std::uint64_t seed) {
  IpuleConfig cfg;
  cfg.enc.dim = 32;
  cfg.enc.depth = 2;
  cfg.enc.n_proxy = 16;
  cfg.enc.dropout = 0.1;
  cfg.enc.shared_relations = true;
  cfg.warmup_epochs = 30;
  cfg.lr = 0.01;
  cfg.max_em_iters = 50;
  cfg.m_epochs = 5;
  cfg.n_negatives = 64;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

std::vector<CheckResult> verify_pipeline(std::uint64_t seed) {
  std::vector<CheckResult> out;

  SyntheticConfig scfg;
  scfg.n_match = 500;
  scfg.n_dang_src = 200;
  scfg.n_dang_tgt = 300;
  scfg.n_relations = 8;
  scfg.community_count = 25;
  scfg.intra_edge_prob = 0.3;
  scfg.cross_noise = 0.0;
  scfg.seed = seed;
  KGPair pair = gen_synthetic_pair(scfg);
  AnchorSplit split = split_anchors(pair, 0.3, seed);

  IpuleConfig cfg = desk_ipule_config(seed);
  DetectionResult det = run_ipule(pair, split, cfg);

  const double n_total = pair.source.n_entities + pair.target.n_entities;
  const double n_unl = n_total - 2.0 * static_cast<double>(split.train.size());
  const double true_pi_p_u =
      2.0 * static_cast<double>(pair.anchors.size() - split.train.size()) / n_unl;

  {
    CheckResult c;
    c.name = "criterion 7: iPULE prior recovery on the separable pair";
    const double err = std::abs(det.priors.pi_p_u - true_pi_p_u);
    c.pass = err <= 0.1 && det.converged;
    c.detail = "pi_p_u=" + fmt(det.priors.pi_p_u) + " truth=" + fmt(true_pi_p_u) +
               " |err|=" + fmt(err) + (det.converged ? " (converged)" : " (not converged)");
    out.push_back(std::move(c));
  }

  {
    SyntheticConfig ga;
    ga.n_match = 150;
    ga.n_dang_src = 550;
    ga.n_dang_tgt = 650;
    ga.n_relations = 8;
    ga.community_count = 15;
    ga.intra_edge_prob = 0.3;
    ga.seed = seed + 7;
    KGPair ga_pair = gen_synthetic_pair(ga);
    // Every matchable pair is pre-aligned: the unlabeled set is pure dangling.
    AnchorSplit ga_split;
    ga_split.train = ga_pair.anchors;
    ga_split.seed = seed + 7;
    IpuleConfig ga_cfg = desk_ipule_config(seed + 7);
    DetectionResult ga_det = run_ipule(ga_pair, ga_split, ga_cfg);

    CheckResult c;
    c.name = "criterion 8: alignability gate";
    const bool aligned_ok = alignability(det.priors, cfg.tau_align);
    const bool unaligned_ok = !alignability(ga_det.priors, ga_cfg.tau_align);
    c.pass = aligned_ok && unaligned_ok;
    c.detail = "aligned pair pi_p_u=" + fmt(det.priors.pi_p_u) +
               " -> alignable=" + (aligned_ok ? "true" : "false") +
               "; pi_p_u=0 pair pi_p_u=" + fmt(ga_det.priors.pi_p_u) +
               " -> alignable=" + (!unaligned_ok ? "true" : "false");
    out.push_back(std::move(c));
  }

  {
    AlignTrainConfig acfg;
    acfg.enc = cfg.enc;
    acfg.epochs = 400;
    acfg.lr = 0.01;
    acfg.n_negatives = 64;
    acfg.seed = seed;
    Matrix hf = train_alignment_model(pair, split, acfg);
    MetricReport report = evaluate_pair(hf, pair, split, &det.labels, SimMetric::Csls, 10);
    CheckResult c;
    c.name = "criterion 9: desk-scale detection F1 and relaxed Hits@1";
    c.pass = report.detection.f1 >= 0.8 && report.relaxed_hits.at(1) >= 0.5;
    c.detail = "detection f1=" + fmt(report.detection.f1) +
               " relaxed hits@1=" + fmt(report.relaxed_hits.at(1));
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<CheckResult> verify_metrics(std::uint64_t seed) {
  std::vector<CheckResult> out;

  {
    // Universe with dangling fraction 0.583 and an all-dangling classifier.
    const int n = 1000, n_dang = 583;
    std::vector<std::uint8_t> pred(n, 1), truth(n, 0);
    for (int i = 0; i < n_dang; ++i) truth[i] = 1;
    Prf prf = detection_prf(pred, truth);
    CheckResult c;
    c.name = "criterion 10a: trivial all-dangling classifier reproduces .583/1/.736";
    c.pass = std::abs(prf.precision - 0.583) < 1e-3 && std::abs(prf.recall - 1.0) < 1e-3 &&
             std::abs(prf.f1 - 0.736) < 1e-3;
    c.detail = "precision=" + fmt(prf.precision) + " recall=" + fmt(prf.recall) +
               " f1=" + fmt(prf.f1);
    out.push_back(std::move(c));
  }

  {
    auto rng = make_rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    bool ok = true;
    for (int t = 0; t < 50 && ok; ++t) {
      const double dp = unit(rng), dr = unit(rng), h11 = unit(rng);
      Prf prf = consolidated_alignment_prf(dp, dr, h11);
      ok = prf.precision == dp * h11 && prf.recall == dr * h11;
      if (prf.precision + prf.recall > 0.0) {
        const double f1 = 2.0 * prf.precision * prf.recall / (prf.precision + prf.recall);
        ok = ok && std::abs(prf.f1 - f1) < 1e-15;
      }
    }
    CheckResult c;
    c.name = "criterion 10b: consolidated precision/recall identities";
    c.pass = ok;
    c.detail = ok ? "prec = det_p * h@1_t11 and rec = det_r * h@1_t11 exactly"
                  : "identity violated";
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<CheckResult> verify_oracle_equivalence(std::uint64_t seed) {
  std::vector<CheckResult> out;
  auto rng = make_rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_int_distribution<int> ns_dist(2, 50), nt_dist(2, 60), d_dist(3, 12);

  bool csls_ok = true, nn_ok = true;
  std::string detail;
  for (int t = 0; t < 50; ++t) {
    const int ns = ns_dist(rng), nt = nt_dist(rng), d = d_dist(rng);
    std::uniform_int_distribution<int> k_dist(1, std::min(ns, nt));
    const int k = k_dist(rng);
    Matrix src(ns, d), tgt(nt, d);
    for (std::size_t i = 0; i < src.size(); ++i) src.data()[i] = gauss(rng);
    for (std::size_t i = 0; i < tgt.size(); ++i) tgt.data()[i] = gauss(rng);

    Matrix fast = csls_matrix(src, tgt, k);
    Matrix naive = naive_csls(src, tgt, k);
    if (!(fast == naive)) {
      csls_ok = false;
      detail = "csls mismatch at instance " + std::to_string(t);
      break;
    }
    if (mutual_nn_pairs(fast) != naive_mutual_nn(fast)) {
      nn_ok = false;
      detail = "mutual-nn mismatch at instance " + std::to_string(t);
      break;
    }
  }
  CheckResult c;
  c.name = "criterion 11: csls and mutual-nn agree exactly with naive oracles";
  c.pass = csls_ok && nn_ok;
  c.detail = c.pass ? "bit-exact over 50 random instances up to 50x60" : detail;
  out.push_back(std::move(c));
  return out;
}

std::vector<CheckResult> verify_all(std::uint64_t seed) {
  std::vector<CheckResult> all;
  auto append = [&all](std::vector<CheckResult> part) {
    for (auto& c : part) all.push_back(std::move(c));
  };
  append(verify_pu_oracles(seed));
  append(verify_lemma_identities(seed));
  append(verify_gradients(seed));
  append(verify_structural(seed));
  append(verify_pipeline(seed));
  append(verify_metrics(seed));
  append(verify_oracle_equivalence(seed));
  return all;
}

}  // namespace lambda
