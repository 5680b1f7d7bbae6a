#include "lambda/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "lambda/kernels.hpp"

namespace lambda {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

// out += M . x (row-major M)
void matvec_accum(const Matrix& m, std::span<const double> x, std::span<double> out) {
  for (std::size_t r = 0; r < m.rows(); ++r) out[r] += kern::dot(m.row(r), x);
}

// out += M^T . x
void matvec_t_accum(const Matrix& m, std::span<const double> x, std::span<double> out) {
  for (std::size_t r = 0; r < m.rows(); ++r) kern::axpy(x[r], m.row(r), out);
}

}  // namespace

EncodeGraph EncodeGraph::build(const KGPair& pair, bool shared_relations) {
  EncodeGraph g;
  g.n_src = pair.source.n_entities;
  g.n_entities = pair.source.n_entities + pair.target.n_entities;
  g.n_relations = shared_relations
                      ? std::max(pair.source.n_relations, pair.target.n_relations)
                      : pair.source.n_relations + pair.target.n_relations;
  const EntityId ent_off = pair.source.n_entities;
  const RelationId rel_off = shared_relations ? 0 : pair.source.n_relations;

  g.inc.reserve(2 * (pair.source.triples.size() + pair.target.triples.size()));
  for (const Triple& t : pair.source.triples) {
    g.inc.push_back({t.head, t.rel, t.tail});
    g.inc.push_back({t.tail, t.rel, t.head});
  }
  for (const Triple& t : pair.target.triples) {
    g.inc.push_back({t.head + ent_off, t.rel + rel_off, t.tail + ent_off});
    g.inc.push_back({t.tail + ent_off, t.rel + rel_off, t.head + ent_off});
  }
  // Canonical order makes every accumulation independent of the input
  // triple ordering.
  std::sort(g.inc.begin(), g.inc.end());

  g.offsets.assign(g.n_entities + 1, 0);
  for (const Incidence& e : g.inc) ++g.offsets[e.entity + 1];
  for (int i = 0; i < g.n_entities; ++i) g.offsets[i + 1] += g.offsets[i];
  return g;
}

EncoderParams EncoderParams::init(const EncoderConfig& cfg, int n_entities, int n_relations,
                                  std::uint64_t seed) {
  EncoderParams p;
  p.n_entities = n_entities;
  p.n_relations = n_relations;
  p.dim = cfg.dim;
  p.depth = cfg.depth;
  p.n_proxy = cfg.n_proxy;
  p.clf_hidden = cfg.hidden();
  const int d = cfg.dim;
  const int cat = p.cat_dim();

  auto rng = make_rng(seed);
  auto fill_normal = [&rng](Matrix& m, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  };

  p.ent_emb = Matrix(n_entities, d);
  fill_normal(p.ent_emb, 1.0 / std::sqrt(static_cast<double>(d)));
  p.rel_emb = Matrix(n_relations, d);
  fill_normal(p.rel_emb, 1.0 / std::sqrt(static_cast<double>(d)));
  p.indicator.assign(n_entities, 1.0);
  p.rel_proj = Matrix(d, d);
  for (int i = 0; i < d; ++i) p.rel_proj(i, i) = 1.0;
  p.attn_vec.assign(d, 0.0);
  {
    std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(d)));
    for (double& v : p.attn_vec) v = dist(rng);
  }
  p.proxies = Matrix(cfg.n_proxy, cat);
  fill_normal(p.proxies, 1.0 / std::sqrt(static_cast<double>(cat)));
  p.gate_weight = Matrix(cat, cat);
  p.gate_bias.assign(cat, 0.0);
  p.clf_w1 = Matrix(p.clf_hidden, cat + 1);
  fill_normal(p.clf_w1, 1.0 / std::sqrt(static_cast<double>(cat + 1)));
  p.clf_b1.assign(p.clf_hidden, 0.0);
  p.clf_w2 = Matrix(2, p.clf_hidden);
  fill_normal(p.clf_w2, 1.0 / std::sqrt(static_cast<double>(p.clf_hidden)));
  p.clf_b2.assign(2, 0.0);
  return p;
}

EncoderGrads EncoderGrads::zeros_like(const EncoderParams& p) {
  EncoderGrads g;
  g.ent_emb = Matrix(p.ent_emb.rows(), p.ent_emb.cols());
  g.rel_emb = Matrix(p.rel_emb.rows(), p.rel_emb.cols());
  g.indicator.assign(p.indicator.size(), 0.0);
  g.rel_proj = Matrix(p.rel_proj.rows(), p.rel_proj.cols());
  g.attn_vec.assign(p.attn_vec.size(), 0.0);
  g.proxies = Matrix(p.proxies.rows(), p.proxies.cols());
  g.gate_weight = Matrix(p.gate_weight.rows(), p.gate_weight.cols());
  g.gate_bias.assign(p.gate_bias.size(), 0.0);
  g.clf_w1 = Matrix(p.clf_w1.rows(), p.clf_w1.cols());
  g.clf_b1.assign(p.clf_b1.size(), 0.0);
  g.clf_w2 = Matrix(p.clf_w2.rows(), p.clf_w2.cols());
  g.clf_b2.assign(p.clf_b2.size(), 0.0);
  return g;
}

void EncoderGrads::reset() {
  for_each_tensor([](std::span<double> t) { std::fill(t.begin(), t.end(), 0.0); });
}

std::vector<double> relation_project(std::span<const double> rel_vec, double r_e,
                                     const Matrix& w_r) {
  require(w_r.cols() == rel_vec.size(), "relation_project: shape mismatch");
  std::vector<double> out(w_r.rows(), 0.0);
  for (std::size_t r = 0; r < w_r.rows(); ++r) out[r] = r_e * kern::dot(w_r.row(r), rel_vec);
  return out;
}

std::vector<double> attention_coeffs(const std::vector<EncodeGraph::Incidence>& edges,
                                     const EncoderParams& params) {
  // t_k = v . (W_r h_rk); logit for (i, k, j) is r_j * t_k.
  std::vector<double> rel_score(params.n_relations, 0.0);
  for (int k = 0; k < params.n_relations; ++k) {
    auto u = relation_project(params.rel_emb.row(k), 1.0, params.rel_proj);
    rel_score[k] = kern::dot(params.attn_vec, u);
  }

  std::vector<std::size_t> order(edges.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return edges[a].entity < edges[b].entity;
  });

  std::vector<double> alpha(edges.size(), 0.0);
  std::size_t pos = 0;
  while (pos < order.size()) {
    std::size_t end = pos;
    while (end < order.size() && edges[order[end]].entity == edges[order[pos]].entity) ++end;
    double max_z = -std::numeric_limits<double>::infinity();
    for (std::size_t e = pos; e < end; ++e) {
      const auto& edge = edges[order[e]];
      max_z = std::max(max_z, params.indicator[edge.neighbor] * rel_score[edge.rel]);
    }
    double denom = 0.0;
    for (std::size_t e = pos; e < end; ++e) {
      const auto& edge = edges[order[e]];
      double z = params.indicator[edge.neighbor] * rel_score[edge.rel];
      alpha[order[e]] = std::exp(z - max_z);
      denom += alpha[order[e]];
    }
    for (std::size_t e = pos; e < end; ++e) alpha[order[e]] /= denom;
    pos = end;
  }
  return alpha;
}

Matrix layer_forward(const Matrix& h_prev, const EncoderParams& params,
                     const EncodeGraph& graph, const std::vector<double>& alpha) {
  require(h_prev.cols() == static_cast<std::size_t>(params.dim), "layer_forward: width mismatch");
  const int d = params.dim;
  Matrix out(h_prev.rows(), d);

  Matrix unit(params.n_relations, d);
  for (int k = 0; k < params.n_relations; ++k) {
    double n2 = kern::sq_norm(params.rel_emb.row(k));
    if (n2 > 0.0) {
      double inv = 1.0 / std::sqrt(n2);
      for (int c = 0; c < d; ++c) unit(k, c) = params.rel_emb(k, c) * inv;
    }
  }

  for (int i = 0; i < graph.n_entities; ++i) {
    auto acc = out.row(i);
    kern::axpy(std::tanh(params.indicator[i]), h_prev.row(i), acc);
    for (std::int64_t e = graph.offsets[i]; e < graph.offsets[i + 1]; ++e) {
      const auto& edge = graph.inc[e];
      double w = std::tanh(params.indicator[edge.neighbor]) * alpha[e];
      double s = kern::dot(unit.row(edge.rel), h_prev.row(edge.neighbor));
      kern::axpy(w, h_prev.row(edge.neighbor), acc);
      kern::axpy(-2.0 * s * w, unit.row(edge.rel), acc);
    }
    kern::tanh_apply(acc, acc);
  }
  return out;
}

Matrix intra_repr(const std::vector<Matrix>& layer_outputs) {
  require(!layer_outputs.empty(), "intra_repr: no layers");
  const std::size_t n = layer_outputs[0].rows();
  std::size_t width = 0;
  for (const Matrix& m : layer_outputs) {
    require(m.rows() == n, "intra_repr: row mismatch");
    width += m.cols();
  }
  Matrix out(n, width);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t off = 0;
    for (const Matrix& m : layer_outputs) {
      auto src = m.row(i);
      std::copy(src.begin(), src.end(), out.row(i).begin() + off);
      off += m.cols();
    }
  }
  return out;
}

Matrix proxy_attention(const Matrix& h, const Matrix& proxies) {
  require(proxies.rows() >= 1, "proxy_attention: need at least one proxy");
  require(h.cols() == proxies.cols(), "proxy_attention: width mismatch");
  const std::size_t n = h.rows();
  const std::size_t np = proxies.rows();

  std::vector<double> pnorm(np);
  for (std::size_t p = 0; p < np; ++p) pnorm[p] = std::sqrt(kern::sq_norm(proxies.row(p)));

  Matrix out(n, h.cols());
  std::vector<double> cosv(np), w(np);
  for (std::size_t i = 0; i < n; ++i) {
    double hn = std::sqrt(kern::sq_norm(h.row(i)));
    for (std::size_t p = 0; p < np; ++p) {
      // Zero-norm vectors get similarity 0.
      cosv[p] = (hn > 0.0 && pnorm[p] > 0.0)
                    ? kern::dot(h.row(i), proxies.row(p)) / (hn * pnorm[p])
                    : 0.0;
    }
    double max_c = *std::max_element(cosv.begin(), cosv.end());
    double denom = 0.0;
    for (std::size_t p = 0; p < np; ++p) {
      w[p] = std::exp(cosv[p] - max_c);
      denom += w[p];
    }
    auto row = out.row(i);
    std::copy(h.row(i).begin(), h.row(i).end(), row.begin());
    for (std::size_t p = 0; p < np; ++p) kern::axpy(-w[p] / denom, proxies.row(p), row);
  }
  return out;
}

Matrix gate_fuse(const Matrix& h, const Matrix& h_proxy, const Matrix& gate_weight,
                 const std::vector<double>& gate_bias, const std::vector<double>& indicator) {
  require(h.rows() == h_proxy.rows() && h.cols() == h_proxy.cols(),
          "gate_fuse: shape mismatch");
  const std::size_t n = h.rows();
  const std::size_t w = h.cols();
  Matrix out(n, w + 1);
  std::vector<double> pre(w), theta(w);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy(gate_bias.begin(), gate_bias.end(), pre.begin());
    matvec_accum(gate_weight, h_proxy.row(i), pre);
    kern::sigmoid_apply(pre, theta);
    auto row = out.row(i);
    kern::lerp(theta, h.row(i), h_proxy.row(i), row.subspan(0, w));
    row[w] = indicator[i];
  }
  return out;
}

double orth_penalty(const Matrix& w_r) {
  require(w_r.rows() == w_r.cols(), "orth_penalty: square matrix required");
  const std::size_t d = w_r.rows();
  double acc = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      double g = 0.0;
      for (std::size_t k = 0; k < d; ++k) g += w_r(k, i) * w_r(k, j);
      if (i == j) g -= 1.0;
      acc += g * g;
    }
  }
  return acc;
}

void orth_penalty_grad(const Matrix& w_r, double scale, Matrix& grad) {
  // d/dW |W^T W - I|_F^2 = 4 W (W^T W - I)
  const std::size_t d = w_r.rows();
  Matrix gram(d, d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      double g = 0.0;
      for (std::size_t k = 0; k < d; ++k) g += w_r(k, i) * w_r(k, j);
      gram(i, j) = (i == j) ? g - 1.0 : g;
    }
  for (std::size_t r = 0; r < d; ++r)
    for (std::size_t c = 0; c < d; ++c) {
      double acc = 0.0;
      for (std::size_t k = 0; k < d; ++k) acc += w_r(r, k) * gram(k, c);
      grad(r, c) += 4.0 * scale * acc;
    }
}

void encoder_forward(const EncoderParams& params, const EncodeGraph& graph,
                     ForwardCache& cache, bool training, double dropout,
                     std::mt19937_64* rng) {
  const int n = graph.n_entities;
  const int d = params.dim;
  const int L = params.depth;
  require(params.n_entities == n, "encoder_forward: entity count mismatch");
  require(params.n_relations == graph.n_relations, "encoder_forward: relation count mismatch");
  const bool with_dropout = training && dropout > 0.0;
  require(!with_dropout || rng != nullptr, "encoder_forward: dropout requires an rng");

  // Relation-side precomputation shared by attention and reflections.
  cache.rel_unit = Matrix(params.n_relations, d);
  cache.rel_norm.assign(params.n_relations, 0.0);
  cache.rel_proj_vec = Matrix(params.n_relations, d);
  cache.rel_score.assign(params.n_relations, 0.0);
  for (int k = 0; k < params.n_relations; ++k) {
    double n2 = kern::sq_norm(params.rel_emb.row(k));
    cache.rel_norm[k] = std::sqrt(n2);
    if (n2 > 0.0) {
      double inv = 1.0 / cache.rel_norm[k];
      for (int c = 0; c < d; ++c) cache.rel_unit(k, c) = params.rel_emb(k, c) * inv;
    }
    auto u = cache.rel_proj_vec.row(k);
    matvec_accum(params.rel_proj, params.rel_emb.row(k), u);
    cache.rel_score[k] = kern::dot(params.attn_vec, u);
  }

  // Attention over each entity's incidences, shared by every layer.
  cache.alpha.assign(graph.inc.size(), 0.0);
  for (int i = 0; i < n; ++i) {
    const std::int64_t b = graph.offsets[i], e = graph.offsets[i + 1];
    if (b == e) continue;
    double max_z = -std::numeric_limits<double>::infinity();
    for (std::int64_t t = b; t < e; ++t) {
      const auto& edge = graph.inc[t];
      max_z = std::max(max_z, params.indicator[edge.neighbor] * cache.rel_score[edge.rel]);
    }
    double denom = 0.0;
    for (std::int64_t t = b; t < e; ++t) {
      const auto& edge = graph.inc[t];
      double z = params.indicator[edge.neighbor] * cache.rel_score[edge.rel];
      cache.alpha[t] = std::exp(z - max_z);
      denom += cache.alpha[t];
    }
    for (std::int64_t t = b; t < e; ++t) cache.alpha[t] /= denom;
  }

  cache.h.assign(L + 1, Matrix());
  cache.h_in.assign(L, Matrix());
  cache.drop_mask.assign(with_dropout ? L : 0, Matrix());
  cache.refl_dot.assign(L, Matrix());
  cache.h[0] = params.ent_emb;

  std::uniform_real_distribution<double> unit_dist(0.0, 1.0);
  for (int l = 0; l < L; ++l) {
    if (with_dropout) {
      cache.drop_mask[l] = Matrix(n, d);
      const double keep = 1.0 - dropout;
      for (std::size_t t = 0; t < cache.drop_mask[l].size(); ++t)
        cache.drop_mask[l].data()[t] = unit_dist(*rng) < keep ? 1.0 / keep : 0.0;
      cache.h_in[l] = Matrix(n, d);
      for (std::size_t t = 0; t < cache.h_in[l].size(); ++t)
        cache.h_in[l].data()[t] = cache.h[l].data()[t] * cache.drop_mask[l].data()[t];
    } else {
      cache.h_in[l] = cache.h[l];
    }

    const Matrix& hin = cache.h_in[l];
    cache.refl_dot[l] = Matrix(1, graph.inc.size());
    Matrix next(n, d);
    for (int i = 0; i < n; ++i) {
      auto acc = next.row(i);
      kern::axpy(std::tanh(params.indicator[i]), hin.row(i), acc);
      for (std::int64_t e = graph.offsets[i]; e < graph.offsets[i + 1]; ++e) {
        const auto& edge = graph.inc[e];
        double w = std::tanh(params.indicator[edge.neighbor]) * cache.alpha[e];
        double s = kern::dot(cache.rel_unit.row(edge.rel), hin.row(edge.neighbor));
        cache.refl_dot[l](0, e) = s;
        kern::axpy(w, hin.row(edge.neighbor), acc);
        kern::axpy(-2.0 * s * w, cache.rel_unit.row(edge.rel), acc);
      }
      kern::tanh_apply(acc, acc);
    }
    cache.h[l + 1] = std::move(next);
  }

  cache.hcat = intra_repr(cache.h);
  const std::size_t cat = cache.hcat.cols();

  // Proxy matching attention, cached for the backward pass.
  const int np = params.n_proxy;
  cache.hcat_norm.assign(n, 0.0);
  cache.proxy_norm.assign(np, 0.0);
  for (int p = 0; p < np; ++p) cache.proxy_norm[p] = std::sqrt(kern::sq_norm(params.proxies.row(p)));
  cache.proxy_w = Matrix(n, np);
  cache.hproxy = Matrix(n, cat);
  std::vector<double> cosv(np);
  for (int i = 0; i < n; ++i) {
    cache.hcat_norm[i] = std::sqrt(kern::sq_norm(cache.hcat.row(i)));
    for (int p = 0; p < np; ++p) {
      cosv[p] = (cache.hcat_norm[i] > 0.0 && cache.proxy_norm[p] > 0.0)
                    ? kern::dot(cache.hcat.row(i), params.proxies.row(p)) /
                          (cache.hcat_norm[i] * cache.proxy_norm[p])
                    : 0.0;
    }
    double max_c = *std::max_element(cosv.begin(), cosv.end());
    double denom = 0.0;
    for (int p = 0; p < np; ++p) {
      cache.proxy_w(i, p) = std::exp(cosv[p] - max_c);
      denom += cache.proxy_w(i, p);
    }
    auto row = cache.hproxy.row(i);
    std::copy(cache.hcat.row(i).begin(), cache.hcat.row(i).end(), row.begin());
    for (int p = 0; p < np; ++p) {
      cache.proxy_w(i, p) /= denom;
      kern::axpy(-cache.proxy_w(i, p), params.proxies.row(p), row);
    }
  }

  // Gating fusion with the raw indicator appended.
  cache.theta = Matrix(n, cat);
  cache.hf = Matrix(n, cat + 1);
  std::vector<double> pre(cat);
  for (int i = 0; i < n; ++i) {
    std::copy(params.gate_bias.begin(), params.gate_bias.end(), pre.begin());
    matvec_accum(params.gate_weight, cache.hproxy.row(i), pre);
    kern::sigmoid_apply(pre, cache.theta.row(i));
    auto row = cache.hf.row(i);
    kern::lerp(cache.theta.row(i), cache.hcat.row(i), cache.hproxy.row(i),
               row.subspan(0, cat));
    row[cat] = params.indicator[i];
  }
}

void encoder_backward(const EncoderParams& params, const EncodeGraph& graph,
                      const ForwardCache& cache, const Matrix& d_hf, EncoderGrads& grads) {
  const int n = graph.n_entities;
  const int d = params.dim;
  const int L = params.depth;
  const std::size_t cat = cache.hcat.cols();
  require(d_hf.rows() == static_cast<std::size_t>(n) && d_hf.cols() == cat + 1,
          "encoder_backward: d_hf shape mismatch");

  Matrix d_hcat(n, cat);
  Matrix d_hproxy(n, cat);

  // Gate fusion backward.
  std::vector<double> dtheta(cat), dpre(cat);
  for (int i = 0; i < n; ++i) {
    auto dfused = d_hf.row(i).subspan(0, cat);
    grads.indicator[i] += d_hf(i, cat);
    auto th = cache.theta.row(i);
    auto hc = cache.hcat.row(i);
    auto hp = cache.hproxy.row(i);
    for (std::size_t c = 0; c < cat; ++c) {
      dtheta[c] = dfused[c] * (hc[c] - hp[c]);
      d_hcat(i, c) += dfused[c] * th[c];
      d_hproxy(i, c) += dfused[c] * (1.0 - th[c]);
      dpre[c] = dtheta[c] * th[c] * (1.0 - th[c]);
    }
    for (std::size_t c = 0; c < cat; ++c) grads.gate_bias[c] += dpre[c];
    for (std::size_t r = 0; r < cat; ++r)
      kern::axpy(dpre[r], hp, grads.gate_weight.row(r));
    matvec_t_accum(params.gate_weight, dpre, d_hproxy.row(i));
  }

  // Proxy attention backward.
  const int np = params.n_proxy;
  std::vector<double> dw(np), dcos(np);
  for (int i = 0; i < n; ++i) {
    auto dhp = d_hproxy.row(i);
    auto a = cache.hcat.row(i);
    const double an = cache.hcat_norm[i];
    // Identity part of hproxy = hcat - sum_p w_p q_p.
    for (std::size_t c = 0; c < cat; ++c) d_hcat(i, c) += dhp[c];
    double s_mix = 0.0;
    for (int p = 0; p < np; ++p) {
      double w = cache.proxy_w(i, p);
      kern::axpy(-w, dhp, grads.proxies.row(p));
      dw[p] = -kern::dot(dhp, params.proxies.row(p));
      s_mix += w * dw[p];
    }
    for (int p = 0; p < np; ++p) {
      dcos[p] = cache.proxy_w(i, p) * (dw[p] - s_mix);
      const double qn = cache.proxy_norm[p];
      if (an <= 0.0 || qn <= 0.0) continue;
      auto q = params.proxies.row(p);
      double c = kern::dot(a, q) / (an * qn);
      double inv = 1.0 / (an * qn);
      kern::axpy(dcos[p] * inv, q, d_hcat.row(i));
      kern::axpy(-dcos[p] * c / (an * an), a, d_hcat.row(i));
      kern::axpy(dcos[p] * inv, a, grads.proxies.row(p));
      kern::axpy(-dcos[p] * c / (qn * qn), q, grads.proxies.row(p));
    }
  }

  // Split the concat gradient into per-layer tables.
  std::vector<Matrix> dh(L + 1);
  for (int l = 0; l <= L; ++l) {
    dh[l] = Matrix(n, d);
    for (int i = 0; i < n; ++i) {
      auto src = d_hcat.row(i).subspan(static_cast<std::size_t>(l) * d, d);
      std::copy(src.begin(), src.end(), dh[l].row(i).begin());
    }
  }

  std::vector<double> d_alpha(graph.inc.size(), 0.0);
  Matrix d_unit(params.n_relations, d);
  std::vector<double> da(d);
  for (int l = L - 1; l >= 0; --l) {
    const Matrix& hin = cache.h_in[l];
    const Matrix& hout = cache.h[l + 1];
    Matrix d_hin(n, d);
    for (int i = 0; i < n; ++i) {
      auto dout = dh[l + 1].row(i);
      auto ho = hout.row(i);
      for (int c = 0; c < d; ++c) da[c] = dout[c] * (1.0 - ho[c] * ho[c]);

      const double ti = std::tanh(params.indicator[i]);
      kern::axpy(ti, da, d_hin.row(i));
      grads.indicator[i] += (1.0 - ti * ti) * kern::dot(da, hin.row(i));

      for (std::int64_t e = graph.offsets[i]; e < graph.offsets[i + 1]; ++e) {
        const auto& edge = graph.inc[e];
        const double tj = std::tanh(params.indicator[edge.neighbor]);
        const double w = tj * cache.alpha[e];
        const double s = cache.refl_dot[l](0, e);
        auto u = cache.rel_unit.row(edge.rel);
        const double dau = kern::dot(da, u);
        kern::axpy(w, da, d_hin.row(edge.neighbor));
        kern::axpy(-2.0 * w * dau, u, d_hin.row(edge.neighbor));
        // Reflection wrote h_j - 2 s u with s = u . h_j.
        kern::axpy(-2.0 * w * dau, hin.row(edge.neighbor), d_unit.row(edge.rel));
        kern::axpy(-2.0 * w * s, da, d_unit.row(edge.rel));
        const double g = kern::dot(da, hin.row(edge.neighbor)) - 2.0 * s * dau;
        d_alpha[e] += tj * g;
        grads.indicator[edge.neighbor] += (1.0 - tj * tj) * cache.alpha[e] * g;
      }
    }
    if (!cache.drop_mask.empty()) {
      for (std::size_t t = 0; t < d_hin.size(); ++t)
        dh[l].data()[t] += d_hin.data()[t] * cache.drop_mask[l].data()[t];
    } else {
      for (std::size_t t = 0; t < d_hin.size(); ++t) dh[l].data()[t] += d_hin.data()[t];
    }
  }

  for (int i = 0; i < n; ++i)
    for (int c = 0; c < d; ++c) grads.ent_emb(i, c) += dh[0](i, c);

  // Attention softmax backward, one pass per entity row.
  std::vector<double> d_rel_score(params.n_relations, 0.0);
  for (int i = 0; i < n; ++i) {
    const std::int64_t b = graph.offsets[i], e = graph.offsets[i + 1];
    if (b == e) continue;
    double srow = 0.0;
    for (std::int64_t t = b; t < e; ++t) srow += cache.alpha[t] * d_alpha[t];
    for (std::int64_t t = b; t < e; ++t) {
      const auto& edge = graph.inc[t];
      const double dz = cache.alpha[t] * (d_alpha[t] - srow);
      grads.indicator[edge.neighbor] += dz * cache.rel_score[edge.rel];
      d_rel_score[edge.rel] += dz * params.indicator[edge.neighbor];
    }
  }

  // t_k = v . (W_r h_k) and the unit-vector chain back to the relation table.
  std::vector<double> wtv(d, 0.0);
  matvec_t_accum(params.rel_proj, params.attn_vec, wtv);
  for (int k = 0; k < params.n_relations; ++k) {
    const double dt = d_rel_score[k];
    if (dt != 0.0) {
      kern::axpy(dt, cache.rel_proj_vec.row(k), grads.attn_vec);
      for (int r = 0; r < d; ++r)
        kern::axpy(dt * params.attn_vec[r], params.rel_emb.row(k), grads.rel_proj.row(r));
      kern::axpy(dt, wtv, grads.rel_emb.row(k));
    }
    if (cache.rel_norm[k] > 0.0) {
      auto du = d_unit.row(k);
      auto u = cache.rel_unit.row(k);
      const double proj = kern::dot(du, u);
      const double inv = 1.0 / cache.rel_norm[k];
      kern::axpy(inv, du, grads.rel_emb.row(k));
      kern::axpy(-proj * inv, u, grads.rel_emb.row(k));
    }
  }
}

Matrix encode(const KGPair& pair, const EncoderParams& params, const EncoderConfig& cfg) {
  EncodeGraph graph = EncodeGraph::build(pair, cfg.shared_relations);
  require(params.n_entities == graph.n_entities, "encode: params sized for a different pair");
  require(params.n_relations == graph.n_relations, "encode: relation vocabulary mismatch");
  ForwardCache cache;
  encoder_forward(params, graph, cache);
  return cache.hf;
}

std::pair<double, double> classifier_head(std::span<const double> hf_row,
                                          const EncoderParams& params) {
  require(hf_row.size() == params.clf_w1.cols(), "classifier_head: width mismatch");
  std::vector<double> hid(params.clf_hidden);
  for (int r = 0; r < params.clf_hidden; ++r)
    hid[r] = std::tanh(kern::dot(params.clf_w1.row(r), hf_row) + params.clf_b1[r]);
  double z1 = kern::dot(params.clf_w2.row(0), hid) + params.clf_b2[0];
  double z2 = kern::dot(params.clf_w2.row(1), hid) + params.clf_b2[1];
  double m = std::max(z1, z2);
  double e1 = std::exp(z1 - m), e2 = std::exp(z2 - m);
  double p1 = e1 / (e1 + e2);
  return {p1, 1.0 - p1};
}

void head_forward(const EncoderParams& params, const Matrix& hf, HeadCache& cache) {
  const std::size_t n = hf.rows();
  cache.hidden = Matrix(n, params.clf_hidden);
  cache.prob = Matrix(n, 2);
  for (std::size_t i = 0; i < n; ++i) {
    auto hid = cache.hidden.row(i);
    for (int r = 0; r < params.clf_hidden; ++r)
      hid[r] = std::tanh(kern::dot(params.clf_w1.row(r), hf.row(i)) + params.clf_b1[r]);
    double z1 = kern::dot(params.clf_w2.row(0), hid) + params.clf_b2[0];
    double z2 = kern::dot(params.clf_w2.row(1), hid) + params.clf_b2[1];
    double m = std::max(z1, z2);
    double e1 = std::exp(z1 - m), e2 = std::exp(z2 - m);
    cache.prob(i, 0) = e1 / (e1 + e2);
    cache.prob(i, 1) = 1.0 - cache.prob(i, 0);
  }
}

void head_backward(const EncoderParams& params, const Matrix& hf, const HeadCache& cache,
                   const std::vector<double>& d_prob_plus, EncoderGrads& grads, Matrix& d_hf) {
  const std::size_t n = hf.rows();
  std::vector<double> dhid(params.clf_hidden), dpre(params.clf_hidden);
  for (std::size_t i = 0; i < n; ++i) {
    if (d_prob_plus[i] == 0.0) continue;
    const double p = cache.prob(i, 0);
    const double dz1 = d_prob_plus[i] * p * (1.0 - p);  // dz2 = -dz1
    auto hid = cache.hidden.row(i);
    kern::axpy(dz1, hid, grads.clf_w2.row(0));
    kern::axpy(-dz1, hid, grads.clf_w2.row(1));
    grads.clf_b2[0] += dz1;
    grads.clf_b2[1] -= dz1;
    for (int r = 0; r < params.clf_hidden; ++r) {
      dhid[r] = dz1 * (params.clf_w2(0, r) - params.clf_w2(1, r));
      dpre[r] = dhid[r] * (1.0 - hid[r] * hid[r]);
    }
    for (int r = 0; r < params.clf_hidden; ++r) {
      kern::axpy(dpre[r], hf.row(i), grads.clf_w1.row(r));
      grads.clf_b1[r] += dpre[r];
      kern::axpy(dpre[r], params.clf_w1.row(r), d_hf.row(i));
    }
  }
}

void RmsProp::step(EncoderParams& params, EncoderGrads& grads) {
  std::vector<std::span<double>> p_spans, g_spans;
  params.for_each_tensor([&](std::span<double> s) { p_spans.push_back(s); });
  grads.for_each_tensor([&](std::span<double> s) { g_spans.push_back(s); });
  if (state_.empty()) {
    state_.resize(p_spans.size());
    for (std::size_t t = 0; t < p_spans.size(); ++t) state_[t].assign(p_spans[t].size(), 0.0);
  }
  for (std::size_t t = 0; t < p_spans.size(); ++t) {
    auto p = p_spans[t];
    auto g = g_spans[t];
    auto& ms = state_[t];
    for (std::size_t i = 0; i < p.size(); ++i) {
      ms[i] = rho_ * ms[i] + (1.0 - rho_) * g[i] * g[i];
      p[i] -= lr_ * g[i] / (std::sqrt(ms[i]) + eps_);
    }
  }
}

namespace {

constexpr char kMagic[4] = {'L', 'M', 'B', 'D'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ofstream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t read_u32(std::ifstream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

void write_block(std::ofstream& out, std::span<const double> vals) {
  std::vector<float> buf(vals.size());
  for (std::size_t i = 0; i < vals.size(); ++i) buf[i] = static_cast<float>(vals[i]);
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

void read_block(std::ifstream& in, std::span<double> vals) {
  std::vector<float> buf(vals.size());
  in.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(buf.size() * sizeof(float)));
  for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = buf[i];
}

}  // namespace

void save_checkpoint(const EncoderParams& params, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out.write(kMagic, 4);
  write_u32(out, kVersion);
  write_u32(out, static_cast<std::uint32_t>(params.n_entities));
  write_u32(out, static_cast<std::uint32_t>(params.n_relations));
  write_u32(out, static_cast<std::uint32_t>(params.dim));
  write_u32(out, static_cast<std::uint32_t>(params.depth));
  write_u32(out, static_cast<std::uint32_t>(params.n_proxy));
  auto& p = const_cast<EncoderParams&>(params);
  p.for_each_tensor([&](std::span<double> t) { write_block(out, t); });
}

EncoderParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read checkpoint " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("bad checkpoint magic in " + path.string());
  std::uint32_t version = read_u32(in);
  if (version != kVersion) throw std::runtime_error("unsupported checkpoint version");
  std::uint32_t n = read_u32(in), r = read_u32(in), d = read_u32(in), L = read_u32(in),
                np = read_u32(in);
  EncoderConfig cfg;
  cfg.dim = static_cast<int>(d);
  cfg.depth = static_cast<int>(L);
  cfg.n_proxy = static_cast<int>(np);
  EncoderParams params = EncoderParams::init(cfg, static_cast<int>(n), static_cast<int>(r), 0);
  params.for_each_tensor([&](std::span<double> t) { read_block(in, t); });
  if (!in) throw std::runtime_error("checkpoint truncated: " + path.string());
  return params;
}

}  // namespace lambda
