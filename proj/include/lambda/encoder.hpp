#pragma once

#include <filesystem>
#include <vector>

#include "lambda/common.hpp"
#include "lambda/kgdata.hpp"

namespace lambda {

struct EncoderConfig {
  int dim = 128;
  int depth = 2;  // number of aggregation layers L
  int n_proxy = 64;
  double dropout = 0.3;  // applied to layer inputs during training
  int clf_hidden = 0;    // 0 -> dim
  // Treat equal relation ids in the two stores as the same relation. Off for
  // real datasets (separate vocabularies per language); the synthetic
  // generator produces a shared vocabulary.
  bool shared_relations = false;

  int hidden() const { return clf_hidden > 0 ? clf_hidden : dim; }
};

// Both graphs are encoded as one union graph: source entities keep their
// ids, target entities are shifted by n_src. Each triple contributes an
// incidence at both endpoints, so aggregation is direction-symmetric.
struct EncodeGraph {
  struct Incidence {
    EntityId entity;    // aggregating entity i
    RelationId rel;     // relation k of the connecting triple
    EntityId neighbor;  // message source j
    auto operator<=>(const Incidence&) const = default;
  };

  int n_src = 0;
  int n_entities = 0;
  int n_relations = 0;
  std::vector<Incidence> inc;           // sorted by (entity, rel, neighbor)
  std::vector<std::int64_t> offsets;    // CSR over inc, size n_entities + 1

  static EncodeGraph build(const KGPair& pair, bool shared_relations);
};

struct EncoderParams {
  int n_entities = 0;
  int n_relations = 0;
  int dim = 0;
  int depth = 0;
  int n_proxy = 0;
  int clf_hidden = 0;

  Matrix ent_emb;                 // n x d, h^0
  Matrix rel_emb;                 // R x d
  std::vector<double> indicator;  // n, the per-entity r_e scalars
  Matrix rel_proj;                // d x d, W_r
  std::vector<double> attn_vec;   // d, v
  Matrix proxies;                 // n_proxy x (L+1)d
  Matrix gate_weight;             // (L+1)d x (L+1)d
  std::vector<double> gate_bias;  // (L+1)d
  Matrix clf_w1;                  // hidden x ((L+1)d + 1)
  std::vector<double> clf_b1;     // hidden
  Matrix clf_w2;                  // 2 x hidden
  std::vector<double> clf_b2;     // 2

  int cat_dim() const { return (depth + 1) * dim; }

  static EncoderParams init(const EncoderConfig& cfg, int n_entities, int n_relations,
                            std::uint64_t seed);

  // Applies fn to every trainable tensor, in a fixed order shared with
  // EncoderGrads so the optimizer can walk them pairwise.
  template <typename Fn>
  void for_each_tensor(Fn&& fn) {
    fn(std::span<double>(ent_emb.data(), ent_emb.size()));
    fn(std::span<double>(rel_emb.data(), rel_emb.size()));
    fn(std::span<double>(indicator));
    fn(std::span<double>(rel_proj.data(), rel_proj.size()));
    fn(std::span<double>(attn_vec));
    fn(std::span<double>(proxies.data(), proxies.size()));
    fn(std::span<double>(gate_weight.data(), gate_weight.size()));
    fn(std::span<double>(gate_bias));
    fn(std::span<double>(clf_w1.data(), clf_w1.size()));
    fn(std::span<double>(clf_b1));
    fn(std::span<double>(clf_w2.data(), clf_w2.size()));
    fn(std::span<double>(clf_b2));
  }
};

struct EncoderGrads {
  Matrix ent_emb;
  Matrix rel_emb;
  std::vector<double> indicator;
  Matrix rel_proj;
  std::vector<double> attn_vec;
  Matrix proxies;
  Matrix gate_weight;
  std::vector<double> gate_bias;
  Matrix clf_w1;
  std::vector<double> clf_b1;
  Matrix clf_w2;
  std::vector<double> clf_b2;

  static EncoderGrads zeros_like(const EncoderParams& p);
  void reset();

  template <typename Fn>
  void for_each_tensor(Fn&& fn) {
    fn(std::span<double>(ent_emb.data(), ent_emb.size()));
    fn(std::span<double>(rel_emb.data(), rel_emb.size()));
    fn(std::span<double>(indicator));
    fn(std::span<double>(rel_proj.data(), rel_proj.size()));
    fn(std::span<double>(attn_vec));
    fn(std::span<double>(proxies.data(), proxies.size()));
    fn(std::span<double>(gate_weight.data(), gate_weight.size()));
    fn(std::span<double>(gate_bias));
    fn(std::span<double>(clf_w1.data(), clf_w1.size()));
    fn(std::span<double>(clf_b1));
    fn(std::span<double>(clf_w2.data(), clf_w2.size()));
    fn(std::span<double>(clf_b2));
  }
};

// Activations retained by the forward pass for the backward pass.
struct ForwardCache {
  std::vector<Matrix> h;          // depth+1 post-activation tables, n x d
  std::vector<Matrix> h_in;       // per-layer inputs after dropout, n x d
  std::vector<Matrix> drop_mask;  // per-layer masks (empty when not training)
  Matrix rel_unit;                // R x d, normalized relation embeddings
  std::vector<double> rel_norm;   // R
  Matrix rel_proj_vec;            // R x d, u_k = W_r h_k
  std::vector<double> rel_score;  // R, t_k = v . u_k
  std::vector<double> alpha;      // per incidence
  std::vector<Matrix> refl_dot;   // per layer: 1 x |inc| of s = unit_k . h_in_j
  Matrix hcat;                    // n x (L+1)d
  std::vector<double> hcat_norm;
  std::vector<double> proxy_norm;
  Matrix proxy_w;                 // n x n_proxy softmax weights
  Matrix hproxy;                  // n x (L+1)d
  Matrix theta;                   // n x (L+1)d
  Matrix hf;                      // n x ((L+1)d + 1)
};

// --- individual stages -----------------------------------------------------

std::vector<double> relation_project(std::span<const double> rel_vec, double r_e,
                                     const Matrix& w_r);

// Softmax over each entity's incident (relation, neighbor) pairs of
// v . (r_j W_r h_rk). Entities without incidences contribute no rows.
std::vector<double> attention_coeffs(const std::vector<EncodeGraph::Incidence>& edges,
                                     const EncoderParams& params);

// One aggregation layer: reflection transform per incidence, indicator and
// attention weights, identity-transform self loop, tanh activation.
Matrix layer_forward(const Matrix& h_prev, const EncoderParams& params,
                     const EncodeGraph& graph, const std::vector<double>& alpha);

Matrix intra_repr(const std::vector<Matrix>& layer_outputs);

Matrix proxy_attention(const Matrix& h, const Matrix& proxies);

Matrix gate_fuse(const Matrix& h, const Matrix& h_proxy, const Matrix& gate_weight,
                 const std::vector<double>& gate_bias, const std::vector<double>& indicator);

double orth_penalty(const Matrix& w_r);
// d/dW of scale * |W^T W - I|_F^2, accumulated into grad.
void orth_penalty_grad(const Matrix& w_r, double scale, Matrix& grad);

// --- full passes -------------------------------------------------------------

// Full forward pass; with training set, dropout masks are drawn from rng and
// retained in the cache.
void encoder_forward(const EncoderParams& params, const EncodeGraph& graph,
                     ForwardCache& cache, bool training = false, double dropout = 0.0,
                     std::mt19937_64* rng = nullptr);

// Accumulates parameter gradients for a loss whose gradient w.r.t. the final
// table h^f is d_hf.
void encoder_backward(const EncoderParams& params, const EncodeGraph& graph,
                      const ForwardCache& cache, const Matrix& d_hf, EncoderGrads& grads);

// Deterministic inference-mode composition of the stages above.
Matrix encode(const KGPair& pair, const EncoderParams& params, const EncoderConfig& cfg);

// --- classifier head ---------------------------------------------------------

// Two-class MLP head on h^f rows; returns (p(+1), p(-1)).
std::pair<double, double> classifier_head(std::span<const double> hf_row,
                                          const EncoderParams& params);

struct HeadCache {
  Matrix hidden;  // n x hidden, post-tanh
  Matrix prob;    // n x 2
};

void head_forward(const EncoderParams& params, const Matrix& hf, HeadCache& cache);

// d_prob_plus[i] = dL/d p_i(+1). Backpropagates through the softmax pair and
// the MLP; adds the h^f gradient into d_hf.
void head_backward(const EncoderParams& params, const Matrix& hf, const HeadCache& cache,
                   const std::vector<double>& d_prob_plus, EncoderGrads& grads, Matrix& d_hf);

// --- optimizer and checkpointing ---------------------------------------------

class RmsProp {
 public:
  RmsProp(double lr, double rho = 0.9, double eps = 1e-8) : lr_(lr), rho_(rho), eps_(eps) {}
  void step(EncoderParams& params, EncoderGrads& grads);

 private:
  double lr_, rho_, eps_;
  std::vector<std::vector<double>> state_;
};

// Binary checkpoint: "LMBD" magic, version, sizes, then parameter blocks as
// row-major 32-bit little-endian floats.
void save_checkpoint(const EncoderParams& params, const std::filesystem::path& path);
EncoderParams load_checkpoint(const std::filesystem::path& path);

}  // namespace lambda
