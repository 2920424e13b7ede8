#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "curvgib/autodiff.hpp"
#include "curvgib/graph.hpp"
#include "curvgib/ib_curvature.hpp"
#include "curvgib/rng.hpp"
#include "curvgib/vib.hpp"

namespace curvgib {

struct CurvGnnConfig {
  std::size_t depth = 2;
  std::size_t hidden_dim = 64;
  std::size_t class_count = 2;
  double dropout_rate = 0.5;
  // Ablation switch: feed raw softplus weights without row normalization.
  bool normalize_weights = true;

  void validate() const {
    if (depth < 1) throw UsageError("CurvGnnConfig: depth must be >= 1");
    if (hidden_dim < 1) throw UsageError("CurvGnnConfig: hidden_dim must be >= 1");
    if (class_count < 1) throw UsageError("CurvGnnConfig: class_count must be >= 1");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw UsageError("CurvGnnConfig: dropout_rate must lie in [0, 1)");
  }
};

/// Directed view of an undirected graph for message passing: arc k carries
/// a message from src[k] into dst[k]; edge[k] is the undirected edge index.
struct MessageGraph {
  std::size_t node_count = 0;
  std::vector<std::size_t> src;
  std::vector<std::size_t> dst;
  std::vector<std::size_t> edge;

  explicit MessageGraph(const Graph& g) : node_count(g.node_count()) {
    const auto m = g.edge_count();
    src.reserve(2 * m);
    dst.reserve(2 * m);
    edge.reserve(2 * m);
    for (std::size_t k = 0; k < m; ++k) {
      const auto& e = g.edges()[k];
      src.push_back(e.v);
      dst.push_back(e.u);
      edge.push_back(k);
      src.push_back(e.u);
      dst.push_back(e.v);
      edge.push_back(k);
    }
  }
  [[nodiscard]] std::size_t arc_count() const noexcept { return src.size(); }
};

/// Maps curvature to positive edge weights: softplus(scale * kappa + shift).
struct EdgeWeightTransform {
  Parameter scale{"edge.scale", Matrix::scalar(1.0)};
  Parameter shift{"edge.shift", Matrix::scalar(0.0)};

  friend bool operator==(const EdgeWeightTransform&, const EdgeWeightTransform&) = default;
};

inline Matrix glorot_uniform(std::size_t fan_in, std::size_t fan_out, SeqRng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Matrix w(fan_in, fan_out);
  for (auto& v : w.data()) v = (2.0 * rng.uniform() - 1.0) * limit;
  return w;
}

/// Per-arc weights: softplus(scale * kappa_e + shift), normalized so that the
/// weights arriving at each node sum to 1. `kappa` is m x 1 over g's edges.
inline Var edge_weights(Var kappa, Var scale, Var shift, const MessageGraph& mg, bool normalize = true) {
  Var k_arc = ad::gather_rows(kappa, mg.edge);
  Var raw = ad::softplus(ad::add(ad::multiply(k_arc, scale), shift));
  if (!normalize) return raw;
  Var totals = ad::scatter_add_rows(raw, mg.dst, mg.node_count);
  return ad::divide(raw, ad::gather_rows(totals, mg.dst));
}

inline Var edge_weights(Var kappa, EdgeWeightTransform& t, const MessageGraph& mg, bool normalize = true) {
  Tape& tp = *kappa.tape();
  return edge_weights(kappa, tp.param(t.scale), tp.param(t.shift), mg, normalize);
}

/// relu(Z + (sum_j w_ij Z_j) W + b): residual curvature-weighted aggregation.
inline Var aggregate(Var z, Var weights, const MessageGraph& mg, Var w, Var b) {
  if (z.rows() != mg.node_count) throw UsageError("aggregate: Z rows do not match graph");
  if (weights.rows() != mg.arc_count()) throw UsageError("aggregate: one weight per arc required");
  Var msgs = ad::multiply(ad::gather_rows(z, mg.src), weights);
  Var summed = ad::scatter_add_rows(msgs, mg.dst, mg.node_count);
  return ad::relu(ad::add(z, ad::add(ad::matmul(summed, w), b)));
}

/// All trainable weights of the curvature-aware encoder and its heads.
struct CurvGnnParams {
  Parameter in_w, in_b;
  std::vector<Parameter> layer_w, layer_b;
  Parameter mu_w, mu_b, lv_w, lv_b;
  Parameter out_w, out_b;
  EdgeWeightTransform edge;
  AffineHead head;

  CurvGnnParams() = default;

  // Glorot-uniform weights, zero biases. The affine head is scaled by
  // `head_gain` so the initial surrogate curvature starts near 1.
  CurvGnnParams(std::size_t input_dim, const CurvGnnConfig& cfg, std::uint64_t seed, double head_gain = 1e-3) {
    cfg.validate();
    SeqRng rng(KeyedStream(seed).fork(0x696e6974ULL));
    const auto h = cfg.hidden_dim;
    in_w = Parameter("in.w", glorot_uniform(input_dim, h, rng));
    in_b = Parameter("in.b", Matrix(1, h));
    for (std::size_t l = 0; l < cfg.depth; ++l) {
      layer_w.emplace_back("layer" + std::to_string(l) + ".w", glorot_uniform(h, h, rng));
      layer_b.emplace_back("layer" + std::to_string(l) + ".b", Matrix(1, h));
    }
    mu_w = Parameter("mu.w", glorot_uniform(h, h, rng));
    mu_b = Parameter("mu.b", Matrix(1, h));
    lv_w = Parameter("logvar.w", glorot_uniform(h, h, rng));
    lv_b = Parameter("logvar.b", Matrix(1, h));
    out_w = Parameter("out.w", glorot_uniform(h, cfg.class_count, rng));
    out_b = Parameter("out.b", Matrix(1, cfg.class_count));
    head = AffineHead(h, rng, head_gain);
  }

  // Encoder, heads and edge transform (everything phase 1 trains).
  std::vector<Parameter*> encoder() {
    std::vector<Parameter*> p{&in_w, &in_b};
    for (std::size_t l = 0; l < layer_w.size(); ++l) {
      p.push_back(&layer_w[l]);
      p.push_back(&layer_b[l]);
    }
    for (Parameter* q : {&mu_w, &mu_b, &lv_w, &lv_b, &out_w, &out_b, &edge.scale, &edge.shift}) p.push_back(q);
    return p;
  }
  std::vector<Parameter*> curvature_head() { return {&head.weight, &head.bias}; }
  std::vector<Parameter*> all() {
    auto p = encoder();
    p.push_back(&head.weight);
    p.push_back(&head.bias);
    return p;
  }

  friend bool operator==(const CurvGnnParams&, const CurvGnnParams&) = default;
};

enum class Mode { Train, Eval };

struct EncoderOutput {
  Var hidden;   // N x H, output of the last aggregation layer
  Var mu;       // N x H
  Var log_var;  // N x H
  Var z;        // sampled in training, mu in evaluation
  Var logits;   // N x C
  std::vector<Var> layers;
};

namespace detail {

inline Var dropout(Var x, double rate, const KeyedStream& stream) {
  if (rate <= 0.0) return x;
  Matrix mask(x.rows(), x.cols());
  const double keep = 1.0 - rate;
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = stream.uniform(i) < keep ? 1.0 / keep : 0.0;
  return ad::multiply(x, x.tape()->constant(std::move(mask)));
}

}  // namespace detail

/// Curvature-aware encoder. `kappa` is m x 1 over g's edges (constant or
/// differentiable). `noise` seeds dropout and the reparameterization sample
/// in training mode; evaluation is deterministic and uses Z = mu.
inline EncoderOutput curv_gnn_forward(Var x, Var kappa, const MessageGraph& mg, const CurvGnnConfig& cfg,
                                      CurvGnnParams& p, Mode mode, const KeyedStream& noise = KeyedStream(0)) {
  cfg.validate();
  Tape& t = *x.tape();
  if (x.rows() != mg.node_count) throw UsageError("curv_gnn_forward: feature rows do not match graph");
  if (p.layer_w.size() != cfg.depth) throw UsageError("curv_gnn_forward: parameter depth does not match config");
  const bool train = mode == Mode::Train;
  EncoderOutput out;
  Var h = ad::relu(ad::add(ad::matmul(x, t.param(p.in_w)), t.param(p.in_b)));
  if (train) h = detail::dropout(h, cfg.dropout_rate, noise.fork(100));
  Var w = edge_weights(kappa, p.edge, mg, cfg.normalize_weights);
  for (std::size_t l = 0; l < cfg.depth; ++l) {
    h = aggregate(h, w, mg, t.param(p.layer_w[l]), t.param(p.layer_b[l]));
    if (train) h = detail::dropout(h, cfg.dropout_rate, noise.fork(101 + l));
    out.layers.push_back(h);
  }
  out.hidden = h;
  out.mu = ad::add(ad::matmul(h, t.param(p.mu_w)), t.param(p.mu_b));
  out.log_var = ad::clamp(ad::add(ad::matmul(h, t.param(p.lv_w)), t.param(p.lv_b)), kLogVarMin, kLogVarMax);
  out.z = train ? reparameterize({out.mu, out.log_var}, noise.fork(200)) : out.mu;
  out.logits = ad::add(ad::matmul(out.z, t.param(p.out_w)), t.param(p.out_b));
  return out;
}

// ---------------------------------------------------------------------------
// Plain GCN control: same residual layout, fixed mean aggregation, no
// curvature and no bottleneck. Coded independently of edge_weights/aggregate.
// ---------------------------------------------------------------------------

struct GcnParams {
  Parameter in_w, in_b;
  std::vector<Parameter> layer_w, layer_b;
  Parameter out_w, out_b;

  GcnParams() = default;
  GcnParams(std::size_t input_dim, const CurvGnnConfig& cfg, std::uint64_t seed) {
    SeqRng rng(KeyedStream(seed).fork(0x67636eULL));
    const auto h = cfg.hidden_dim;
    in_w = Parameter("in.w", glorot_uniform(input_dim, h, rng));
    in_b = Parameter("in.b", Matrix(1, h));
    for (std::size_t l = 0; l < cfg.depth; ++l) {
      layer_w.emplace_back("layer" + std::to_string(l) + ".w", glorot_uniform(h, h, rng));
      layer_b.emplace_back("layer" + std::to_string(l) + ".b", Matrix(1, h));
    }
    out_w = Parameter("out.w", glorot_uniform(h, cfg.class_count, rng));
    out_b = Parameter("out.b", Matrix(1, cfg.class_count));
  }

  std::vector<Parameter*> all() {
    std::vector<Parameter*> p{&in_w, &in_b};
    for (std::size_t l = 0; l < layer_w.size(); ++l) {
      p.push_back(&layer_w[l]);
      p.push_back(&layer_b[l]);
    }
    p.push_back(&out_w);
    p.push_back(&out_b);
    return p;
  }
};

struct GcnOutput {
  Var hidden;
  Var logits;
};

inline GcnOutput gcn_forward(Var x, const Graph& g, const CurvGnnConfig& cfg, GcnParams& p, Mode mode,
                             const KeyedStream& noise = KeyedStream(0)) {
  Tape& t = *x.tape();
  const auto n = g.node_count();
  // Mean-aggregation operator as a constant sparse matrix.
  SparseMatrix mean;
  mean.rows = mean.cols = n;
  mean.offsets.assign(n + 1, 0);
  for (NodeId i = 0; i < n; ++i) {
    const auto nb = g.neighbors(i);
    for (NodeId j : nb) {
      mean.indices.push_back(j);
      mean.values.push_back(1.0 / static_cast<double>(nb.size()));
    }
    mean.offsets[i + 1] = mean.indices.size();
  }
  const bool train = mode == Mode::Train;
  Var h = ad::relu(ad::add(ad::matmul(x, t.param(p.in_w)), t.param(p.in_b)));
  if (train) h = detail::dropout(h, cfg.dropout_rate, noise.fork(100));
  for (std::size_t l = 0; l < p.layer_w.size(); ++l) {
    Var m = ad::sparse_left(mean, h);
    h = ad::relu(ad::add(h, ad::add(ad::matmul(m, t.param(p.layer_w[l])), t.param(p.layer_b[l]))));
    if (train) h = detail::dropout(h, cfg.dropout_rate, noise.fork(101 + l));
  }
  return {h, ad::add(ad::matmul(h, t.param(p.out_w)), t.param(p.out_b))};
}

}  // namespace curvgib
