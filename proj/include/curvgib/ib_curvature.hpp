#pragma once

#include <cmath>
#include <vector>

#include "curvgib/autodiff.hpp"
#include "curvgib/graph.hpp"
#include "curvgib/rng.hpp"

namespace curvgib {

struct LatentMetricConfig {
  double floor_epsilon = 1e-6;
  // Ablation switch: use s_i - s_j instead of |s_i - s_j| in the numerator.
  bool signed_numerator = false;

  void validate() const {
    if (!(floor_epsilon > 0.0)) throw UsageError("LatentMetricConfig: floor_epsilon must be positive");
  }
};

/// Scalar readout f(Z) = Z w + b used by the curvature surrogate.
struct AffineHead {
  Parameter weight;  // H x 1
  Parameter bias;    // 1 x 1

  AffineHead() = default;
  AffineHead(std::size_t hidden, SeqRng& rng, double gain) {
    // Glorot-uniform scaled by `gain`.
    const double limit = gain * std::sqrt(6.0 / static_cast<double>(hidden + 1));
    Matrix w(hidden, 1);
    for (auto& v : w.data()) v = (2.0 * rng.uniform() - 1.0) * limit;
    weight = Parameter("head.weight", std::move(w));
    bias = Parameter("head.bias", Matrix(1, 1));
  }

  friend bool operator==(const AffineHead&, const AffineHead&) = default;
};

/// Differentiable per-edge curvature surrogate plus the pieces it was built
/// from, all living on one tape.
struct IBCurvatureMap {
  std::vector<Edge> edges;
  Var kappa;      // m x 1
  Var distance;   // m x 1, floored latent distance
  Var numerator;  // m x 1, |s_i - s_j|
  Var smoothed;   // N x 1, s = L f(Z)

  [[nodiscard]] std::vector<double> values() const { return kappa.value().data(); }
};

namespace detail {

inline void edge_endpoints(const std::vector<Edge>& edges, std::vector<std::size_t>& us,
                           std::vector<std::size_t>& vs) {
  us.resize(edges.size());
  vs.resize(edges.size());
  for (std::size_t k = 0; k < edges.size(); ++k) {
    us[k] = edges[k].u;
    vs[k] = edges[k].v;
  }
}

}  // namespace detail

/// Floored Euclidean distance between rows u and v of Z for each edge.
inline Var latent_distances(Var z, const std::vector<Edge>& edges, const LatentMetricConfig& cfg) {
  std::vector<std::size_t> us, vs;
  detail::edge_endpoints(edges, us, vs);
  return ad::pair_distance(z, std::move(us), std::move(vs), cfg.floor_epsilon);
}

// Single pair, for callers holding plain vectors.
inline double latent_distance(std::span<const double> zi, std::span<const double> zj,
                              const LatentMetricConfig& cfg) {
  if (zi.size() != zj.size()) throw UsageError("latent_distance: dimension mismatch");
  double s = 0.0;
  for (std::size_t k = 0; k < zi.size(); ++k) s += (zi[k] - zj[k]) * (zi[k] - zj[k]);
  return std::max(std::sqrt(s), cfg.floor_epsilon);
}

/// kappa_IB(i, j) = 1 - |[L f(Z)]_i - [L f(Z)]_j| / d(z_i, z_j) on each edge.
/// `mass` must be built over the same node set as Z.
inline IBCurvatureMap ib_curvature(const MassMatrix& mass, Var z, Var head_weight, Var head_bias,
                                   const LatentMetricConfig& cfg, const std::vector<Edge>& edges) {
  cfg.validate();
  if (mass.rows.rows != z.rows()) {
    throw UsageError("ib_curvature: mass matrix has " + std::to_string(mass.rows.rows) + " rows but Z has " +
                     std::to_string(z.rows()));
  }
  if (head_weight.rows() != z.cols() || head_weight.cols() != 1) {
    throw UsageError("ib_curvature: head weight must be " + std::to_string(z.cols()) + "x1");
  }
  IBCurvatureMap out;
  out.edges = edges;
  Var f = ad::add(ad::matmul(z, head_weight), head_bias);
  out.smoothed = ad::sparse_left(mass.rows, f);
  std::vector<std::size_t> us, vs;
  detail::edge_endpoints(edges, us, vs);
  Var diff = ad::subtract(ad::gather_rows(out.smoothed, us), ad::gather_rows(out.smoothed, vs));
  out.numerator = cfg.signed_numerator ? diff : ad::absolute_value(diff);
  out.distance = ad::pair_distance(z, std::move(us), std::move(vs), cfg.floor_epsilon);
  out.kappa = ad::one_minus(ad::divide(out.numerator, out.distance));
  return out;
}

inline IBCurvatureMap ib_curvature(const MassMatrix& mass, Var z, AffineHead& head, const LatentMetricConfig& cfg,
                                   const std::vector<Edge>& edges) {
  Tape& t = *z.tape();
  return ib_curvature(mass, z, t.param(head.weight), t.param(head.bias), cfg, edges);
}

/// IBCurv = sum over edges of (1 - kappa_IB) * d(z_i, z_j).
inline Var ibcurv_objective(const IBCurvatureMap& kappa) {
  return ad::sum_all(ad::multiply(ad::one_minus(kappa.kappa), kappa.distance));
}

/// Same sum with a per-edge weight column (e.g. a sampled adjacency).
inline Var ibcurv_objective(const IBCurvatureMap& kappa, Var edge_weights) {
  return ad::sum_all(ad::multiply(ad::multiply(ad::one_minus(kappa.kappa), kappa.distance), edge_weights));
}

}  // namespace curvgib
