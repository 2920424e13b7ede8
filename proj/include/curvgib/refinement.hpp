#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <tuple>
#include <vector>

#include "curvgib/autodiff.hpp"
#include "curvgib/graph.hpp"
#include "curvgib/ib_curvature.hpp"
#include "curvgib/rng.hpp"

namespace curvgib {

/// Node pairs eligible for the refined structure, in canonical order.
/// `original[k]` marks pairs that are edges of the input graph.
struct CandidateSet {
  std::size_t node_count = 0;
  std::vector<Edge> edges;
  std::vector<bool> original;

  [[nodiscard]] std::size_t size() const noexcept { return edges.size(); }

  [[nodiscard]] std::optional<std::size_t> index_of(const Edge& e) const {
    const auto it = std::lower_bound(edges.begin(), edges.end(), e);
    if (it == edges.end() || *it != e) return std::nullopt;
    return static_cast<std::size_t>(it - edges.begin());
  }

  [[nodiscard]] Matrix original_column() const {
    Matrix a(edges.size(), 1);
    for (std::size_t k = 0; k < edges.size(); ++k) a[k] = original[k] ? 1.0 : 0.0;
    return a;
  }

  friend bool operator==(const CandidateSet&, const CandidateSet&) = default;
};

inline constexpr std::size_t kDenseCandidateLimit = 300;

/// Original edges plus, for each node, up to `per_node` two-hop partners
/// ranked by common-neighbor count (ties broken by a seeded hash).
inline CandidateSet two_hop_candidates(const Graph& g, std::size_t per_node, std::uint64_t seed) {
  const auto n = g.node_count();
  const KeyedStream tie(KeyedStream(seed).fork(0x32686f70ULL));
  std::vector<Edge> pairs = g.edges();
  std::vector<std::size_t> common(n, 0);
  std::vector<NodeId> touched;
  for (NodeId i = 0; i < n && per_node > 0; ++i) {
    touched.clear();
    for (NodeId m : g.neighbors(i)) {
      for (NodeId j : g.neighbors(m)) {
        if (j == i || g.has_edge(i, j)) continue;
        if (common[j]++ == 0) touched.push_back(j);
      }
    }
    std::vector<std::tuple<std::size_t, std::uint64_t, NodeId>> ranked;
    ranked.reserve(touched.size());
    for (NodeId j : touched) {
      const Edge e = canonical_edge(i, j);
      ranked.emplace_back(common[j], tie.bits((std::uint64_t{e.u} << 32) | e.v), j);
      common[j] = 0;
    }
    const auto take = std::min(per_node, ranked.size());
    std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(take), ranked.end(),
                      [](const auto& a, const auto& b) {
                        if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) > std::get<0>(b);
                        return std::get<1>(a) < std::get<1>(b);
                      });
    for (std::size_t k = 0; k < take; ++k) pairs.push_back(canonical_edge(i, std::get<2>(ranked[k])));
  }
  std::sort(pairs.begin(), pairs.end());
  pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
  CandidateSet c;
  c.node_count = n;
  c.edges = std::move(pairs);
  c.original.resize(c.edges.size());
  for (std::size_t k = 0; k < c.edges.size(); ++k) c.original[k] = g.has_edge(c.edges[k].u, c.edges[k].v);
  return c;
}

/// Every node pair. Limited to small graphs.
inline CandidateSet dense_candidates(const Graph& g) {
  const auto n = g.node_count();
  if (n > kDenseCandidateLimit) {
    throw UsageError("dense_candidates: limited to " + std::to_string(kDenseCandidateLimit) + " nodes");
  }
  CandidateSet c;
  c.node_count = n;
  c.edges.reserve(n * (n - 1) / 2);
  for (NodeId i = 0; i < n; ++i) {
    for (NodeId j = i + 1; j < n; ++j) {
      c.edges.push_back({i, j});
      c.original.push_back(g.has_edge(i, j));
    }
  }
  return c;
}

/// Discrete Ricci flow weights K = (1 - kappa_IB) * d(z_i, z_j) per edge.
inline Var ricci_flow_step(const IBCurvatureMap& kappa) {
  return ad::multiply(ad::one_minus(kappa.kappa), kappa.distance);
}

inline Var edge_probabilities(Var flow) { return ad::sigmoid(flow); }

/// Concrete (relaxed Bernoulli) sample from logits log(pi / (1 - pi)):
/// sigmoid((logit + log(eps / (1 - eps))) / tau), eps ~ U(0, 1) drawn from
/// `noise` at counter k for candidate k.
inline Var concrete_sample_logits(Var logits, double tau, const KeyedStream& noise) {
  if (!(tau > 0.0)) throw UsageError("concrete_sample: tau must be positive");
  Matrix g(logits.rows(), logits.cols());
  for (std::size_t k = 0; k < g.size(); ++k) {
    const double eps = noise.uniform_open(k);
    g[k] = std::log(eps) - std::log1p(-eps);
  }
  Tape& t = *logits.tape();
  return ad::sigmoid(ad::scale(ad::add(logits, t.constant(std::move(g))), 1.0 / tau));
}

inline Var concrete_sample(Var pi, double tau, const KeyedStream& noise) {
  Var logit = ad::subtract(ad::log(pi), ad::log(ad::one_minus(pi)));
  return concrete_sample_logits(logit, tau, noise);
}

/// Keep candidate k iff soft[k] >= 0.5.
inline Graph harden(const Matrix& soft, const CandidateSet& c) {
  if (soft.size() != c.size()) throw UsageError("harden: one soft value per candidate required");
  std::vector<Edge> kept;
  for (std::size_t k = 0; k < c.size(); ++k) {
    if (soft[k] >= 0.5) kept.push_back(c.edges[k]);
  }
  return graph_from_canonical(c.node_count, std::move(kept));
}

/// harden() plus the isolation guard: a node in `protect` left without any
/// edge keeps its highest-probability candidate.
inline Graph harden(const Matrix& soft, const CandidateSet& c, const Matrix& pi, const std::vector<bool>& protect) {
  if (pi.size() != c.size()) throw UsageError("harden: one probability per candidate required");
  std::vector<bool> keep(c.size());
  std::vector<std::size_t> deg(c.node_count, 0);
  for (std::size_t k = 0; k < c.size(); ++k) {
    keep[k] = soft[k] >= 0.5;
    if (keep[k]) {
      ++deg[c.edges[k].u];
      ++deg[c.edges[k].v];
    }
  }
  std::vector<std::ptrdiff_t> best(c.node_count, -1);
  for (std::size_t k = 0; k < c.size(); ++k) {
    for (NodeId x : {c.edges[k].u, c.edges[k].v}) {
      if (x < protect.size() && protect[x] && deg[x] == 0 &&
          (best[x] < 0 || pi[k] > pi[static_cast<std::size_t>(best[x])])) {
        best[x] = static_cast<std::ptrdiff_t>(k);
      }
    }
  }
  for (auto b : best) {
    if (b >= 0) keep[static_cast<std::size_t>(b)] = true;
  }
  Matrix hard(c.size(), 1);
  for (std::size_t k = 0; k < c.size(); ++k) hard[k] = keep[k] ? 1.0 : 0.0;
  return harden(hard, c);
}

/// Mean Bernoulli negative log-likelihood of the original adjacency over the
/// candidate pairs: -[A log pi + (1 - A) log(1 - pi)].
inline Var structure_likelihood(Var pi, const CandidateSet& c) {
  if (pi.rows() != c.size() || pi.cols() != 1) throw UsageError("structure_likelihood: pi must be |candidates| x 1");
  Tape& t = *pi.tape();
  Var a = t.constant(c.original_column());
  Var ll = ad::add(ad::multiply(a, ad::log(pi)), ad::multiply(ad::one_minus(a), ad::log(ad::one_minus(pi))));
  return ad::scale(ad::mean_all(ll), -1.0);
}

/// Same quantity from logits, using log(pi) = -softplus(-l) and
/// log(1 - pi) = -softplus(l) so saturated probabilities stay finite.
inline Var structure_likelihood_logits(Var logits, const CandidateSet& c) {
  if (logits.rows() != c.size() || logits.cols() != 1) {
    throw UsageError("structure_likelihood: logits must be |candidates| x 1");
  }
  Tape& t = *logits.tape();
  Var a = t.constant(c.original_column());
  Var nll = ad::add(ad::multiply(a, ad::softplus(ad::scale(logits, -1.0))),
                    ad::multiply(ad::one_minus(a), ad::softplus(logits)));
  return ad::mean_all(nll);
}

struct RefinedStructure {
  Matrix soft;  // per candidate
  Matrix pi;    // per candidate
  Graph hard;
  double tau = 0.5;
};

}  // namespace curvgib
