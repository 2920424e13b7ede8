#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "curvgib/error.hpp"
#include "curvgib/graph.hpp"

namespace curvgib {

/// Probability measure with finite support on graph nodes.
struct MassDistribution {
  std::vector<NodeId> support;
  std::vector<double> weights;

  [[nodiscard]] double weight_of(NodeId v) const {
    for (std::size_t k = 0; k < support.size(); ++k) {
      if (support[k] == v) return weights[k];
    }
    return 0.0;
  }
};

/// m_u: alpha at u and (1 - alpha) / deg(u) on each neighbor. An isolated
/// node keeps all of its mass (point mass at u).
inline MassDistribution mass_distribution(const Graph& g, NodeId u, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw UsageError("mass_distribution: alpha must lie in [0, 1]");
  if (u >= g.node_count()) throw UsageError("mass_distribution: node out of range");
  MassDistribution m;
  const auto nb = g.neighbors(u);
  if (nb.empty()) {
    m.support = {u};
    m.weights = {1.0};
    return m;
  }
  m.support.reserve(nb.size() + 1);
  m.weights.reserve(nb.size() + 1);
  if (alpha > 0.0) {
    m.support.push_back(u);
    m.weights.push_back(alpha);
  }
  if (alpha < 1.0) {
    const double w = (1.0 - alpha) / static_cast<double>(nb.size());
    for (NodeId v : nb) {
      m.support.push_back(v);
      m.weights.push_back(w);
    }
  }
  return m;
}

struct TransportResult {
  double cost = 0.0;
  Matrix plan;  // |mu| x |nu|
};

/// Exact discrete optimal transport by successive shortest augmenting paths
/// (min-cost flow with Johnson potentials) on the bipartite support graph.
///
/// `cost` is |mu| x |nu| and must be finite and nonnegative. Supplies are
/// real-valued; residual capacities below `tol` are treated as exhausted.
inline TransportResult min_cost_transport(std::span<const double> mu, std::span<const double> nu,
                                          const Matrix& cost, double tol = 1e-15) {
  const auto a = mu.size();
  const auto b = nu.size();
  if (cost.rows() != a || cost.cols() != b) throw UsageError("min_cost_transport: cost shape mismatch");
  for (double c : cost.data()) {
    if (!std::isfinite(c)) throw DataError("min_cost_transport: infinite cost (disconnected supports)");
    if (c < 0) throw UsageError("min_cost_transport: negative cost");
  }

  TransportResult res;
  res.plan = Matrix(a, b);
  std::vector<double> supply(mu.begin(), mu.end());
  std::vector<double> demand(nu.begin(), nu.end());

  // Node layout: 0..a-1 sources, a..a+b-1 sinks. Potentials keep reduced
  // costs nonnegative so a dense Dijkstra finds each shortest path.
  const auto n = a + b;
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> potential(n, 0.0);
  std::vector<double> dist(n);
  std::vector<std::ptrdiff_t> parent(n);
  std::vector<bool> done(n);

  auto residual_cost = [&](std::size_t from, std::size_t to) -> double {
    // Forward arcs source->sink always open; backward arcs need flow.
    if (from < a && to >= a) return cost(from, to - a);
    if (from >= a && to < a && res.plan(to, from - a) > tol) return -cost(to, from - a);
    return inf;
  };

  for (std::size_t guard = 0; guard < 4 * (a + 1) * (b + 1) + 16; ++guard) {
    std::fill(dist.begin(), dist.end(), inf);
    std::fill(parent.begin(), parent.end(), -1);
    std::fill(done.begin(), done.end(), false);
    bool any_supply = false;
    for (std::size_t i = 0; i < a; ++i) {
      if (supply[i] > tol) {
        dist[i] = 0.0;
        any_supply = true;
      }
    }
    if (!any_supply) break;
    for (std::size_t it = 0; it < n; ++it) {
      std::size_t x = n;
      for (std::size_t v = 0; v < n; ++v) {
        if (!done[v] && dist[v] < inf && (x == n || dist[v] < dist[x])) x = v;
      }
      if (x == n) break;
      done[x] = true;
      const std::size_t lo = x < a ? a : 0;
      const std::size_t hi = x < a ? n : a;
      for (std::size_t y = lo; y < hi; ++y) {
        const double c = residual_cost(x, y);
        if (c == inf) continue;
        const double nd = dist[x] + c + potential[x] - potential[y];
        if (nd < dist[y] - 1e-12) {
          dist[y] = nd;
          parent[y] = static_cast<std::ptrdiff_t>(x);
        }
      }
    }
    std::size_t sink = n;
    for (std::size_t j = 0; j < b; ++j) {
      if (demand[j] > tol && dist[a + j] < inf && (sink == n || dist[a + j] < dist[sink])) sink = a + j;
    }
    if (sink == n) break;
    for (std::size_t v = 0; v < n; ++v) {
      if (dist[v] < inf) potential[v] += dist[v];
    }
    // Bottleneck along the path.
    double amount = demand[sink - a];
    std::size_t v = sink;
    while (parent[v] >= 0) {
      const auto u = static_cast<std::size_t>(parent[v]);
      if (u >= a) amount = std::min(amount, res.plan(v, u - a));
      v = u;
    }
    amount = std::min(amount, supply[v]);
    supply[v] -= amount;
    demand[sink - a] -= amount;
    v = sink;
    while (parent[v] >= 0) {
      const auto u = static_cast<std::size_t>(parent[v]);
      if (u < a) {
        res.plan(u, v - a) += amount;
      } else {
        res.plan(v, u - a) -= amount;
      }
      v = u;
    }
  }
  for (std::size_t i = 0; i < a; ++i) {
    for (std::size_t j = 0; j < b; ++j) res.cost += res.plan(i, j) * cost(i, j);
  }
  return res;
}

/// 1-Wasserstein distance between two distributions under hop distance,
/// searching at most `radius_cap` hops. A support pair farther apart than
/// the cap is an error rather than an approximation.
inline double wasserstein1(const Graph& g, const MassDistribution& mu, const MassDistribution& nu,
                           int radius_cap = 3) {
  Matrix cost(mu.support.size(), nu.support.size());
  for (std::size_t i = 0; i < mu.support.size(); ++i) {
    const auto d = hop_distance(g, mu.support[i], std::span<const NodeId>(nu.support), radius_cap);
    for (std::size_t j = 0; j < nu.support.size(); ++j) {
      auto it = d.find(nu.support[j]);
      if (it == d.end()) {
        throw DataError("wasserstein1: nodes " + std::to_string(mu.support[i]) + " and " +
                        std::to_string(nu.support[j]) + " are not within " + std::to_string(radius_cap) +
                        " hops");
      }
      cost(i, j) = it->second;
    }
  }
  return min_cost_transport(mu.weights, nu.weights, cost).cost;
}

}  // namespace curvgib
