#pragma once

#include <algorithm>
#include <cstdio>
#include <map>
#include <mutex>
#include <ostream>
#include <string>
#include <vector>

#include "curvgib/graph.hpp"
#include "curvgib/parallel.hpp"
#include "curvgib/transport.hpp"

namespace curvgib {

enum class CurvatureMethod { Exact, Surrogate };

inline const char* curvature_method_name(CurvatureMethod m) {
  return m == CurvatureMethod::Exact ? "exact" : "surrogate";
}

/// Per-edge curvature aligned with a canonical edge list.
struct CurvatureMap {
  std::vector<Edge> edges;
  std::vector<double> kappa;
  double alpha = 0.5;
  CurvatureMethod method = CurvatureMethod::Exact;

  [[nodiscard]] std::size_t size() const noexcept { return edges.size(); }

  [[nodiscard]] std::optional<double> at(NodeId a, NodeId b) const {
    const Edge e = canonical_edge(a, b);
    const auto it = std::lower_bound(edges.begin(), edges.end(), e);
    if (it == edges.end() || *it != e) return std::nullopt;
    return kappa[static_cast<std::size_t>(it - edges.begin())];
  }
};

/// Exact Ollivier-Ricci curvature of one edge: 1 - W1(m_i, m_j) / d(i, j)
/// with d(i, j) = 1 on an edge.
inline double ollivier_ricci_edge(const Graph& g, NodeId i, NodeId j, double alpha, int radius_cap = 3) {
  const auto mi = mass_distribution(g, i, alpha);
  const auto mj = mass_distribution(g, j, alpha);
  const auto d = hop_distance(g, i, j, radius_cap);
  if (!d) throw DataError("ollivier_ricci: endpoints not within radius cap");
  return 1.0 - wasserstein1(g, mi, mj, radius_cap) / static_cast<double>(*d);
}

/// Per-(alpha, radius) cache of exact curvature values. Safe to share between
/// threads.
class CurvatureCache {
 public:
  std::optional<double> find(const Edge& e, double alpha) const {
    std::lock_guard lock(mutex_);
    auto it = values_.find({e, alpha});
    if (it == values_.end()) return std::nullopt;
    return it->second;
  }
  void store(const Edge& e, double alpha, double kappa) {
    std::lock_guard lock(mutex_);
    values_[{e, alpha}] = kappa;
  }

 private:
  mutable std::mutex mutex_;
  std::map<std::pair<Edge, double>, double> values_;
};

/// Exact curvature on every edge of `g`, computed on a worker pool and
/// assembled in canonical edge order.
inline CurvatureMap ollivier_ricci(const Graph& g, double alpha, int radius_cap = 3, std::size_t jobs = 1,
                                   CurvatureCache* cache = nullptr) {
  if (g.edge_count() == 0) throw UsageError("ollivier_ricci: graph has no edges");
  if (radius_cap < 1) throw UsageError("ollivier_ricci: radius_cap must be >= 1");
  CurvatureMap out;
  out.alpha = alpha;
  out.method = CurvatureMethod::Exact;
  out.edges = g.edges();
  out.kappa.assign(g.edge_count(), 0.0);
  parallel_for(g.edge_count(), jobs, [&](std::size_t k) {
    const Edge e = out.edges[k];
    if (cache) {
      if (auto hit = cache->find(e, alpha)) {
        out.kappa[k] = *hit;
        return;
      }
    }
    out.kappa[k] = ollivier_ricci_edge(g, e.u, e.v, alpha, radius_cap);
    if (cache) cache->store(e, alpha, out.kappa[k]);
  });
  return out;
}

inline std::string format_sig12(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

/// CSV with header src,dst,kappa; 12 significant digits; canonical order.
inline void write_curvature_csv(std::ostream& os, const CurvatureMap& m) {
  os << "src,dst,kappa\n";
  for (std::size_t k = 0; k < m.size(); ++k) {
    os << m.edges[k].u << ',' << m.edges[k].v << ',' << format_sig12(m.kappa[k]) << '\n';
  }
}

struct HistogramBin {
  double left = 0.0;
  double right = 0.0;
  std::size_t count = 0;
};

/// Equal-width bins over [min(kappa), 1]. The last bin is closed on the
/// right; values above 1 (possible only for the signed surrogate) land in it.
inline std::vector<HistogramBin> curvature_histogram(const std::vector<double>& kappa, std::size_t bins = 40) {
  if (bins == 0) throw UsageError("curvature_histogram: bins must be positive");
  std::vector<HistogramBin> out(bins);
  double lo = kappa.empty() ? 0.0 : *std::min_element(kappa.begin(), kappa.end());
  double hi = 1.0;
  if (lo >= hi) lo = hi - 1.0;
  const double width = (hi - lo) / static_cast<double>(bins);
  for (std::size_t b = 0; b < bins; ++b) {
    out[b].left = lo + width * static_cast<double>(b);
    out[b].right = b + 1 == bins ? hi : lo + width * static_cast<double>(b + 1);
  }
  for (double v : kappa) {
    auto b = static_cast<std::size_t>(std::max(0.0, (v - lo) / width));
    out[std::min(b, bins - 1)].count++;
  }
  return out;
}

inline void write_histogram_csv(std::ostream& os, const std::vector<HistogramBin>& h) {
  os << "bin_left,bin_right,count\n";
  for (const auto& b : h) os << format_sig12(b.left) << ',' << format_sig12(b.right) << ',' << b.count << '\n';
}

}  // namespace curvgib
