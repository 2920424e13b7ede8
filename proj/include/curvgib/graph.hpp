#pragma once

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdint>
#include <deque>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "curvgib/error.hpp"
#include "curvgib/matrix.hpp"
#include "curvgib/rng.hpp"

namespace curvgib {

using NodeId = std::uint32_t;

/// Undirected edge in canonical form (u < v).
struct Edge {
  NodeId u = 0;
  NodeId v = 0;

  friend auto operator<=>(const Edge&, const Edge&) = default;
};

inline Edge canonical_edge(NodeId a, NodeId b) noexcept {
  return a < b ? Edge{a, b} : Edge{b, a};
}

/// Simple undirected graph with CSR neighbor lists. Immutable after
/// construction; the edge list is sorted lexicographically and deduplicated.
class Graph {
 public:
  Graph() = default;

  [[nodiscard]] std::size_t node_count() const noexcept { return node_count_; }
  [[nodiscard]] std::size_t edge_count() const noexcept { return edges_.size(); }
  [[nodiscard]] const std::vector<Edge>& edges() const noexcept { return edges_; }

  [[nodiscard]] std::span<const NodeId> neighbors(NodeId i) const noexcept {
    return {adjacency_.data() + offsets_[i], offsets_[i + 1] - offsets_[i]};
  }
  [[nodiscard]] std::size_t degree(NodeId i) const noexcept {
    return offsets_[i + 1] - offsets_[i];
  }
  [[nodiscard]] std::vector<std::size_t> degrees() const {
    std::vector<std::size_t> d(node_count_);
    for (std::size_t i = 0; i < node_count_; ++i) d[i] = degree(static_cast<NodeId>(i));
    return d;
  }

  [[nodiscard]] bool has_edge(NodeId a, NodeId b) const noexcept {
    if (a >= node_count_ || b >= node_count_ || a == b) return false;
    const auto nb = neighbors(a);
    return std::binary_search(nb.begin(), nb.end(), b);
  }

  // Position of the canonical edge in edges(), if present.
  [[nodiscard]] std::optional<std::size_t> edge_index(NodeId a, NodeId b) const {
    const Edge e = canonical_edge(a, b);
    const auto it = std::lower_bound(edges_.begin(), edges_.end(), e);
    if (it == edges_.end() || *it != e) return std::nullopt;
    return static_cast<std::size_t>(it - edges_.begin());
  }

  friend bool operator==(const Graph& a, const Graph& b) {
    return a.node_count_ == b.node_count_ && a.edges_ == b.edges_;
  }

  friend Graph build_graph(const std::vector<std::pair<NodeId, NodeId>>&, std::size_t);
  friend Graph graph_from_canonical(std::size_t, std::vector<Edge>);

 private:
  void index() {
    offsets_.assign(node_count_ + 1, 0);
    for (const auto& e : edges_) {
      ++offsets_[e.u + 1];
      ++offsets_[e.v + 1];
    }
    std::partial_sum(offsets_.begin(), offsets_.end(), offsets_.begin());
    adjacency_.assign(2 * edges_.size(), 0);
    std::vector<std::size_t> cursor(offsets_.begin(), offsets_.end() - 1);
    for (const auto& e : edges_) {
      adjacency_[cursor[e.u]++] = e.v;
      adjacency_[cursor[e.v]++] = e.u;
    }
    for (std::size_t i = 0; i < node_count_; ++i) {
      std::sort(adjacency_.begin() + static_cast<std::ptrdiff_t>(offsets_[i]),
                adjacency_.begin() + static_cast<std::ptrdiff_t>(offsets_[i + 1]));
    }
  }

  std::size_t node_count_ = 0;
  std::vector<Edge> edges_;
  std::vector<std::size_t> offsets_{0};
  std::vector<NodeId> adjacency_;
};

/// Symmetrize, deduplicate and drop self-loops.
inline Graph build_graph(const std::vector<std::pair<NodeId, NodeId>>& pairs, std::size_t node_count) {
  if (node_count < 1) throw UsageError("build_graph: node_count must be >= 1");
  Graph g;
  g.node_count_ = node_count;
  g.edges_.reserve(pairs.size());
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const auto [a, b] = pairs[k];
    if (a >= node_count || b >= node_count) {
      throw UsageError("build_graph: edge " + std::to_string(k) + " (" + std::to_string(a) + ", " +
                       std::to_string(b) + ") out of range for " + std::to_string(node_count) +
                       " nodes");
    }
    if (a != b) g.edges_.push_back(canonical_edge(a, b));
  }
  std::sort(g.edges_.begin(), g.edges_.end());
  g.edges_.erase(std::unique(g.edges_.begin(), g.edges_.end()), g.edges_.end());
  g.index();
  return g;
}

// Fast path for edge lists that are already canonical, sorted and unique.
inline Graph graph_from_canonical(std::size_t node_count, std::vector<Edge> edges) {
  if (node_count < 1) throw UsageError("graph_from_canonical: node_count must be >= 1");
  Graph g;
  g.node_count_ = node_count;
  g.edges_ = std::move(edges);
  for (std::size_t k = 0; k < g.edges_.size(); ++k) {
    const auto& e = g.edges_[k];
    if (e.u >= e.v || e.v >= node_count || (k > 0 && !(g.edges_[k - 1] < e))) {
      throw UsageError("graph_from_canonical: edge list is not canonical");
    }
  }
  g.index();
  return g;
}

inline std::vector<std::pair<NodeId, NodeId>> edge_pairs(const Graph& g) {
  std::vector<std::pair<NodeId, NodeId>> out;
  out.reserve(g.edge_count());
  for (const auto& e : g.edges()) out.emplace_back(e.u, e.v);
  return out;
}

/// N x M node features.
struct FeatureMatrix {
  Matrix values;

  [[nodiscard]] std::size_t rows() const noexcept { return values.rows(); }
  [[nodiscard]] std::size_t dim() const noexcept { return values.cols(); }
  friend bool operator==(const FeatureMatrix&, const FeatureMatrix&) = default;
};

enum class Split { Train, Val, Test };

/// Per-node class labels and disjoint split masks.
struct LabelSet {
  std::vector<int> labels;
  std::vector<bool> train_mask;
  std::vector<bool> val_mask;
  std::vector<bool> test_mask;

  [[nodiscard]] std::size_t size() const noexcept { return labels.size(); }
  [[nodiscard]] int class_count() const {
    int c = 0;
    for (int l : labels) c = std::max(c, l + 1);
    return c;
  }
  [[nodiscard]] const std::vector<bool>& mask(Split s) const {
    switch (s) {
      case Split::Train: return train_mask;
      case Split::Val: return val_mask;
      case Split::Test: return test_mask;
    }
    return test_mask;
  }
  [[nodiscard]] static std::vector<std::size_t> indices(const std::vector<bool>& mask) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < mask.size(); ++i) {
      if (mask[i]) idx.push_back(i);
    }
    return idx;
  }

  // Throws DataError when masks overlap, lengths disagree, or a class has
  // no training node.
  void validate() const {
    const auto n = labels.size();
    if (train_mask.size() != n || val_mask.size() != n || test_mask.size() != n) {
      throw DataError("LabelSet: mask length does not match label count");
    }
    const int c = class_count();
    std::vector<bool> seen(static_cast<std::size_t>(std::max(c, 0)), false);
    for (std::size_t i = 0; i < n; ++i) {
      if (labels[i] < 0) throw DataError("LabelSet: negative label at node " + std::to_string(i));
      if (int(train_mask[i]) + int(val_mask[i]) + int(test_mask[i]) > 1) {
        throw DataError("LabelSet: node " + std::to_string(i) + " is in more than one split");
      }
      if (train_mask[i]) seen[static_cast<std::size_t>(labels[i])] = true;
    }
    for (int k = 0; k < c; ++k) {
      if (!seen[static_cast<std::size_t>(k)]) {
        throw DataError("LabelSet: class " + std::to_string(k) + " has no training node");
      }
    }
  }

  friend bool operator==(const LabelSet&, const LabelSet&) = default;
};

/// Row-stochastic mass operator L^a = a I + (1 - a) D^-1 A. Rows of isolated
/// nodes are identity rows.
struct MassMatrix {
  double alpha = 0.5;
  SparseMatrix rows;
};

inline MassMatrix mass_matrix(const Graph& g, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw UsageError("mass_matrix: alpha must lie in [0, 1], got " + std::to_string(alpha));
  }
  const auto n = g.node_count();
  MassMatrix m;
  m.alpha = alpha;
  auto& s = m.rows;
  s.rows = s.cols = n;
  s.offsets.assign(n + 1, 0);
  s.indices.reserve(n + 2 * g.edge_count());
  s.values.reserve(n + 2 * g.edge_count());
  for (NodeId i = 0; i < n; ++i) {
    const auto nb = g.neighbors(i);
    if (nb.empty()) {
      s.indices.push_back(i);
      s.values.push_back(1.0);
    } else {
      const double w = (1.0 - alpha) / static_cast<double>(nb.size());
      bool placed = false;
      for (NodeId j : nb) {
        if (!placed && j > i) {
          s.indices.push_back(i);
          s.values.push_back(alpha);
          placed = true;
        }
        s.indices.push_back(j);
        s.values.push_back(w);
      }
      if (!placed) {
        s.indices.push_back(i);
        s.values.push_back(alpha);
      }
    }
    s.offsets[i + 1] = s.indices.size();
  }
  return m;
}

/// Breadth-first hop counts from `source` to each of `targets`, exploring at
/// most `radius_cap` hops. Unreachable targets are absent from the result.
inline std::map<NodeId, int> hop_distance(const Graph& g, NodeId source,
                                          std::span<const NodeId> targets, int radius_cap) {
  if (radius_cap < 1) throw UsageError("hop_distance: radius_cap must be >= 1");
  std::map<NodeId, int> out;
  std::set<NodeId> wanted(targets.begin(), targets.end());
  if (wanted.erase(source) > 0) out[source] = 0;
  if (wanted.empty()) return out;

  std::vector<int> dist(g.node_count(), -1);
  dist[source] = 0;
  std::vector<NodeId> frontier{source};
  std::vector<NodeId> next;
  for (int depth = 1; depth <= radius_cap && !frontier.empty() && !wanted.empty(); ++depth) {
    next.clear();
    for (NodeId x : frontier) {
      for (NodeId y : g.neighbors(x)) {
        if (dist[y] >= 0) continue;
        dist[y] = depth;
        next.push_back(y);
        if (wanted.erase(y) > 0) out[y] = depth;
      }
    }
    frontier.swap(next);
  }
  return out;
}

inline std::optional<int> hop_distance(const Graph& g, NodeId source, NodeId target, int radius_cap) {
  const NodeId t[1] = {target};
  const auto m = hop_distance(g, source, std::span<const NodeId>(t), radius_cap);
  if (auto it = m.find(target); it != m.end()) return it->second;
  return std::nullopt;
}

enum class NoiseMode { Add, Remove, Mixed };

inline NoiseMode parse_noise_mode(const std::string& s) {
  if (s == "add") return NoiseMode::Add;
  if (s == "remove") return NoiseMode::Remove;
  if (s == "mixed") return NoiseMode::Mixed;
  throw UsageError("unknown noise mode '" + s + "' (expected add, remove or mixed)");
}

inline const char* noise_mode_name(NoiseMode m) {
  switch (m) {
    case NoiseMode::Add: return "add";
    case NoiseMode::Remove: return "remove";
    case NoiseMode::Mixed: return "mixed";
  }
  return "?";
}

/// Randomly remove existing edges and/or add non-edges. The budget is
/// floor(ratio * |E|); "mixed" spends half on removals and the rest on
/// additions. Additions never exceed the number of available non-edges.
inline Graph inject_noise(const Graph& g, double ratio, NoiseMode mode, std::uint64_t seed) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) {
    throw UsageError("inject_noise: ratio must lie in [0, 1]");
  }
  const auto budget = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(g.edge_count())));
  std::size_t n_remove = 0;
  std::size_t n_add = 0;
  switch (mode) {
    case NoiseMode::Remove: n_remove = budget; break;
    case NoiseMode::Add: n_add = budget; break;
    case NoiseMode::Mixed:
      n_remove = budget / 2;
      n_add = budget - n_remove;
      break;
  }
  SeqRng rng(KeyedStream(seed).fork(0x6e6f697365ULL));

  std::vector<Edge> kept = g.edges();
  if (n_remove > 0) {
    std::vector<std::size_t> order(kept.size());
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order.begin(), order.end());
    std::vector<bool> drop(kept.size(), false);
    for (std::size_t k = 0; k < n_remove; ++k) drop[order[k]] = true;
    std::vector<Edge> next;
    next.reserve(kept.size() - n_remove);
    for (std::size_t k = 0; k < kept.size(); ++k) {
      if (!drop[k]) next.push_back(kept[k]);
    }
    kept.swap(next);
  }

  if (n_add > 0) {
    const auto n = g.node_count();
    const std::size_t total_pairs = n * (n - 1) / 2;
    const std::size_t available = total_pairs - g.edge_count();
    n_add = std::min(n_add, available);
    std::set<Edge> added;
    if (n_add * 4 < available) {
      // Sparse regime: rejection sampling.
      while (added.size() < n_add) {
        const auto a = static_cast<NodeId>(rng.below(n));
        const auto b = static_cast<NodeId>(rng.below(n));
        if (a == b || g.has_edge(a, b)) continue;
        added.insert(canonical_edge(a, b));
      }
    } else {
      std::vector<Edge> pool;
      pool.reserve(available);
      for (NodeId a = 0; a < n; ++a) {
        for (NodeId b = a + 1; b < n; ++b) {
          if (!g.has_edge(a, b)) pool.push_back({a, b});
        }
      }
      rng.shuffle(pool.begin(), pool.end());
      added.insert(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n_add));
    }
    kept.insert(kept.end(), added.begin(), added.end());
    std::sort(kept.begin(), kept.end());
  }
  return graph_from_canonical(g.node_count(), std::move(kept));
}

struct SbmOptions {
  double train_fraction = 0.2;
  double val_fraction = 0.2;
};

struct SbmSample {
  Graph graph;
  FeatureMatrix features;
  LabelSet labels;
};

/// Stochastic block model with one-hot block features plus Gaussian noise and
/// stratified train/val/test masks (at least one training node per block).
inline SbmSample sbm_generate(const std::vector<std::size_t>& block_sizes, double p_in, double p_out,
                              std::size_t feature_dim, double feature_noise, std::uint64_t seed,
                              const SbmOptions& opt = {}) {
  if (block_sizes.empty()) throw UsageError("sbm_generate: block_sizes is empty");
  for (auto b : block_sizes) {
    if (b == 0) throw UsageError("sbm_generate: empty block");
  }
  if (!(p_in >= 0 && p_in <= 1 && p_out >= 0 && p_out <= 1)) {
    throw UsageError("sbm_generate: probabilities must lie in [0, 1]");
  }
  if (feature_dim < block_sizes.size()) {
    throw UsageError("sbm_generate: feature_dim must be >= number of blocks");
  }
  if (feature_noise < 0) throw UsageError("sbm_generate: feature_noise must be >= 0");

  const KeyedStream root(seed);
  std::vector<int> block;
  for (std::size_t b = 0; b < block_sizes.size(); ++b) {
    block.insert(block.end(), block_sizes[b], static_cast<int>(b));
  }
  const auto n = block.size();

  std::vector<Edge> edges;
  const KeyedStream edge_stream = root.fork(1);
  for (NodeId i = 0; i < n; ++i) {
    for (NodeId j = i + 1; j < n; ++j) {
      const double p = block[i] == block[j] ? p_in : p_out;
      const std::uint64_t counter = static_cast<std::uint64_t>(i) * n + j;
      if (edge_stream.uniform(counter) < p) edges.push_back({i, j});
    }
  }

  SbmSample out;
  out.graph = graph_from_canonical(n, std::move(edges));

  out.features.values = Matrix(n, feature_dim);
  const KeyedStream feat_stream = root.fork(2);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < feature_dim; ++c) {
      const double base = static_cast<std::size_t>(block[i]) == c ? 1.0 : 0.0;
      out.features.values(i, c) = base + feature_noise * feat_stream.normal(i * feature_dim + c);
    }
  }

  auto& ls = out.labels;
  ls.labels = block;
  ls.train_mask.assign(n, false);
  ls.val_mask.assign(n, false);
  ls.test_mask.assign(n, false);
  SeqRng split_rng(root.fork(3));
  std::size_t start = 0;
  for (auto size : block_sizes) {
    std::vector<std::size_t> members(size);
    std::iota(members.begin(), members.end(), start);
    split_rng.shuffle(members.begin(), members.end());
    const auto n_train = std::max<std::size_t>(1, static_cast<std::size_t>(opt.train_fraction * double(size)));
    const auto n_val = std::min(size - n_train, static_cast<std::size_t>(opt.val_fraction * double(size)));
    for (std::size_t k = 0; k < size; ++k) {
      if (k < n_train) {
        ls.train_mask[members[k]] = true;
      } else if (k < n_train + n_val) {
        ls.val_mask[members[k]] = true;
      } else {
        ls.test_mask[members[k]] = true;
      }
    }
    start += size;
  }
  return out;
}

}  // namespace curvgib
