#pragma once

#include <string>
#include <vector>

#include "curvgib/graph.hpp"

namespace curvgib {

struct InputFile {
  std::string path;
  std::uint64_t hash = 0;

  friend bool operator==(const InputFile&, const InputFile&) = default;
};

/// Graph, features and labels of one dataset plus where they came from.
struct DatasetBundle {
  std::string name;
  Graph graph;
  FeatureMatrix features;
  LabelSet labels;
  std::vector<InputFile> provenance;

  void validate() const {
    const auto n = graph.node_count();
    if (features.rows() != n) {
      throw DataError("dataset " + name + ": " + std::to_string(features.rows()) + " feature rows for " +
                      std::to_string(n) + " nodes");
    }
    if (labels.size() != n) {
      throw DataError("dataset " + name + ": " + std::to_string(labels.size()) + " labels for " +
                      std::to_string(n) + " nodes");
    }
    if (!features.values.all_finite()) throw DataError("dataset " + name + ": non-finite feature value");
    labels.validate();
  }

  // Combined content hash of the inputs, or of the in-memory data for
  // generated datasets.
  [[nodiscard]] std::uint64_t content_hash() const {
    std::uint64_t h = fnv1a64(name.data(), name.size());
    for (const auto& e : graph.edges()) h = fnv1a64(&e, sizeof(Edge), h);
    h = fnv1a64(features.values.data().data(), features.values.size() * sizeof(double), h);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const int row[4] = {labels.labels[i], int(labels.train_mask[i]), int(labels.val_mask[i]),
                          int(labels.test_mask[i])};
      h = fnv1a64(row, sizeof(row), h);
    }
    return h;
  }
};

inline DatasetBundle sbm_dataset(const std::vector<std::size_t>& blocks, double p_in, double p_out,
                                 std::size_t feature_dim, double feature_noise, std::uint64_t seed,
                                 const SbmOptions& opt = {}) {
  auto s = sbm_generate(blocks, p_in, p_out, feature_dim, feature_noise, seed, opt);
  DatasetBundle d;
  d.name = "sbm";
  d.graph = std::move(s.graph);
  d.features = std::move(s.features);
  d.labels = std::move(s.labels);
  return d;
}

}  // namespace curvgib
