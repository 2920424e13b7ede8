#pragma once

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "curvgib/dataset.hpp"
#include "curvgib/ollivier.hpp"

namespace curvgib {

// ---------------------------------------------------------------------------
// Text helpers
// ---------------------------------------------------------------------------

namespace io_detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, sep)) out.push_back(trim(cell));
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

inline std::string where(const std::string& source, std::size_t line) {
  return source + ":" + std::to_string(line);
}

inline long long parse_integer(const std::string& tok, const std::string& source, std::size_t line) {
  if (tok.empty()) throw DataError(where(source, line) + ": empty integer field");
  char* end = nullptr;
  errno = 0;
  const long long v = std::strtoll(tok.c_str(), &end, 10);
  if (errno != 0 || *end != '\0') throw DataError(where(source, line) + ": '" + tok + "' is not an integer");
  return v;
}

inline double parse_real(const std::string& tok, const std::string& source, std::size_t line) {
  if (tok.empty()) throw DataError(where(source, line) + ": empty numeric field");
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (*end != '\0') throw DataError(where(source, line) + ": '" + tok + "' is not a number");
  return v;
}

inline std::ifstream open_input(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path);
  return is;
}

}  // namespace io_detail

/// FNV-1a 64 over the raw bytes of a file.
inline std::uint64_t file_hash(const std::string& path) {
  auto is = io_detail::open_input(path);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (is.read(buf, sizeof buf) || is.gcount() > 0) {
    h = fnv1a64(buf, static_cast<std::size_t>(is.gcount()), h);
  }
  return h;
}

inline std::string hash_hex(std::uint64_t h) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "fnv1a64:%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::uint64_t parse_hash_hex(const std::string& s) {
  const std::string prefix = "fnv1a64:";
  if (s.rfind(prefix, 0) != 0 || s.size() != prefix.size() + 16) throw DataError("malformed content hash '" + s + "'");
  char* end = nullptr;
  const auto v = std::strtoull(s.c_str() + prefix.size(), &end, 16);
  if (*end != '\0') throw DataError("malformed content hash '" + s + "'");
  return v;
}

// ---------------------------------------------------------------------------
// Readers
// ---------------------------------------------------------------------------

/// Whitespace-separated 0-based pairs; '#' lines and blank lines skipped.
inline Graph read_edge_list(std::istream& is, std::size_t node_count, const std::string& source = "edges") {
  std::vector<std::pair<NodeId, NodeId>> pairs;
  std::string line;
  for (std::size_t no = 1; std::getline(is, line); ++no) {
    const auto t = io_detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::istringstream ls(t);
    std::string a, b, extra;
    if (!(ls >> a >> b) || (ls >> extra)) {
      throw DataError(io_detail::where(source, no) + ": expected two node indices");
    }
    const auto u = io_detail::parse_integer(a, source, no);
    const auto v = io_detail::parse_integer(b, source, no);
    for (auto x : {u, v}) {
      if (x < 0 || static_cast<unsigned long long>(x) >= node_count) {
        throw DataError(io_detail::where(source, no) + ": node " + std::to_string(x) + " out of range for " +
                        std::to_string(node_count) + " nodes");
      }
    }
    pairs.emplace_back(static_cast<NodeId>(u), static_cast<NodeId>(v));
  }
  return build_graph(pairs, node_count);
}

/// Headerless numeric CSV; every row must have the same width.
inline FeatureMatrix read_features(std::istream& is, const std::string& source = "features") {
  std::vector<double> values;
  std::size_t width = 0, rows = 0;
  std::string line;
  for (std::size_t no = 1; std::getline(is, line); ++no) {
    if (io_detail::trim(line).empty()) continue;
    const auto cells = io_detail::split(line, ',');
    if (rows == 0) width = cells.size();
    if (cells.size() != width) {
      throw DataError(io_detail::where(source, no) + ": " + std::to_string(cells.size()) + " columns, expected " +
                      std::to_string(width));
    }
    for (const auto& c : cells) {
      const double v = io_detail::parse_real(c, source, no);
      if (!std::isfinite(v)) throw DataError(io_detail::where(source, no) + ": non-finite feature value");
      values.push_back(v);
    }
    ++rows;
  }
  if (rows == 0) throw DataError(source + ": no feature rows");
  return FeatureMatrix{Matrix(rows, width, std::move(values))};
}

/// Rows node_id,label,split with split in {train, val, test}. An optional
/// header row starting with "node_id" is skipped. Nodes without a row keep
/// label 0 and belong to no split.
inline LabelSet read_labels(std::istream& is, std::size_t node_count, const std::string& source = "labels") {
  LabelSet ls;
  ls.labels.assign(node_count, 0);
  ls.train_mask.assign(node_count, false);
  ls.val_mask.assign(node_count, false);
  ls.test_mask.assign(node_count, false);
  std::vector<bool> seen(node_count, false);
  std::string line;
  for (std::size_t no = 1; std::getline(is, line); ++no) {
    const auto t = io_detail::trim(line);
    if (t.empty()) continue;
    const auto cells = io_detail::split(t, ',');
    if (no == 1 && !cells.empty() && cells[0] == "node_id") continue;
    if (cells.size() != 3) throw DataError(io_detail::where(source, no) + ": expected node_id,label,split");
    const auto node = io_detail::parse_integer(cells[0], source, no);
    const auto label = io_detail::parse_integer(cells[1], source, no);
    if (node < 0 || static_cast<unsigned long long>(node) >= node_count) {
      throw DataError(io_detail::where(source, no) + ": node " + std::to_string(node) + " out of range for " +
                      std::to_string(node_count) + " nodes");
    }
    if (label < 0 || label > (1 << 20)) throw DataError(io_detail::where(source, no) + ": invalid label");
    const auto i = static_cast<std::size_t>(node);
    if (seen[i]) throw DataError(io_detail::where(source, no) + ": duplicate row for node " + cells[0]);
    seen[i] = true;
    ls.labels[i] = static_cast<int>(label);
    if (cells[2] == "train") {
      ls.train_mask[i] = true;
    } else if (cells[2] == "val") {
      ls.val_mask[i] = true;
    } else if (cells[2] == "test") {
      ls.test_mask[i] = true;
    } else {
      throw DataError(io_detail::where(source, no) + ": unknown split '" + cells[2] + "'");
    }
  }
  return ls;
}

/// Loads and validates a dataset; N is the number of feature rows.
inline DatasetBundle load_dataset(const std::string& edge_path, const std::string& feature_path,
                                  const std::string& label_path, const std::string& name = {}) {
  DatasetBundle d;
  d.name = name.empty() ? std::filesystem::path(feature_path).stem().string() : name;
  {
    auto is = io_detail::open_input(feature_path);
    d.features = read_features(is, feature_path);
  }
  const auto n = d.features.rows();
  {
    auto is = io_detail::open_input(edge_path);
    d.graph = read_edge_list(is, n, edge_path);
  }
  {
    auto is = io_detail::open_input(label_path);
    d.labels = read_labels(is, n, label_path);
  }
  for (const auto& p : {edge_path, feature_path, label_path}) d.provenance.push_back({p, file_hash(p)});
  d.validate();
  return d;
}

// ---------------------------------------------------------------------------
// Writers
// ---------------------------------------------------------------------------

inline void write_edge_list(std::ostream& os, const Graph& g) {
  for (const auto& e : g.edges()) os << e.u << ' ' << e.v << '\n';
}

inline void write_features_csv(std::ostream& os, const FeatureMatrix& f) {
  for (std::size_t i = 0; i < f.rows(); ++i) {
    for (std::size_t j = 0; j < f.dim(); ++j) os << (j ? "," : "") << format_sig12(f.values(i, j));
    os << '\n';
  }
}

inline void write_labels_csv(std::ostream& os, const LabelSet& ls) {
  os << "node_id,label,split\n";
  for (std::size_t i = 0; i < ls.size(); ++i) {
    const char* split = ls.train_mask[i] ? "train" : ls.val_mask[i] ? "val" : ls.test_mask[i] ? "test" : nullptr;
    if (split) os << i << ',' << ls.labels[i] << ',' << split << '\n';
  }
}

/// Writes edges.txt, features.csv and labels.csv under `dir`.
inline void export_dataset(const DatasetBundle& d, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream e(dir / "edges.txt"), f(dir / "features.csv"), l(dir / "labels.csv");
  write_edge_list(e, d.graph);
  write_features_csv(f, d.features);
  write_labels_csv(l, d.labels);
  if (!e || !f || !l) throw DataError("cannot write dataset under " + dir.string());
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

/// `per_class_train` nodes of every class into train, then `val_size` and
/// `test_size` nodes from the shuffled remainder.
inline LabelSet make_planetoid_splits(const std::vector<int>& labels, std::size_t per_class_train = 20,
                                      std::size_t val_size = 500, std::size_t test_size = 1000,
                                      std::uint64_t seed = 0) {
  const auto n = labels.size();
  LabelSet ls;
  ls.labels = labels;
  ls.train_mask.assign(n, false);
  ls.val_mask.assign(n, false);
  ls.test_mask.assign(n, false);
  const int classes = ls.class_count();
  SeqRng rng(KeyedStream(seed).fork(0x73706c6974ULL));
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  rng.shuffle(order.begin(), order.end());

  std::vector<std::size_t> taken(static_cast<std::size_t>(classes), 0);
  std::vector<std::size_t> rest;
  for (auto i : order) {
    if (labels[i] < 0) throw DataError("make_planetoid_splits: negative label at node " + std::to_string(i));
    auto& t = taken[static_cast<std::size_t>(labels[i])];
    if (t < per_class_train) {
      ls.train_mask[i] = true;
      ++t;
    } else {
      rest.push_back(i);
    }
  }
  for (int c = 0; c < classes; ++c) {
    if (taken[static_cast<std::size_t>(c)] < per_class_train) {
      throw DataError("make_planetoid_splits: class " + std::to_string(c) + " has only " +
                      std::to_string(taken[static_cast<std::size_t>(c)]) + " nodes, need " +
                      std::to_string(per_class_train) + " for training");
    }
  }
  if (rest.size() < val_size + test_size) {
    throw DataError("make_planetoid_splits: " + std::to_string(rest.size()) + " nodes left for " +
                    std::to_string(val_size) + " val + " + std::to_string(test_size) + " test");
  }
  for (std::size_t k = 0; k < val_size; ++k) ls.val_mask[rest[k]] = true;
  for (std::size_t k = val_size; k < val_size + test_size; ++k) ls.test_mask[rest[k]] = true;
  return ls;
}

}  // namespace curvgib
