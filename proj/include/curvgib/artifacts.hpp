#pragma once

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "curvgib/config.hpp"
#include "curvgib/data_io.hpp"
#include "curvgib/trainer.hpp"

#ifndef CURVGIB_VERSION
#define CURVGIB_VERSION "0.1.0"
#endif

namespace curvgib {

inline constexpr const char* kToolkitVersion = CURVGIB_VERSION;

// ---------------------------------------------------------------------------
// Run manifest
// ---------------------------------------------------------------------------

/// JSON sidecar of every run. Required keys: schema, version, command,
/// status, config, options, inputs, dataset_hash, outputs, checkpoint_hash,
/// created, finished, summary.
struct RunManifest {
  std::string version = kToolkitVersion;
  std::string command = "train";
  std::string status = "complete";  // complete | incomplete | aborted
  TrainConfig config;
  std::map<std::string, std::string> options;  // command-specific flags
  std::vector<InputFile> inputs;
  std::uint64_t dataset_hash = 0;
  std::map<std::string, std::string> outputs;  // role -> file name inside the run directory
  std::uint64_t checkpoint_hash = 0;
  std::string created;
  std::string finished;
  std::map<std::string, double> summary;

  friend bool operator==(const RunManifest&, const RunManifest&) = default;
};

inline constexpr const char* kManifestSchema = "curvgib-run/1";

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline nlohmann::ordered_json config_to_json(const TrainConfig& cfg) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  visit_config(cfg, [&](const char* k, const auto& v) { j[k] = v; });
  return j;
}

inline TrainConfig config_from_json(const nlohmann::ordered_json& j) {
  TrainConfig cfg;
  visit_config(cfg, [&](const char* k, auto& v) {
    if (!j.contains(k)) throw DataError(std::string("manifest config is missing '") + k + "'");
    j.at(k).get_to(v);
  });
  for (const auto& [k, _] : j.items()) {
    if (!config_keys().count(k)) throw DataError("manifest config has unknown key '" + k + "'");
  }
  return cfg;
}

inline nlohmann::ordered_json manifest_to_json(const RunManifest& m) {
  nlohmann::ordered_json j;
  j["schema"] = kManifestSchema;
  j["version"] = m.version;
  j["command"] = m.command;
  j["status"] = m.status;
  j["config"] = config_to_json(m.config);
  j["options"] = m.options;
  j["inputs"] = nlohmann::ordered_json::array();
  for (const auto& f : m.inputs) j["inputs"].push_back({{"path", f.path}, {"hash", hash_hex(f.hash)}});
  j["dataset_hash"] = hash_hex(m.dataset_hash);
  j["outputs"] = m.outputs;
  j["checkpoint_hash"] = hash_hex(m.checkpoint_hash);
  j["created"] = m.created;
  j["finished"] = m.finished;
  j["summary"] = m.summary;
  return j;
}

inline RunManifest manifest_from_json(const nlohmann::ordered_json& j) {
  try {
    if (j.at("schema").get<std::string>() != kManifestSchema) throw DataError("manifest: unsupported schema");
    RunManifest m;
    m.version = j.at("version").get<std::string>();
    m.command = j.at("command").get<std::string>();
    m.status = j.at("status").get<std::string>();
    m.config = config_from_json(j.at("config"));
    m.options = j.at("options").get<std::map<std::string, std::string>>();
    for (const auto& f : j.at("inputs")) {
      m.inputs.push_back({f.at("path").get<std::string>(), parse_hash_hex(f.at("hash").get<std::string>())});
    }
    m.dataset_hash = parse_hash_hex(j.at("dataset_hash").get<std::string>());
    m.outputs = j.at("outputs").get<std::map<std::string, std::string>>();
    m.checkpoint_hash = parse_hash_hex(j.at("checkpoint_hash").get<std::string>());
    m.created = j.at("created").get<std::string>();
    m.finished = j.at("finished").get<std::string>();
    m.summary = j.at("summary").get<std::map<std::string, double>>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("manifest: ") + e.what());
  }
}

inline std::string manifest_text(const RunManifest& m) { return manifest_to_json(m).dump(2) + "\n"; }

inline RunManifest parse_manifest(const std::string& text) {
  try {
    return manifest_from_json(nlohmann::ordered_json::parse(text));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(std::string("manifest: ") + e.what());
  }
}

inline RunManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open manifest " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_manifest(ss.str());
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  os << text;
  if (!os) throw DataError("cannot write " + path.string());
}

// ---------------------------------------------------------------------------
// Checkpoint <-> TrainState
// ---------------------------------------------------------------------------

namespace ckpt_detail {

inline Matrix edges_matrix(const std::vector<Edge>& edges) {
  Matrix m(edges.size(), 2);
  for (std::size_t k = 0; k < edges.size(); ++k) {
    m(k, 0) = edges[k].u;
    m(k, 1) = edges[k].v;
  }
  return m;
}

inline std::vector<Edge> matrix_edges(const Matrix& m) {
  if (m.size() > 0 && m.cols() != 2) throw DataError("checkpoint: edge table must have two columns");
  std::vector<Edge> out(m.rows());
  for (std::size_t k = 0; k < m.rows(); ++k) out[k] = {static_cast<NodeId>(m(k, 0)), static_cast<NodeId>(m(k, 1))};
  return out;
}

inline Matrix column(const std::vector<double>& v) { return Matrix(v.size(), 1, v); }

inline void put_adam(std::vector<NamedTensor>& out, const std::string& tag, const Adam& a) {
  out.emplace_back(tag + "/meta", Matrix(1, 6,
                                         {a.learning_rate, a.beta1, a.beta2, a.epsilon, static_cast<double>(a.steps),
                                          static_cast<double>(a.m.size())}));
  for (std::size_t k = 0; k < a.m.size(); ++k) {
    out.emplace_back(tag + "/m" + std::to_string(k), a.m[k]);
    out.emplace_back(tag + "/v" + std::to_string(k), a.v[k]);
  }
}

class Reader {
 public:
  explicit Reader(std::vector<NamedTensor> t) {
    for (auto& [name, m] : t) {
      if (!table_.emplace(name, std::move(m)).second) throw DataError("checkpoint: duplicate tensor " + name);
    }
  }
  [[nodiscard]] bool has(const std::string& name) const { return table_.count(name) > 0; }
  [[nodiscard]] const Matrix& get(const std::string& name) const {
    const auto it = table_.find(name);
    if (it == table_.end()) throw DataError("checkpoint: missing tensor " + name);
    return it->second;
  }
  Adam adam(const std::string& tag) const {
    const auto& meta = get(tag + "/meta");
    if (meta.size() != 6) throw DataError("checkpoint: malformed " + tag + "/meta");
    Adam a;
    a.learning_rate = meta[0];
    a.beta1 = meta[1];
    a.beta2 = meta[2];
    a.epsilon = meta[3];
    a.steps = static_cast<std::uint64_t>(meta[4]);
    for (std::size_t k = 0; k < static_cast<std::size_t>(meta[5]); ++k) {
      a.m.push_back(get(tag + "/m" + std::to_string(k)));
      a.v.push_back(get(tag + "/v" + std::to_string(k)));
    }
    return a;
  }
  Parameter param(const std::string& name) const { return Parameter(name, get("param/" + name)); }

 private:
  std::map<std::string, Matrix> table_;
};

}  // namespace ckpt_detail

/// Flattens the full training state into named tensors.
inline std::vector<NamedTensor> state_to_tensors(TrainState& s) {
  using namespace ckpt_detail;
  std::vector<NamedTensor> out;
  for (Parameter* p : s.params.all()) out.emplace_back("param/" + p->name, p->value);
  put_adam(out, "adam/repr", s.opt_repr);
  put_adam(out, "adam/struct", s.opt_struct);
  put_adam(out, "adam/outer", s.opt_outer);
  out.emplace_back("candidates/node_count", Matrix::scalar(static_cast<double>(s.candidates.node_count)));
  out.emplace_back("candidates/edges", edges_matrix(s.candidates.edges));
  out.emplace_back("candidates/original", s.candidates.original_column());
  out.emplace_back("kappa", s.kappa);
  out.emplace_back("pi", s.pi);
  out.emplace_back("soft", s.soft);
  out.emplace_back("refined/node_count", Matrix::scalar(static_cast<double>(s.refined.node_count())));
  out.emplace_back("refined/edges", edges_matrix(s.refined.edges()));
  out.emplace_back("counters", Matrix(1, 8,
                                      {static_cast<double>(s.epoch), s.last_structure, s.best_val,
                                       static_cast<double>(s.best_epoch), s.test_at_best, s.f1_at_best,
                                       static_cast<double>(s.since_best), s.stopped ? 1.0 : 0.0}));
  Matrix epochs(s.log.epochs.size(), 11);
  for (std::size_t r = 0; r < s.log.epochs.size(); ++r) {
    const auto& e = s.log.epochs[r];
    const double row[11] = {static_cast<double>(e.epoch), e.prediction,    e.compression,  e.structure,
                            e.ibcurv,                     e.total,         e.accuracy_val, e.macro_f1_val,
                            e.accuracy_test,              e.macro_f1_test, static_cast<double>(e.refined_edges)};
    for (std::size_t c = 0; c < 11; ++c) epochs(r, c) = row[c];
  }
  out.emplace_back("log/epochs", std::move(epochs));
  Matrix inner(s.log.inner.size(), 4);
  for (std::size_t r = 0; r < s.log.inner.size(); ++r) {
    const auto& e = s.log.inner[r];
    inner(r, 0) = static_cast<double>(e.epoch);
    inner(r, 1) = e.phase;
    inner(r, 2) = static_cast<double>(e.step);
    inner(r, 3) = e.loss;
  }
  out.emplace_back("log/inner", std::move(inner));
  out.emplace_back("log/wall_seconds", column(s.log.wall_seconds));
  return out;
}

inline TrainState state_from_tensors(std::vector<NamedTensor> tensors) {
  using namespace ckpt_detail;
  const Reader r(std::move(tensors));
  TrainState s;
  auto& p = s.params;
  p.in_w = r.param("in.w");
  p.in_b = r.param("in.b");
  for (std::size_t l = 0; r.has("param/layer" + std::to_string(l) + ".w"); ++l) {
    p.layer_w.push_back(r.param("layer" + std::to_string(l) + ".w"));
    p.layer_b.push_back(r.param("layer" + std::to_string(l) + ".b"));
  }
  p.mu_w = r.param("mu.w");
  p.mu_b = r.param("mu.b");
  p.lv_w = r.param("logvar.w");
  p.lv_b = r.param("logvar.b");
  p.out_w = r.param("out.w");
  p.out_b = r.param("out.b");
  p.edge.scale = r.param("edge.scale");
  p.edge.shift = r.param("edge.shift");
  p.head.weight = r.param("head.weight");
  p.head.bias = r.param("head.bias");
  s.opt_repr = r.adam("adam/repr");
  s.opt_struct = r.adam("adam/struct");
  s.opt_outer = r.adam("adam/outer");

  s.candidates.node_count = static_cast<std::size_t>(r.get("candidates/node_count")[0]);
  s.candidates.edges = matrix_edges(r.get("candidates/edges"));
  const auto& orig = r.get("candidates/original");
  if (orig.size() != s.candidates.edges.size()) throw DataError("checkpoint: candidate table lengths differ");
  for (double v : orig.data()) s.candidates.original.push_back(v != 0.0);
  s.kappa = r.get("kappa");
  s.pi = r.get("pi");
  s.soft = r.get("soft");
  for (const Matrix* m : {&s.kappa, &s.pi, &s.soft}) {
    if (m->size() != s.candidates.size()) throw DataError("checkpoint: per-candidate tensor has the wrong length");
  }
  s.refined = graph_from_canonical(static_cast<std::size_t>(r.get("refined/node_count")[0]),
                                   matrix_edges(r.get("refined/edges")));

  const auto& c = r.get("counters");
  if (c.size() != 8) throw DataError("checkpoint: malformed counters");
  s.epoch = static_cast<std::size_t>(c[0]);
  s.last_structure = c[1];
  s.best_val = c[2];
  s.best_epoch = static_cast<std::size_t>(c[3]);
  s.test_at_best = c[4];
  s.f1_at_best = c[5];
  s.since_best = static_cast<std::size_t>(c[6]);
  s.stopped = c[7] != 0.0;

  const auto& ep = r.get("log/epochs");
  const auto& wall = r.get("log/wall_seconds");
  if ((ep.size() > 0 && ep.cols() != 11) || wall.size() != ep.rows()) throw DataError("checkpoint: malformed log");
  for (std::size_t i = 0; i < ep.rows(); ++i) {
    EpochRecord e;
    e.epoch = static_cast<std::size_t>(ep(i, 0));
    e.prediction = ep(i, 1);
    e.compression = ep(i, 2);
    e.structure = ep(i, 3);
    e.ibcurv = ep(i, 4);
    e.total = ep(i, 5);
    e.accuracy_val = ep(i, 6);
    e.macro_f1_val = ep(i, 7);
    e.accuracy_test = ep(i, 8);
    e.macro_f1_test = ep(i, 9);
    e.refined_edges = static_cast<std::size_t>(ep(i, 10));
    s.log.append(e, wall[i]);
  }
  const auto& in = r.get("log/inner");
  if (in.size() > 0 && in.cols() != 4) throw DataError("checkpoint: malformed inner log");
  for (std::size_t i = 0; i < in.rows(); ++i) {
    s.log.inner.push_back({static_cast<std::size_t>(in(i, 0)), static_cast<int>(in(i, 1)),
                           static_cast<std::size_t>(in(i, 2)), in(i, 3)});
  }
  return s;
}

// ---------------------------------------------------------------------------
// CSV exports
// ---------------------------------------------------------------------------

inline void write_metrics_csv(std::ostream& os, const MetricsLog& log) {
  os << "epoch,prediction,compression,structure,ibcurv,total,accuracy_val,macro_f1_val,accuracy_test,"
        "macro_f1_test,refined_edges\n";
  for (const auto& e : log.epochs) {
    os << e.epoch << ',' << format_sig12(e.prediction) << ',' << format_sig12(e.compression) << ','
       << format_sig12(e.structure) << ',' << format_sig12(e.ibcurv) << ',' << format_sig12(e.total) << ','
       << format_sig12(e.accuracy_val) << ',' << format_sig12(e.macro_f1_val) << ','
       << format_sig12(e.accuracy_test) << ',' << format_sig12(e.macro_f1_test) << ',' << e.refined_edges << '\n';
  }
}

inline void write_inner_csv(std::ostream& os, const MetricsLog& log) {
  os << "epoch,phase,step,loss\n";
  for (const auto& e : log.inner) os << e.epoch << ',' << e.phase << ',' << e.step << ',' << format_sig12(e.loss) << '\n';
}

inline void write_timing_csv(std::ostream& os, const MetricsLog& log) {
  os << "epoch,wall_seconds\n";
  for (std::size_t k = 0; k < log.epochs.size(); ++k) {
    os << log.epochs[k].epoch << ',' << format_sig12(log.wall_seconds[k]) << '\n';
  }
}

/// src,dst,pi,kept over all candidates; `kept` marks membership of A*.
inline void write_probabilities_csv(std::ostream& os, const TrainState& s) {
  os << "src,dst,pi,kept\n";
  for (std::size_t k = 0; k < s.candidates.size(); ++k) {
    const auto& e = s.candidates.edges[k];
    os << e.u << ',' << e.v << ',' << format_sig12(s.pi[k]) << ',' << (s.refined.has_edge(e.u, e.v) ? 1 : 0) << '\n';
  }
}

inline std::string curvature_metadata(const std::string& method, double alpha, std::size_t rows) {
  nlohmann::ordered_json j;
  j["method"] = method;
  j["alpha"] = alpha;
  j["columns"] = {"src", "dst", "kappa"};
  j["rows"] = rows;
  return j.dump(2) + "\n";
}

/// Parses the metrics CSV written above (used by reports).
inline std::vector<EpochRecord> read_metrics_csv(std::istream& is, const std::string& source = "metrics.csv") {
  std::vector<EpochRecord> out;
  std::string line;
  for (std::size_t no = 1; std::getline(is, line); ++no) {
    if (no == 1 || io_detail::trim(line).empty()) continue;
    const auto c = io_detail::split(io_detail::trim(line), ',');
    if (c.size() != 11) throw DataError(source + ":" + std::to_string(no) + ": expected 11 columns");
    EpochRecord e;
    e.epoch = static_cast<std::size_t>(io_detail::parse_integer(c[0], source, no));
    double* fields[] = {&e.prediction,   &e.compression,  &e.structure,     &e.ibcurv,      &e.total,
                        &e.accuracy_val, &e.macro_f1_val, &e.accuracy_test, &e.macro_f1_test};
    for (std::size_t k = 0; k < 9; ++k) *fields[k] = io_detail::parse_real(c[k + 1], source, no);
    e.refined_edges = static_cast<std::size_t>(io_detail::parse_integer(c[10], source, no));
    out.push_back(e);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Run directory
// ---------------------------------------------------------------------------

namespace artifact_files {
inline constexpr const char* kManifest = "manifest.json";
inline constexpr const char* kCheckpoint = "checkpoint.bin";
inline constexpr const char* kCurvature = "curvature.csv";
inline constexpr const char* kCurvatureMeta = "curvature.meta.json";
inline constexpr const char* kRefinedEdges = "refined_edges.txt";
inline constexpr const char* kProbabilities = "probabilities.csv";
inline constexpr const char* kMetrics = "metrics.csv";
inline constexpr const char* kInner = "inner_metrics.csv";
inline constexpr const char* kTiming = "timing.csv";
}  // namespace artifact_files

/// Writes the checkpoint, CSV exports and the manifest into `dir` and
/// returns the manifest as written (outputs and checkpoint hash filled in).
inline RunManifest save_artifacts(TrainState& s, RunManifest manifest, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  namespace af = artifact_files;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());

  {
    std::ofstream os(dir / af::kCheckpoint, std::ios::binary);
    if (!os) throw DataError("cannot write " + (dir / af::kCheckpoint).string());
    write_checkpoint(os, state_to_tensors(s));
  }
  manifest.checkpoint_hash = file_hash((dir / af::kCheckpoint).string());

  std::ostringstream curv, refined, probs, metrics, inner, timing;
  for (std::size_t k = 0; k < s.candidates.size(); ++k) {
    if (k == 0) curv << "src,dst,kappa\n";
    curv << s.candidates.edges[k].u << ',' << s.candidates.edges[k].v << ',' << format_sig12(s.kappa[k]) << '\n';
  }
  if (s.candidates.size() == 0) curv << "src,dst,kappa\n";
  write_edge_list(refined, s.refined);
  write_probabilities_csv(probs, s);
  write_metrics_csv(metrics, s.log);
  write_inner_csv(inner, s.log);
  write_timing_csv(timing, s.log);
  write_text_file(dir / af::kCurvature, curv.str());
  write_text_file(dir / af::kCurvatureMeta, curvature_metadata("surrogate", manifest.config.alpha, s.candidates.size()));
  write_text_file(dir / af::kRefinedEdges, refined.str());
  write_text_file(dir / af::kProbabilities, probs.str());
  write_text_file(dir / af::kMetrics, metrics.str());
  write_text_file(dir / af::kInner, inner.str());
  write_text_file(dir / af::kTiming, timing.str());

  manifest.outputs = {{"checkpoint", af::kCheckpoint},         {"curvature", af::kCurvature},
                      {"curvature_metadata", af::kCurvatureMeta}, {"refined_edges", af::kRefinedEdges},
                      {"probabilities", af::kProbabilities},   {"metrics", af::kMetrics},
                      {"inner_metrics", af::kInner},           {"timing", af::kTiming}};
  write_text_file(dir / af::kManifest, manifest_text(manifest));
  return manifest;
}

struct LoadedRun {
  TrainState state;
  RunManifest manifest;
};

/// Reads a run directory. The checkpoint must match the hash recorded in the
/// manifest.
inline LoadedRun load_artifacts(const std::filesystem::path& dir) {
  namespace af = artifact_files;
  LoadedRun out;
  out.manifest = read_manifest(dir / af::kManifest);
  const auto ckpt = dir / af::kCheckpoint;
  if (!std::filesystem::exists(ckpt)) throw DataError("missing checkpoint " + ckpt.string());
  const auto h = file_hash(ckpt.string());
  if (h != out.manifest.checkpoint_hash) {
    throw DataError("checkpoint hash mismatch: manifest records " + hash_hex(out.manifest.checkpoint_hash) +
                    ", file has " + hash_hex(h));
  }
  std::ifstream is(ckpt, std::ios::binary);
  out.state = state_from_tensors(read_checkpoint(is));
  return out;
}

/// Refuses to resume on data that differs from what the run was trained on.
inline void require_same_dataset(const RunManifest& m, const DatasetBundle& data) {
  if (m.dataset_hash != data.content_hash()) {
    throw DataError("dataset hash mismatch: run was trained on " + hash_hex(m.dataset_hash) + ", got " +
                    hash_hex(data.content_hash()));
  }
}

/// Manifest for a training run on `data` started now.
inline RunManifest make_manifest(const TrainConfig& cfg, const DatasetBundle& data, std::string command = "train") {
  RunManifest m;
  m.command = std::move(command);
  m.config = cfg;
  m.inputs = data.provenance;
  m.dataset_hash = data.content_hash();
  m.created = utc_timestamp();
  return m;
}

}  // namespace curvgib
