#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "curvgib/artifacts.hpp"

using namespace curvgib;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("curvgib_test_data_io_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write(const fs::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary);
  os << text;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return {};
}

TrainConfig quick_config(std::uint64_t seed = 0) {
  TrainConfig cfg;
  cfg.hidden_dim = 16;
  cfg.outer_epochs = 6;
  cfg.inner_repr_epochs = 2;
  cfg.inner_struct_epochs = 2;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST(LoadDataset, ThreeNodeToy) {
  const auto dir = scratch("toy");
  write(dir / "e.txt", "# path graph\n0 1\n\n1 2\n");
  write(dir / "f.csv", "1,0\n0,1\n1,1\n");
  write(dir / "l.csv", "node_id,label,split\n0,0,train\n1,1,train\n2,1,test\n");
  const auto d = load_dataset((dir / "e.txt").string(), (dir / "f.csv").string(), (dir / "l.csv").string());
  EXPECT_EQ(d.graph.node_count(), 3u);
  EXPECT_EQ(d.graph.edge_count(), 2u);
  EXPECT_EQ(d.graph.degree(0), 1u);
  EXPECT_EQ(d.graph.degree(1), 2u);
  EXPECT_EQ(d.graph.degree(2), 1u);
  EXPECT_EQ(d.features.dim(), 2u);
  EXPECT_EQ(d.labels.labels, (std::vector<int>{0, 1, 1}));
  EXPECT_TRUE(d.labels.test_mask[2]);
  ASSERT_EQ(d.provenance.size(), 3u);
  EXPECT_EQ(d.provenance[0].hash, file_hash((dir / "e.txt").string()));
  // Loading is pure.
  const auto again = load_dataset((dir / "e.txt").string(), (dir / "f.csv").string(), (dir / "l.csv").string());
  EXPECT_EQ(again.graph, d.graph);
  EXPECT_EQ(again.features, d.features);
  EXPECT_EQ(again.labels, d.labels);
  EXPECT_EQ(again.provenance, d.provenance);
  EXPECT_EQ(again.content_hash(), d.content_hash());
}

TEST(LoadDataset, StrayEdgeNamesTheLine) {
  const auto dir = scratch("stray");
  std::string features;
  for (int i = 0; i < 10; ++i) features += "0.5\n";
  write(dir / "f.csv", features);
  write(dir / "e.txt", "0 1\n# comment\n3 99\n");
  write(dir / "l.csv", "0,0,train\n");
  const auto msg = error_of(
      [&] { load_dataset((dir / "e.txt").string(), (dir / "f.csv").string(), (dir / "l.csv").string()); });
  EXPECT_NE(msg.find("e.txt:3"), std::string::npos) << msg;
  EXPECT_NE(msg.find("99"), std::string::npos) << msg;
  EXPECT_THROW(load_dataset((dir / "e.txt").string(), (dir / "f.csv").string(), (dir / "l.csv").string()),
               DataError);
}

TEST(LoadDataset, ParseErrors) {
  std::istringstream ragged("1,2\n3\n");
  EXPECT_NE(error_of([&] { read_features(ragged, "f"); }).find("f:2"), std::string::npos);
  std::istringstream nonnum("1,x\n");
  EXPECT_THROW(read_features(nonnum), DataError);
  std::istringstream nan("1,nan\n");
  EXPECT_THROW(read_features(nan), DataError);
  std::istringstream empty("");
  EXPECT_THROW(read_features(empty), DataError);
  std::istringstream three("0 1 2\n");
  EXPECT_THROW(read_edge_list(three, 5), DataError);
  std::istringstream neg("0 -1\n");
  EXPECT_THROW(read_edge_list(neg, 5), DataError);
  std::istringstream split("0,0,train\n1,0,holdout\n");
  const auto msg = error_of([&] { read_labels(split, 3, "l"); });
  EXPECT_NE(msg.find("l:2"), std::string::npos);
  EXPECT_NE(msg.find("holdout"), std::string::npos);
  std::istringstream dup("0,0,train\n0,1,val\n");
  EXPECT_THROW(read_labels(dup, 3), DataError);
  EXPECT_THROW(load_dataset("/nonexistent/e", "/nonexistent/f", "/nonexistent/l"), DataError);
}

TEST(LoadDataset, ShapeMismatchAndMissingTrainClass) {
  const auto dir = scratch("shape");
  write(dir / "e.txt", "0 1\n");
  write(dir / "f.csv", "1\n2\n");
  write(dir / "l.csv", "0,0,train\n1,1,test\n");  // class 1 has no training node
  EXPECT_THROW(load_dataset((dir / "e.txt").string(), (dir / "f.csv").string(), (dir / "l.csv").string()),
               DataError);
}

TEST(LoadDataset, CoraFormattedExport) {
  // Synthetic stand-in with the published Cora counts: 2708 nodes, 5429
  // undirected edges, 7 classes.
  const std::size_t n = 2708, m = 5429, classes = 7;
  SeqRng rng(2708);
  std::set<Edge> edges;
  while (edges.size() < m) {
    const auto a = static_cast<NodeId>(rng.below(n)), b = static_cast<NodeId>(rng.below(n));
    if (a != b) edges.insert(canonical_edge(a, b));
  }
  DatasetBundle d;
  d.graph = graph_from_canonical(n, {edges.begin(), edges.end()});
  d.features.values = Matrix(n, 8);
  for (auto& v : d.features.values.data()) v = rng.uniform() < 0.1 ? 1.0 : 0.0;
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % classes);
  d.labels = make_planetoid_splits(labels, 20, 500, 1000, 0);
  const auto dir = scratch("cora");
  export_dataset(d, dir);

  const auto back = load_dataset((dir / "edges.txt").string(), (dir / "features.csv").string(),
                                 (dir / "labels.csv").string(), "cora");
  EXPECT_EQ(back.graph.node_count(), n);
  EXPECT_EQ(back.graph.edge_count(), m);
  EXPECT_EQ(back.graph, d.graph);
  EXPECT_EQ(back.features, d.features);
  EXPECT_EQ(back.labels.class_count(), 7);
  EXPECT_EQ(LabelSet::indices(back.labels.train_mask).size(), 140u);
  EXPECT_EQ(LabelSet::indices(back.labels.val_mask).size(), 500u);
  EXPECT_EQ(LabelSet::indices(back.labels.test_mask).size(), 1000u);
}

TEST(PlanetoidSplits, CountsDisjointAndSeeded) {
  std::vector<int> labels(100);
  for (std::size_t i = 0; i < 100; ++i) labels[i] = i < 50 ? 0 : 1;
  const auto a = make_planetoid_splits(labels, 20, 30, 30, 7);
  EXPECT_EQ(LabelSet::indices(a.train_mask).size(), 40u);
  EXPECT_EQ(LabelSet::indices(a.val_mask).size(), 30u);
  EXPECT_EQ(LabelSet::indices(a.test_mask).size(), 30u);
  EXPECT_NO_THROW(a.validate());  // disjoint, every class in train
  std::vector<int> per_class(2, 0);
  for (auto i : LabelSet::indices(a.train_mask)) per_class[static_cast<std::size_t>(labels[i])]++;
  EXPECT_EQ(per_class, (std::vector<int>{20, 20}));
  EXPECT_EQ(make_planetoid_splits(labels, 20, 30, 30, 7), a);
  EXPECT_NE(make_planetoid_splits(labels, 20, 30, 30, 8), a);
  EXPECT_THROW(make_planetoid_splits(labels, 60, 0, 0, 0), DataError);
  EXPECT_THROW(make_planetoid_splits(labels, 20, 40, 40, 0), DataError);
}

TEST(Config, ParsesAndRoundTrips) {
  std::istringstream is(
      "# comment\nouter_epochs = 7\ninner_repr_epochs=2\ninner_struct_epochs = 3\nbeta = 0.01\nalpha = 0.25\n"
      "tau = 0.5\nlearning_rate = 0.005\ndepth = 1\nhidden_dim = 8\nseed = 42 # trailing\ncandidate_k = 3\n"
      "dataset = sbm\ndense_candidates = true\n");
  const auto cfg = parse_config(is);
  EXPECT_EQ(cfg.outer_epochs, 7u);
  EXPECT_EQ(cfg.beta, 0.01);
  EXPECT_EQ(cfg.seed, 42u);
  EXPECT_TRUE(cfg.dense_candidates);
  EXPECT_EQ(cfg.lambda_curv, TrainConfig{}.lambda_curv);
  std::ostringstream os;
  write_config(os, cfg);
  std::istringstream back(os.str());
  EXPECT_EQ(parse_config(back), cfg);
}

TEST(Config, Errors) {
  std::ostringstream full;
  write_config(full, TrainConfig{});
  for (const auto& key : required_config_keys()) {
    std::istringstream is(full.str());
    std::string text, line;
    while (std::getline(is, line)) {
      if (line.rfind(key + " =", 0) != 0) text += line + "\n";
    }
    std::istringstream missing(text);
    const auto msg = error_of([&] { parse_config(missing); });
    EXPECT_NE(msg.find(key), std::string::npos) << msg;
    std::istringstream again(text);
    EXPECT_THROW(parse_config(again), UsageError);
  }
  std::istringstream unknown(full.str() + "bogus = 1\n");
  EXPECT_NE(error_of([&] { parse_config(unknown); }).find("bogus"), std::string::npos);
  std::istringstream dup(full.str() + "beta = 0.1\n");
  EXPECT_THROW(parse_config(dup), UsageError);
  std::istringstream bad(full.str() + "patience = -3\n");
  EXPECT_THROW(parse_config(bad), UsageError);
  TrainConfig cfg;
  EXPECT_THROW(set_config_value(cfg, "dropout", "lots"), UsageError);
  EXPECT_THROW(set_config_value(cfg, "dense_candidates", "maybe"), UsageError);
}

TEST(Manifest, ReparseEqualityOverRandomConfigs) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    SeqRng rng(seed);
    RunManifest m;
    m.config.outer_epochs = 1 + rng.below(500);
    m.config.beta = std::pow(10.0, -6.0 * rng.uniform());
    m.config.alpha = rng.uniform();
    m.config.tau = 0.05 + rng.uniform();
    m.config.learning_rate = 1e-4 + rng.uniform() * 1e-2;
    m.config.seed = rng.below(1ull << 62);
    m.config.dense_candidates = rng.uniform() < 0.5;
    m.config.dataset = "set-" + std::to_string(rng.below(1000));
    m.options["ratios"] = "0,0.1,0.5";
    m.inputs = {{"a/b.csv", rng.below(~0ull)}, {"c d.txt", 0}};
    m.dataset_hash = rng.below(~0ull);
    m.checkpoint_hash = ~0ull;
    m.outputs["metrics"] = "metrics.csv";
    m.created = "2026-01-01T00:00:00Z";
    m.finished = utc_timestamp();
    m.status = seed % 2 ? "complete" : "incomplete";
    m.summary["test_accuracy"] = rng.uniform();
    m.summary["tiny"] = 1e-300 * rng.uniform_open();
    const auto text = manifest_text(m);
    EXPECT_EQ(parse_manifest(text), m);
    EXPECT_EQ(manifest_text(parse_manifest(text)), text);
  }
  EXPECT_THROW(parse_manifest("{}"), DataError);
  EXPECT_THROW(parse_manifest("not json"), DataError);
}

TEST(Csv, TwelveSignificantDigits) {
  SeqRng rng(12);
  for (int k = 0; k < 2000; ++k) {
    const double v = std::pow(10.0, -300.0 + 600.0 * rng.uniform()) * (rng.uniform() < 0.5 ? -1 : 1);
    const double back = std::stod(format_sig12(v));
    EXPECT_LE(std::abs(back - v), 5e-12 * std::abs(v)) << v;
  }
}

class Artifacts : public ::testing::Test {
 protected:
  DatasetBundle data = sbm_dataset({20, 20}, 0.3, 0.05, 8, 0.5, 3);
  TrainConfig cfg = quick_config(2);
};

TEST_F(Artifacts, SaveLoadSaveIsByteIdentical) {
  auto s = initialize(cfg, data);
  train(s, cfg, data, {}, 3);
  const auto dir1 = scratch("save1"), dir2 = scratch("save2");
  const auto m1 = save_artifacts(s, make_manifest(cfg, data), dir1);
  auto loaded = load_artifacts(dir1);
  EXPECT_EQ(loaded.state, s);
  EXPECT_EQ(loaded.manifest, m1);
  save_artifacts(loaded.state, loaded.manifest, dir2);
  std::size_t files = 0;
  for (const auto& entry : fs::directory_iterator(dir1)) {
    ++files;
    EXPECT_EQ(slurp(entry.path()), slurp(dir2 / entry.path().filename())) << entry.path();
  }
  EXPECT_EQ(files, 9u);
  EXPECT_EQ(slurp(dir1 / "curvature.meta.json").find("\"surrogate\"") != std::string::npos, true);
  // One metrics row per completed epoch, timing kept in its own file.
  std::ifstream metrics(dir1 / artifact_files::kMetrics);
  EXPECT_EQ(read_metrics_csv(metrics).size(), 3u);
  EXPECT_EQ(slurp(dir1 / artifact_files::kTiming).find("wall_seconds"), 6u);
}

TEST_F(Artifacts, TamperedCheckpointIsRejected) {
  auto s = initialize(cfg, data);
  train(s, cfg, data, {}, 1);
  const auto dir = scratch("tamper");
  save_artifacts(s, make_manifest(cfg, data), dir);
  {
    std::fstream f(dir / artifact_files::kCheckpoint, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(-3, std::ios::end);
    f.put('\x7f');
  }
  const auto msg = error_of([&] { load_artifacts(dir); });
  EXPECT_NE(msg.find("hash mismatch"), std::string::npos) << msg;
  EXPECT_THROW(load_artifacts(dir), DataError);
  EXPECT_THROW(load_artifacts(scratch("empty")), DataError);
}

TEST_F(Artifacts, ResumeEqualsUninterruptedRun) {
  auto full = initialize(cfg, data);
  train(full, cfg, data);

  auto part = initialize(cfg, data);
  train(part, cfg, data, {}, 2);
  const auto dir = scratch("resume");
  save_artifacts(part, make_manifest(cfg, data), dir);
  auto loaded = load_artifacts(dir);
  require_same_dataset(loaded.manifest, data);
  train(loaded.state, loaded.manifest.config, data);
  EXPECT_EQ(loaded.state.log.epochs, full.log.epochs);
  EXPECT_EQ(loaded.state.log.inner, full.log.inner);
  EXPECT_EQ(loaded.state.params, full.params);

  const auto other = sbm_dataset({20, 20}, 0.3, 0.05, 8, 0.5, 4);
  EXPECT_THROW(require_same_dataset(loaded.manifest, other), DataError);
}

TEST_F(Artifacts, StateTensorsRejectInconsistentTables) {
  auto s = initialize(cfg, data);
  auto t = state_to_tensors(s);
  for (auto& [name, m] : t) {
    if (name == "pi") m = Matrix(1, 1);
  }
  EXPECT_THROW(state_from_tensors(t), DataError);
  auto u = state_to_tensors(s);
  u.erase(u.begin());
  EXPECT_THROW(state_from_tensors(u), DataError);
}
