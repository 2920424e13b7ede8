// curvgib command-line entry point.
//
// Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure
// (non-finite loss, or a gradient check above tolerance).

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "curvgib/artifacts.hpp"
#include "curvgib/diagnostics.hpp"

namespace fs = std::filesystem;
using namespace curvgib;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;
constexpr const char* kOutputEnv = "CURVGIB_OUTPUT_DIR";

fs::path default_output(const std::string& leaf) {
  const char* env = std::getenv(kOutputEnv);
  return fs::path(env && *env ? env : "curvgib_out") / leaf;
}

std::string join(const std::vector<std::string>& xs, const std::string& sep = ",") {
  std::string out;
  for (const auto& x : xs) out += (out.empty() ? "" : sep) + x;
  return out;
}

std::string join_reals(const std::vector<double>& xs) {
  std::vector<std::string> s;
  for (double x : xs) s.push_back(format_sig12(x));
  return join(s);
}

// ---------------------------------------------------------------------------
// Shared option groups
// ---------------------------------------------------------------------------

struct DataFlags {
  std::string edges, features, labels;
  std::string blocks = "100,100";
  double p_in = 0.2;
  double p_out = 0.05;
  std::size_t feature_dim = 16;
  double feature_noise = 1.0;
  std::uint64_t data_seed = 0;
  SbmOptions split;
  CLI::App* owner = nullptr;

  void add(CLI::App* app) {
    owner = app;
    app->add_option("--edges", edges, "edge-list file");
    app->add_option("--features", features, "feature CSV (N rows)");
    app->add_option("--labels", labels, "label CSV node_id,label,split");
    app->add_option("--sbm-blocks", blocks, "SBM block sizes when no files are given")->capture_default_str();
    app->add_option("--p-in", p_in, "SBM within-block edge probability")->capture_default_str();
    app->add_option("--p-out", p_out, "SBM between-block edge probability")->capture_default_str();
    app->add_option("--feature-dim", feature_dim, "SBM feature dimension")->capture_default_str();
    app->add_option("--feature-noise", feature_noise, "SBM feature noise")->capture_default_str();
    app->add_option("--data-seed", data_seed, "SBM generator seed")->capture_default_str();
    app->add_option("--train-fraction", split.train_fraction, "SBM training nodes per block")->capture_default_str();
    app->add_option("--val-fraction", split.val_fraction, "SBM validation nodes per block")->capture_default_str();
  }

  bool any_given() const {
    for (const char* f : {"--edges", "--features", "--labels", "--sbm-blocks", "--p-in", "--p-out", "--feature-dim",
                          "--feature-noise", "--data-seed", "--train-fraction", "--val-fraction"}) {
      if (owner != nullptr && owner->count(f) > 0) return true;
    }
    return false;
  }

  std::map<std::string, std::string> echo() const {
    if (!edges.empty()) return {{"edges", edges}, {"features", features}, {"labels", labels}};
    return {{"sbm_blocks", blocks},
            {"p_in", format_sig12(p_in)},
            {"p_out", format_sig12(p_out)},
            {"feature_dim", std::to_string(feature_dim)},
            {"feature_noise", format_sig12(feature_noise)},
            {"data_seed", std::to_string(data_seed)},
            {"train_fraction", format_sig12(split.train_fraction)},
            {"val_fraction", format_sig12(split.val_fraction)}};
  }

  DatasetBundle load(const std::string& dataset) const {
    if (!edges.empty() || !features.empty() || !labels.empty()) {
      if (edges.empty() || features.empty() || labels.empty()) {
        throw UsageError("--edges, --features and --labels must be given together");
      }
      return load_dataset(edges, features, labels, dataset == "sbm" ? std::string() : dataset);
    }
    if (dataset != "sbm") throw UsageError("dataset '" + dataset + "' needs --edges, --features and --labels");
    std::vector<std::size_t> sizes;
    for (const auto& tok : io_detail::split(blocks, ',')) {
      if (tok.empty() || tok.find_first_not_of("0123456789") != std::string::npos) {
        throw UsageError("--sbm-blocks: '" + blocks + "' is not a comma-separated list of sizes");
      }
      sizes.push_back(std::stoull(tok));
    }
    return sbm_dataset(sizes, p_in, p_out, feature_dim, feature_noise, data_seed, split);
  }
};

/// One `--<key>` flag per config key; values override the config file.
struct ConfigFlags {
  std::string path;
  std::map<std::string, std::string> overrides;

  void add(CLI::App* app, bool config_required) {
    auto* opt = app->add_option("--config", path, "flat key = value config file");
    if (config_required) opt->required();
    for (const auto& key : config_keys()) {
      std::string flag = key;
      std::replace(flag.begin(), flag.end(), '_', '-');
      app->add_option("--" + flag, overrides[key], "override config key " + key);
    }
  }

  TrainConfig resolve() const {
    TrainConfig cfg = path.empty() ? TrainConfig{} : load_config(path);
    for (const auto& [key, value] : overrides) {
      if (!value.empty()) set_config_value(cfg, key, value);
    }
    cfg.validate();
    return cfg;
  }
};

std::vector<std::uint64_t> seed_list(std::uint64_t first, std::size_t count) {
  if (count < 1) throw UsageError("--seeds must be >= 1");
  std::vector<std::uint64_t> s(count);
  for (std::size_t k = 0; k < count; ++k) s[k] = first + k;
  return s;
}

// ---------------------------------------------------------------------------
// curvature
// ---------------------------------------------------------------------------

struct CurvatureCmd {
  std::string edges, features, checkpoint, method = "exact", out;
  double alpha = 0.5;
  std::size_t nodes = 0, bins = 40, jobs = 1;
  int radius_cap = 3;

  void add(CLI::App* app) {
    app->add_option("--edges", edges, "edge-list file")->required();
    app->add_option("--alpha", alpha, "idleness of the mass distribution")->capture_default_str();
    app->add_option("--method", method, "exact or surrogate")
        ->check(CLI::IsMember({"exact", "surrogate"}))
        ->capture_default_str();
    app->add_option("--features", features, "feature CSV (surrogate)");
    app->add_option("--checkpoint", checkpoint, "run directory or its checkpoint.bin (surrogate)");
    app->add_option("--nodes", nodes, "node count (default: feature rows, else largest index + 1)");
    app->add_option("--bins", bins, "histogram bins")->capture_default_str();
    app->add_option("--radius-cap", radius_cap, "hop cap for transport costs")->capture_default_str();
    app->add_option("--jobs", jobs, "worker threads")->capture_default_str();
    app->add_option("--out", out, "curvature CSV path");
  }

  static std::size_t infer_nodes(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open " + path);
    long long hi = -1;
    std::string line;
    while (std::getline(is, line)) {
      const auto t = io_detail::trim(line);
      if (t.empty() || t[0] == '#') continue;
      std::istringstream ls(t);
      long long a = -1, b = -1;
      ls >> a >> b;
      hi = std::max({hi, a, b});
    }
    return static_cast<std::size_t>(std::max(hi + 1, 1LL));
  }

  int run() {
    const fs::path csv = out.empty() ? default_output("curvature.csv") : fs::path(out);
    if (csv.has_parent_path()) fs::create_directories(csv.parent_path());
    RunManifest manifest;
    manifest.command = "curvature";
    manifest.created = utc_timestamp();
    manifest.options = {{"method", method}, {"alpha", format_sig12(alpha)}, {"edges", edges}};

    std::vector<Edge> order;
    std::vector<double> kappa;
    if (method == "exact") {
      const std::size_t n = nodes ? nodes : features.empty() ? infer_nodes(edges) : [&] {
        std::ifstream fs_(features);
        return read_features(fs_, features).rows();
      }();
      std::ifstream is(edges);
      if (!is) throw DataError("cannot open " + edges);
      const Graph g = read_edge_list(is, n, edges);
      const auto m = ollivier_ricci(g, alpha, radius_cap, std::max<std::size_t>(jobs, 1));
      order = m.edges;
      kappa.assign(m.kappa.begin(), m.kappa.end());
      manifest.inputs.push_back({edges, file_hash(edges)});
    } else {
      if (features.empty() || checkpoint.empty()) {
        throw UsageError("--method surrogate requires --features and --checkpoint");
      }
      fs::path run_dir = checkpoint;
      if (fs::is_regular_file(run_dir)) run_dir = run_dir.parent_path();
      auto loaded = load_artifacts(run_dir);
      const TrainConfig& cfg = loaded.manifest.config;
      manifest.config = cfg;
      DatasetBundle d;
      {
        std::ifstream fs_(features);
        if (!fs_) throw DataError("cannot open " + features);
        d.features = read_features(fs_, features);
      }
      const auto n = d.features.rows();
      if (n != loaded.state.refined.node_count() || d.features.dim() != loaded.state.params.in_w.value.rows()) {
        throw DataError("features do not match the checkpoint: " + d.features.values.shape_str());
      }
      std::ifstream is(edges);
      if (!is) throw DataError("cannot open " + edges);
      const Graph g = read_edge_list(is, n, edges);
      const Matrix z = current_embedding(loaded.state, cfg, d);
      Tape t;
      const auto k = ib_curvature(mass_matrix(g, alpha), t.constant(z), loaded.state.params.head, cfg.metric(),
                                  g.edges());
      order = g.edges();
      kappa = k.values();
      manifest.inputs = {{edges, file_hash(edges)}, {features, file_hash(features)},
                         {(run_dir / artifact_files::kCheckpoint).string(),
                          file_hash((run_dir / artifact_files::kCheckpoint).string())}};
    }

    std::ostringstream rows;
    rows << "src,dst,kappa\n";
    for (std::size_t k = 0; k < order.size(); ++k) {
      rows << order[k].u << ',' << order[k].v << ',' << format_sig12(kappa[k]) << '\n';
    }
    const auto stem = csv.parent_path() / csv.stem();
    const fs::path hist = stem.string() + "_histogram.csv";
    const fs::path meta = stem.string() + ".meta.json";
    const fs::path man = stem.string() + ".manifest.json";
    std::ostringstream h;
    write_histogram_csv(h, curvature_histogram(kappa, bins));
    write_text_file(csv, rows.str());
    write_text_file(hist, h.str());
    write_text_file(meta, curvature_metadata(method, alpha, order.size()));
    manifest.outputs = {{"curvature", csv.filename().string()},
                        {"histogram", hist.filename().string()},
                        {"curvature_metadata", meta.filename().string()}};
    manifest.finished = utc_timestamp();
    manifest.summary = {{"edges", static_cast<double>(order.size())}};
    write_text_file(man, manifest_text(manifest));
    std::cout << "wrote " << order.size() << " curvature values to " << csv.string() << '\n';
    return kExitOk;
  }
};

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainCmd {
  ConfigFlags config;
  DataFlags data;
  std::string out, resume;
  std::size_t seeds = 1, jobs = 1;
  std::optional<std::size_t> max_epochs;

  void add(CLI::App* app) {
    config.add(app, false);
    data.add(app);
    app->add_option("--out", out, "run directory");
    app->add_option("--seeds", seeds, "replicate seeds starting at the config seed")->capture_default_str();
    app->add_option("--jobs", jobs, "parallel replicate workers")->capture_default_str();
    app->add_option("--max-epochs", max_epochs, "stop after this many outer epochs in this invocation");
    app->add_option("--resume", resume, "continue the run stored in this directory");
  }

  struct SeedRun {
    TrainState state;
    RunManifest manifest;
    double max_train_accuracy = 0.0;
    std::string error;
    bool numeric = false;
  };

  static std::map<std::string, double> run_summary(const TrainState& s, double max_train, double final_train) {
    return {{"best_val_accuracy", s.best_val},
            {"test_accuracy", s.test_at_best},
            {"test_macro_f1", s.f1_at_best},
            {"best_epoch", static_cast<double>(s.best_epoch)},
            {"epochs_completed", static_cast<double>(s.epoch)},
            {"stopped_early", s.stopped ? 1.0 : 0.0},
            {"max_train_accuracy", max_train},
            {"final_train_accuracy", final_train},
            {"final_compression", s.log.epochs.empty() ? 0.0 : s.log.epochs.back().compression}};
  }

  static std::string status_of(const TrainState& s, const TrainConfig& cfg) {
    return s.stopped || s.epoch >= cfg.outer_epochs ? "complete" : "incomplete";
  }

  // Trains one seed and saves its artifacts; failures are captured.
  static void run_seed(SeedRun& r, const TrainConfig& cfg, const DatasetBundle& d, std::optional<std::size_t> max,
                       const fs::path& dir) {
    double final_train = 0.0;
    auto observe = [&](TrainState& s) {
      final_train = evaluate(s, cfg, d, Split::Train).accuracy;
      r.max_train_accuracy = std::max(r.max_train_accuracy, final_train);
    };
    try {
      train(r.state, cfg, d, observe, max);
      r.manifest.status = status_of(r.state, cfg);
    } catch (const NumericError& e) {
      r.error = e.what();
      r.numeric = true;
      r.manifest.status = "aborted";
    }
    if (!r.state.log.epochs.empty() && final_train == 0.0) final_train = evaluate(r.state, cfg, d, Split::Train).accuracy;
    r.manifest.finished = utc_timestamp();
    r.manifest.summary = run_summary(r.state, r.max_train_accuracy, final_train);
    r.manifest = save_artifacts(r.state, r.manifest, dir);
  }

  int run() {
    const fs::path dir = out.empty() ? (resume.empty() ? default_output("train") : fs::path(resume)) : fs::path(out);
    if (!resume.empty()) return run_resume(dir);

    const TrainConfig cfg = config.resolve();
    const DatasetBundle d = data.load(cfg.dataset);
    const auto seed_values = seed_list(cfg.seed, seeds);
    std::vector<SeedRun> runs(seed_values.size());
    std::vector<fs::path> dirs(seed_values.size(), dir);
    if (seed_values.size() > 1) {
      for (std::size_t k = 0; k < seed_values.size(); ++k) dirs[k] = dir / ("seed_" + std::to_string(seed_values[k]));
    }
    for (std::size_t k = 0; k < runs.size(); ++k) {
      TrainConfig c = cfg;
      c.seed = seed_values[k];
      runs[k].manifest = make_manifest(c, d);
      runs[k].manifest.options = data.echo();
      runs[k].state = initialize(c, d);
    }
    parallel_for(runs.size(), std::max<std::size_t>(jobs, 1), [&](std::size_t k) {
      TrainConfig c = cfg;
      c.seed = seed_values[k];
      run_seed(runs[k], c, d, max_epochs, dirs[k]);
    });

    bool numeric = false;
    for (std::size_t k = 0; k < runs.size(); ++k) {
      const auto& s = runs[k].state;
      std::cout << "seed " << seed_values[k] << ": " << runs[k].manifest.status << ", epochs " << s.epoch
                << ", best val " << format_sig12(s.best_val) << ", test " << format_sig12(s.test_at_best)
                << ", max train " << format_sig12(runs[k].max_train_accuracy) << '\n';
      if (runs[k].numeric) {
        std::cerr << "seed " << seed_values[k] << " aborted: " << runs[k].error << '\n';
        numeric = true;
      }
    }
    if (seed_values.size() > 1) write_replicate_summary(dir, cfg, d, seed_values, runs);
    return numeric ? kExitNumeric : kExitOk;
  }

  void write_replicate_summary(const fs::path& dir, const TrainConfig& cfg, const DatasetBundle& d,
                               const std::vector<std::uint64_t>& seed_values, const std::vector<SeedRun>& runs) {
    std::ostringstream per;
    per << "seed,status,val_accuracy,test_accuracy,test_macro_f1,best_epoch,epochs_completed,final_compression\n";
    std::vector<RunResult> ok;
    std::vector<SeedFailure> failed;
    for (std::size_t k = 0; k < runs.size(); ++k) {
      const auto r = run_result(runs[k].state, seed_values[k]);
      per << r.seed << ',' << runs[k].manifest.status << ',' << format_sig12(r.val_accuracy) << ','
          << format_sig12(r.test_accuracy) << ',' << format_sig12(r.test_macro_f1) << ',' << r.best_epoch << ','
          << r.epochs_run << ',' << format_sig12(r.final_compression) << '\n';
      if (runs[k].numeric) {
        failed.push_back({seed_values[k], runs[k].error});
      } else {
        ok.push_back(r);
      }
    }
    write_text_file(dir / "per_seed.csv", per.str());
    RunManifest m = make_manifest(cfg, d);
    m.options = data.echo();
    m.options["seeds"] = std::to_string(seed_values.size());
    bool complete = failed.empty();
    for (const auto& r : runs) complete = complete && r.manifest.status == "complete";
    m.status = complete ? "complete" : "incomplete";
    m.finished = utc_timestamp();
    for (std::size_t k = 0; k < runs.size(); ++k) {
      m.outputs["seed_" + std::to_string(seed_values[k])] = "seed_" + std::to_string(seed_values[k]);
    }
    m.outputs["per_seed"] = "per_seed.csv";
    if (!ok.empty()) {
      const auto s = summarize(ok, failed);
      m.summary = {{"test_accuracy_mean", s.test_accuracy.mean},     {"test_accuracy_std", s.test_accuracy.std},
                   {"test_macro_f1_mean", s.test_macro_f1.mean},     {"val_accuracy_mean", s.val_accuracy.mean},
                   {"final_compression_mean", s.compression.mean}, {"failures", double(failed.size())}};
    }
    write_text_file(dir / artifact_files::kManifest, manifest_text(m));
  }

  int run_resume(const fs::path& dir) {
    auto loaded = load_artifacts(resume);
    TrainConfig cfg = loaded.manifest.config;
    for (const auto& [key, value] : config.overrides) {
      if (!value.empty() && key != "outer_epochs" && key != "patience") {
        throw UsageError("--resume only accepts --outer-epochs and --patience overrides");
      }
      if (!value.empty()) set_config_value(cfg, key, value);
    }
    cfg.validate();
    DataFlags flags = data;
    if (!data.any_given()) {
      // Regenerate the recorded synthetic dataset.
      const auto& o = loaded.manifest.options;
      auto get = [&](const char* k) {
        const auto it = o.find(k);
        if (it == o.end()) throw UsageError(std::string("manifest lacks option ") + k + "; pass the dataset flags");
        return it->second;
      };
      if (o.count("edges")) {
        flags.edges = get("edges");
        flags.features = get("features");
        flags.labels = get("labels");
      } else {
        flags.blocks = get("sbm_blocks");
        flags.p_in = std::stod(get("p_in"));
        flags.p_out = std::stod(get("p_out"));
        flags.feature_dim = std::stoull(get("feature_dim"));
        flags.feature_noise = std::stod(get("feature_noise"));
        flags.data_seed = std::stoull(get("data_seed"));
        flags.split = {std::stod(get("train_fraction")), std::stod(get("val_fraction"))};
      }
    }
    const DatasetBundle d = flags.load(cfg.dataset);
    require_same_dataset(loaded.manifest, d);
    SeedRun r{std::move(loaded.state), loaded.manifest, 0.0, {}, false};
    r.manifest.config = cfg;
    r.max_train_accuracy = loaded.manifest.summary.count("max_train_accuracy")
                               ? loaded.manifest.summary.at("max_train_accuracy")
                               : 0.0;
    run_seed(r, cfg, d, max_epochs, dir);
    std::cout << "resumed: " << r.manifest.status << ", epochs " << r.state.epoch << ", test "
              << format_sig12(r.state.test_at_best) << '\n';
    if (r.numeric) {
      std::cerr << "aborted: " << r.error << '\n';
      return kExitNumeric;
    }
    return kExitOk;
  }
};

// ---------------------------------------------------------------------------
// rewire
// ---------------------------------------------------------------------------

struct RewireCmd {
  std::string run_dir, out;

  void add(CLI::App* app) {
    app->add_option("--run", run_dir, "trained run directory")->required();
    app->add_option("--out", out, "output directory");
  }

  int run() {
    const fs::path dir = out.empty() ? default_output("rewire") : fs::path(out);
    fs::create_directories(dir);
    auto loaded = load_artifacts(run_dir);
    const auto& s = loaded.state;
    std::size_t kept = 0, added = 0;
    for (std::size_t k = 0; k < s.candidates.size(); ++k) {
      const auto& e = s.candidates.edges[k];
      if (!s.refined.has_edge(e.u, e.v)) continue;
      s.candidates.original[k] ? ++kept : ++added;
    }
    std::size_t original = 0;
    for (bool o : s.candidates.original) original += o ? 1 : 0;
    std::ostringstream edges, probs, summary;
    write_edge_list(edges, s.refined);
    write_probabilities_csv(probs, s);
    summary << "original_edges,refined_edges,kept,removed,added\n"
            << original << ',' << s.refined.edge_count() << ',' << kept << ',' << original - kept << ',' << added
            << '\n';
    write_text_file(dir / "refined_edges.txt", edges.str());
    write_text_file(dir / "probabilities.csv", probs.str());
    write_text_file(dir / "rewire_summary.csv", summary.str());

    RunManifest m;
    m.command = "rewire";
    m.config = loaded.manifest.config;
    m.created = utc_timestamp();
    m.inputs = {{(fs::path(run_dir) / artifact_files::kCheckpoint).string(), loaded.manifest.checkpoint_hash}};
    m.dataset_hash = loaded.manifest.dataset_hash;
    m.options = {{"run", run_dir}};
    m.outputs = {{"refined_edges", "refined_edges.txt"},
                 {"probabilities", "probabilities.csv"},
                 {"summary", "rewire_summary.csv"}};
    m.summary = {{"original_edges", double(original)}, {"refined_edges", double(s.refined.edge_count())},
                 {"kept", double(kept)},               {"added", double(added)}};
    m.finished = utc_timestamp();
    write_text_file(dir / artifact_files::kManifest, manifest_text(m));
    std::cout << "refined structure: " << s.refined.edge_count() << " edges (" << kept << " kept, "
              << original - kept << " removed, " << added << " added)\n";
    return kExitOk;
  }
};

// ---------------------------------------------------------------------------
// denoise-bench
// ---------------------------------------------------------------------------

struct DenoiseCmd {
  ConfigFlags config;
  DataFlags data;
  std::vector<double> ratios{0.0, 0.1, 0.2, 0.3, 0.4, 0.5};
  std::vector<std::string> modes{"add", "remove"};
  std::size_t seeds = 5, jobs = 1;
  std::string baseline = "gcn", out;
  std::uint64_t noise_seed = 0;

  void add(CLI::App* app) {
    config.add(app, false);
    data.add(app);
    app->add_option("--ratios", ratios, "noise ratios")->delimiter(',')->capture_default_str();
    app->add_option("--modes", modes, "noise modes (add, remove, mixed)")->delimiter(',')->capture_default_str();
    app->add_option("--seeds", seeds, "replicate seeds per cell")->capture_default_str();
    app->add_option("--baseline", baseline, "control method")->check(CLI::IsMember({"gcn"}))->capture_default_str();
    app->add_option("--noise-seed", noise_seed, "seed of the edge corruption")->capture_default_str();
    app->add_option("--jobs", jobs, "parallel replicate workers")->capture_default_str();
    app->add_option("--out", out, "output directory");
  }

  int run() {
    const fs::path dir = out.empty() ? default_output("denoise") : fs::path(out);
    fs::create_directories(dir);
    const TrainConfig cfg = config.resolve();
    const DatasetBundle clean = data.load(cfg.dataset);
    for (double r : ratios) {
      if (!(r >= 0.0 && r <= 1.0)) throw UsageError("--ratios values must lie in [0, 1]");
    }
    std::vector<NoiseMode> parsed;
    for (const auto& m : modes) parsed.push_back(parse_noise_mode(m));
    const auto seed_values = seed_list(cfg.seed, seeds);

    std::ostringstream table, per;
    table << "ratio,mode,method,mean_accuracy,std_accuracy,mean_macro_f1,seeds,failures\n";
    per << "ratio,mode,method,seed,test_accuracy,test_macro_f1\n";
    std::map<std::string, ExperimentSummary> clean_runs;  // ratio 0 is the same graph for every mode
    for (double ratio : ratios) {
      for (std::size_t mi = 0; mi < parsed.size(); ++mi) {
        DatasetBundle noisy = clean;
        noisy.graph = inject_noise(clean.graph, ratio, parsed[mi], noise_seed);
        for (Method method : {Method::CurvGib, Method::Gcn}) {
          ExperimentSummary s;
          const std::string key = method_name(method);
          if (ratio == 0.0 && clean_runs.count(key)) {
            s = clean_runs.at(key);
          } else {
            s = run_experiment(cfg, noisy, seed_values, method, std::max<std::size_t>(jobs, 1));
            if (ratio == 0.0) clean_runs[key] = s;
          }
          table << format_sig12(ratio) << ',' << modes[mi] << ',' << key << ','
                << format_sig12(s.test_accuracy.mean) << ',' << format_sig12(s.test_accuracy.std) << ','
                << format_sig12(s.test_macro_f1.mean) << ',' << s.runs.size() << ',' << s.failures.size() << '\n';
          for (const auto& r : s.runs) {
            per << format_sig12(ratio) << ',' << modes[mi] << ',' << key << ',' << r.seed << ','
                << format_sig12(r.test_accuracy) << ',' << format_sig12(r.test_macro_f1) << '\n';
          }
          for (const auto& f : s.failures) std::cerr << key << " seed " << f.seed << " failed: " << f.message << '\n';
          std::cout << "ratio " << format_sig12(ratio) << ' ' << modes[mi] << ' ' << key << ": "
                    << format_sig12(s.test_accuracy.mean) << " +- " << format_sig12(s.test_accuracy.std) << '\n';
        }
      }
    }
    write_text_file(dir / "denoise.csv", table.str());
    write_text_file(dir / "denoise_per_seed.csv", per.str());

    RunManifest m = make_manifest(cfg, clean, "denoise-bench");
    m.options = data.echo();
    m.options["ratios"] = join_reals(ratios);
    m.options["modes"] = join(modes);
    m.options["seeds"] = std::to_string(seeds);
    m.options["baseline"] = baseline;
    m.options["noise_seed"] = std::to_string(noise_seed);
    m.outputs = {{"comparison", "denoise.csv"}, {"per_seed", "denoise_per_seed.csv"}};
    m.summary = {{"rows", double(ratios.size() * modes.size() * 2)}};
    m.finished = utc_timestamp();
    write_text_file(dir / artifact_files::kManifest, manifest_text(m));
    return kExitOk;
  }
};

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

struct GradcheckCmd {
  std::vector<std::string> targets = gradcheck_targets();
  std::size_t seeds = 5, nodes = 10;
  double step = 1e-5, tol = 1e-4;
  std::string out;

  void add(CLI::App* app) {
    app->add_option("--targets", targets, "targets to check")
        ->delimiter(',')
        ->check(CLI::IsMember(gradcheck_targets()))
        ->capture_default_str();
    app->add_option("--seeds", seeds, "random instances per target")->capture_default_str();
    app->add_option("--nodes", nodes, "nodes per instance")->capture_default_str();
    app->add_option("--step", step, "central-difference step")->capture_default_str();
    app->add_option("--tol", tol, "maximum relative error")->capture_default_str();
    app->add_option("--out", out, "output directory");
  }

  int run() {
    const fs::path dir = out.empty() ? default_output("gradcheck") : fs::path(out);
    fs::create_directories(dir);
    if (seeds < 1) throw UsageError("--seeds must be >= 1");
    std::ostringstream csv;
    csv << "target,seed,max_rel_error,bias_gradient,pass\n";
    bool all = true;
    double worst = 0.0;
    for (const auto& target : targets) {
      for (std::uint64_t seed = 0; seed < seeds; ++seed) {
        const auto r = run_gradcheck(target, seed, nodes, step);
        const bool pass = r.max_rel_error <= tol && r.bias_gradient <= 1e-12;
        all = all && pass;
        worst = std::max(worst, r.max_rel_error);
        csv << target << ',' << seed << ',' << format_sig12(r.max_rel_error) << ',' << format_sig12(r.bias_gradient)
            << ',' << (pass ? 1 : 0) << '\n';
        std::cout << target << " seed " << seed << ": max relative error " << format_sig12(r.max_rel_error)
                  << (pass ? "" : "  FAIL") << '\n';
      }
    }
    write_text_file(dir / "gradcheck.csv", csv.str());
    RunManifest m;
    m.command = "gradcheck";
    m.created = utc_timestamp();
    m.status = all ? "complete" : "failed";
    m.options = {{"targets", join(targets)}, {"seeds", std::to_string(seeds)}, {"nodes", std::to_string(nodes)},
                 {"step", format_sig12(step)}, {"tol", format_sig12(tol)}};
    m.outputs = {{"gradcheck", "gradcheck.csv"}};
    m.summary = {{"max_rel_error", worst}, {"pass", all ? 1.0 : 0.0}};
    m.finished = utc_timestamp();
    write_text_file(dir / artifact_files::kManifest, manifest_text(m));
    return all ? kExitOk : kExitNumeric;
  }
};

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

struct ReportCmd {
  std::string run_dir, out;

  void add(CLI::App* app) {
    app->add_option("--run", run_dir, "train run directory")->required();
    app->add_option("--out", out, "output directory");
  }

  struct SeedReport {
    std::string name;
    RunManifest manifest;
    std::vector<EpochRecord> epochs;
  };

  int run() {
    const fs::path root = run_dir;
    const fs::path dir = out.empty() ? default_output("report") : fs::path(out);
    fs::create_directories(dir);
    const auto top = read_manifest(root / artifact_files::kManifest);
    if (top.command != "train") throw UsageError("report expects a train run, got '" + top.command + "'");

    std::vector<SeedReport> seeds;
    auto read_run = [&](const fs::path& d, const std::string& name) {
      SeedReport r{name, read_manifest(d / artifact_files::kManifest), {}};
      std::ifstream is(d / artifact_files::kMetrics);
      if (!is) throw DataError("missing " + (d / artifact_files::kMetrics).string());
      r.epochs = read_metrics_csv(is, (d / artifact_files::kMetrics).string());
      seeds.push_back(std::move(r));
    };
    if (fs::exists(root / artifact_files::kMetrics)) {
      read_run(root, std::to_string(top.config.seed));
    } else {
      for (const auto& [role, rel] : top.outputs) {
        if (role.rfind("seed_", 0) == 0) read_run(root / rel, role.substr(5));
      }
    }
    if (seeds.empty()) throw DataError("no runs found under " + root.string());

    std::ostringstream curve;
    curve << "seed,epoch,total,prediction,compression,structure,ibcurv,accuracy_val,accuracy_test\n";
    std::vector<double> test, val, f1, comp;
    std::vector<std::string> problems;
    if (top.status != "complete") problems.push_back("run status is " + top.status);
    for (const auto& s : seeds) {
      for (const auto& e : s.epochs) {
        curve << s.name << ',' << e.epoch << ',' << format_sig12(e.total) << ',' << format_sig12(e.prediction) << ','
              << format_sig12(e.compression) << ',' << format_sig12(e.structure) << ',' << format_sig12(e.ibcurv)
              << ',' << format_sig12(e.accuracy_val) << ',' << format_sig12(e.accuracy_test) << '\n';
      }
      if (s.manifest.status != "complete") {
        problems.push_back("seed " + s.name + ": status " + s.manifest.status + " after " +
                           std::to_string(s.epochs.size()) + " of " + std::to_string(s.manifest.config.outer_epochs) +
                           " epochs");
      }
      if (s.epochs.empty()) continue;
      // Best validation epoch, first one on ties, as during training.
      const EpochRecord* best = &s.epochs.front();
      for (const auto& e : s.epochs) {
        if (e.accuracy_val > best->accuracy_val) best = &e;
      }
      test.push_back(best->accuracy_test);
      val.push_back(best->accuracy_val);
      f1.push_back(best->macro_f1_test);
      comp.push_back(s.epochs.back().compression);
    }
    std::ostringstream summary;
    summary << "metric,mean,std,n\n";
    auto row = [&](const char* name, const std::vector<double>& xs) {
      const auto ms = xs.empty() ? MeanStd{} : mean_std(xs);
      summary << name << ',' << format_sig12(ms.mean) << ',' << format_sig12(ms.std) << ',' << xs.size() << '\n';
      return ms;
    };
    const auto t = row("test_accuracy", test);
    row("val_accuracy", val);
    row("test_macro_f1", f1);
    row("final_compression", comp);

    std::ostringstream text;
    text << "run: " << root.string() << '\n';
    text << "seeds: " << seeds.size() << '\n';
    text << "status: " << (problems.empty() ? "complete" : "INCOMPLETE") << '\n';
    for (const auto& p : problems) text << "  " << p << '\n';
    text << "test accuracy at best validation epoch: " << format_sig12(t.mean) << " +- " << format_sig12(t.std) << '\n';
    write_text_file(dir / "learning_curve.csv", curve.str());
    write_text_file(dir / "summary.csv", summary.str());
    write_text_file(dir / "summary.txt", text.str());

    RunManifest m;
    m.command = "report";
    m.config = top.config;
    m.created = utc_timestamp();
    m.status = problems.empty() ? "complete" : "incomplete";
    m.options = {{"run", run_dir}};
    m.outputs = {{"learning_curve", "learning_curve.csv"}, {"summary", "summary.csv"}, {"summary_text", "summary.txt"}};
    m.summary = {{"test_accuracy_mean", t.mean}, {"seeds", double(seeds.size())}};
    m.finished = utc_timestamp();
    write_text_file(dir / artifact_files::kManifest, manifest_text(m));
    std::cout << text.str();
    return kExitOk;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"curvgib: curvature-guided graph information bottleneck toolkit"};
  app.set_version_flag("--version", std::string(kToolkitVersion));
  app.require_subcommand(1);

  CurvatureCmd curvature;
  TrainCmd train_cmd;
  RewireCmd rewire;
  DenoiseCmd denoise;
  GradcheckCmd gradcheck;
  ReportCmd report;
  auto* c1 = app.add_subcommand("curvature", "per-edge curvature CSV plus histogram");
  curvature.add(c1);
  auto* c2 = app.add_subcommand("train", "bi-level training run");
  train_cmd.add(c2);
  auto* c3 = app.add_subcommand("rewire", "export the refined structure of a run");
  rewire.add(c3);
  auto* c4 = app.add_subcommand("denoise-bench", "accuracy under edge corruption against the GCN control");
  denoise.add(c4);
  auto* c5 = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  gradcheck.add(c5);
  auto* c6 = app.add_subcommand("report", "learning curves and summary of a run");
  report.add(c6);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*c1) return curvature.run();
    if (*c2) return train_cmd.run();
    if (*c3) return rewire.run();
    if (*c4) return denoise.run();
    if (*c5) return gradcheck.run();
    if (*c6) return report.run();
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}
