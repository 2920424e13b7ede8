// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "curvgib/artifacts.hpp"
#include "curvgib/diagnostics.hpp"
#include "oracles.hpp"

using namespace curvgib;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Graph random_connected_graph(std::size_t n, double p, std::uint64_t seed) {
  SeqRng rng(seed);
  std::vector<std::pair<NodeId, NodeId>> pairs;
  for (NodeId i = 1; i < n; ++i) pairs.emplace_back(static_cast<NodeId>(rng.below(i)), i);
  for (NodeId i = 0; i < n; ++i) {
    for (NodeId j = i + 1; j < n; ++j) {
      if (rng.uniform() < p) pairs.emplace_back(i, j);
    }
  }
  return build_graph(pairs, n);
}

// Erdos-Renyi, so isolated nodes occur.
Graph random_er_graph(std::size_t n, double p, std::uint64_t seed) {
  SeqRng rng(seed);
  std::vector<std::pair<NodeId, NodeId>> pairs;
  for (NodeId i = 0; i < n; ++i) {
    for (NodeId j = i + 1; j < n; ++j) {
      if (rng.uniform() < p) pairs.emplace_back(i, j);
    }
  }
  return build_graph(pairs, n);
}

Matrix random_normal(std::size_t r, std::size_t c, std::uint64_t seed, double scale = 1.0) {
  SeqRng rng(seed);
  Matrix m(r, c);
  for (auto& v : m.data()) v = scale * rng.normal();
  return m;
}

double oracle_curvature(const Graph& g, const Edge& e, double alpha) {
  const auto hops = oracle::all_pairs_hops(g);
  const auto mi = mass_distribution(g, e.u, alpha);
  const auto mj = mass_distribution(g, e.v, alpha);
  oracle::Dense cost(mi.support.size(), std::vector<double>(mj.support.size()));
  for (std::size_t a = 0; a < mi.support.size(); ++a) {
    for (std::size_t b = 0; b < mj.support.size(); ++b) cost[a][b] = hops[mi.support[a]][mj.support[b]];
  }
  return 1.0 - oracle::transport_lp(mi.weights, mj.weights, cost);
}

// The desk-scale SBM shared by the learning criteria.
DatasetBundle desk_sbm() { return sbm_dataset({100, 100}, 0.2, 0.05, 16, 1.0, 0); }

const std::vector<std::uint64_t> kFiveSeeds{0, 1, 2, 3, 4};

// ---------------------------------------------------------------------------

Verdict transport_oracle() {
  constexpr double kTol = 1e-9;
  constexpr double kLimit = 30.0;
  const auto start = Clock::now();
  double worst = 0.0;
  std::size_t edges = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto g = random_connected_graph(3 + seed % 10, 0.3, 1000 + seed);
    for (double alpha : {0.0, 0.25, 0.5}) {
      const auto m = ollivier_ricci(g, alpha);
      for (std::size_t k = 0; k < m.size(); ++k) {
        worst = std::max(worst, std::abs(m.kappa[k] - oracle_curvature(g, m.edges[k], alpha)));
        ++edges;
      }
    }
  }
  const double t = seconds_since(start);
  return {worst <= kTol && t < kLimit,
          fmt("%zu edge evaluations, max |diff| %.3g (tol %.0e), %.2f s (limit %.0f s)", edges, worst, kTol, t, kLimit)};
}

Verdict analytic_anchors() {
  constexpr double kTol = 1e-12;
  const auto p3_oracle = 1.0 - oracle::transport_vertex_enumeration({1.0}, {0.5, 0.5}, {{1.0, 1.0}});
  const auto k3_oracle = 1.0 - oracle::transport_vertex_enumeration({0.5, 0.5}, {0.5, 0.5}, {{1.0, 1.0}, {1.0, 0.0}});
  const double k2 = ollivier_ricci(build_graph({{0, 1}}, 2), 0.5).kappa[0];
  const double p3 = *ollivier_ricci(build_graph({{0, 1}, {1, 2}}, 3), 0.0).at(0, 1);
  const double k3 = ollivier_ricci(build_graph({{0, 1}, {0, 2}, {1, 2}}, 3), 0.0).kappa[0];
  const bool ok = k2 == 1.0 && std::abs(p3_oracle) <= kTol && std::abs(p3 - p3_oracle) <= kTol &&
                  std::abs(k3_oracle - 0.5) <= kTol && std::abs(k3 - k3_oracle) <= kTol;
  return {ok, fmt("K2 %.17g, P3 end %.3g (oracle %.3g), K3 %.17g (oracle %.17g), tol %.0e", k2, p3, p3_oracle, k3,
                  k3_oracle, kTol)};
}

Verdict gradient_integrity() {
  constexpr double kTol = 1e-4;
  constexpr double kLimit = 60.0;
  const auto start = Clock::now();
  bool ok = true;
  std::string detail;
  for (const auto& target : gradcheck_targets()) {
    double worst = 0.0;
    std::vector<std::uint64_t> failing;
    for (std::uint64_t seed : kFiveSeeds) {
      const auto r = run_gradcheck(target, seed, 10, 1e-5);
      worst = std::max(worst, r.max_rel_error);
      if (r.max_rel_error > kTol) failing.push_back(seed);
    }
    ok = ok && failing.empty();
    detail += fmt("%s %.2e", target.c_str(), worst);
    if (!failing.empty()) {
      detail += " (seeds";
      for (auto s : failing) detail += fmt(" %llu", static_cast<unsigned long long>(s));
      detail += ")";
    }
    detail += "; ";
  }
  const double t = seconds_since(start);
  return {ok && t < kLimit, detail + fmt("tol %.0e at step 1e-5, %.2f s (limit %.0f s)", kTol, t, kLimit)};
}

Verdict closed_form_kl() {
  constexpr double kSigmas = 3.0;
  constexpr double kZeroTol = 1e-12;
  const std::vector<bool> one{true};
  double worst_ratio = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const std::size_t h = 4;
    const auto mu = random_normal(1, h, 300 + seed);
    const auto lv = random_normal(1, h, 400 + seed, 0.7);
    Tape t;
    const double closed = compression_loss({t.constant(mu), t.constant(lv)}, one).scalar();
    const KeyedStream noise(900 + seed);
    const int draws = 100000;
    double sum = 0.0, sum_sq = 0.0;
    for (int s = 0; s < draws; ++s) {
      double log_ratio = 0.0;
      for (std::size_t k = 0; k < h; ++k) {
        const double eps = noise.normal(static_cast<std::uint64_t>(s) * h + k);
        const double sigma = std::exp(lv[k] / 2);
        const double z = mu[k] + sigma * eps;
        log_ratio += (-0.5 * eps * eps - std::log(sigma)) - (-0.5 * z * z);
      }
      sum += log_ratio;
      sum_sq += log_ratio * log_ratio;
    }
    const double mean = sum / draws;
    const double se = std::sqrt((sum_sq / draws - mean * mean) / draws);
    worst_ratio = std::max(worst_ratio, std::abs(mean - closed) / se);
  }
  Tape t;
  const double standard = compression_loss({t.constant(Matrix(5, 3)), t.constant(Matrix(5, 3))},
                                           std::vector<bool>(5, true))
                              .scalar();
  return {worst_ratio < kSigmas && std::abs(standard) <= kZeroTol,
          fmt("20 posteriors, worst |MC - closed| = %.2f SE (limit %.0f); standard normal gives %.3g (tol %.0e)",
              worst_ratio, kSigmas, standard, kZeroTol)};
}

Verdict row_normalization() {
  constexpr double kTol = 1e-12;
  double worst_mass = 0.0, worst_weight = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto g = random_er_graph(5 + seed % 30, 0.15, 2000 + seed);
    SeqRng rng(seed);
    const double alpha = rng.uniform();
    const auto m = mass_matrix(g, alpha);
    for (std::size_t i = 0; i < g.node_count(); ++i) {
      double s = 0.0;
      for (std::size_t k = m.rows.offsets[i]; k < m.rows.offsets[i + 1]; ++k) s += m.rows.values[k];
      worst_mass = std::max(worst_mass, std::abs(s - 1.0));
    }
    const MessageGraph mg(g);
    Tape t;
    EdgeWeightTransform tr;
    tr.scale.value[0] = 1.0 + 2.0 * rng.uniform();
    tr.shift.value[0] = rng.normal();
    const Var w = edge_weights(t.constant(random_normal(g.edge_count(), 1, 3000 + seed)), tr, mg);
    std::vector<double> sums(g.node_count(), 0.0);
    for (std::size_t a = 0; a < mg.arc_count(); ++a) sums[mg.dst[a]] += w.value()[a];
    for (NodeId i = 0; i < g.node_count(); ++i) {
      if (g.degree(i) > 0) worst_weight = std::max(worst_weight, std::abs(sums[i] - 1.0));
    }
  }
  return {worst_mass <= kTol && worst_weight <= kTol,
          fmt("100 graphs, max |row sum - 1|: mass %.3g, edge weights %.3g (tol %.0e)", worst_mass, worst_weight,
              kTol)};
}

Verdict concrete_statistics() {
  constexpr double kSigmas = 4.0;
  const int draws = 10000;
  double worst = 0.0;
  std::string detail;
  for (double pi : {0.1, 0.3, 0.5, 0.7, 0.9}) {
    Tape t;
    const Var s = concrete_sample(t.constant(Matrix(draws, 1, pi)), 0.1, KeyedStream(4242));
    double kept = 0.0;
    for (double v : s.value().data()) kept += v >= 0.5 ? 1.0 : 0.0;
    const double z = std::abs(kept / draws - pi) / std::sqrt(pi * (1 - pi) / draws);
    worst = std::max(worst, z);
    detail += fmt("pi %.1f -> %.4f; ", pi, kept / draws);
  }
  return {worst < kSigmas, detail + fmt("worst %.2f sigma (limit %.0f)", worst, kSigmas)};
}

Verdict ib_symmetry_and_bound() {
  constexpr double kTol = 1e-12;
  const auto data = desk_sbm();
  const TrainConfig cfg;
  double worst_asym = 0.0, worst_excess = -1e300;
  std::size_t checks = 0;
  auto check = [&](TrainState& s) {
    const Matrix z = current_embedding(s, cfg, data);
    std::vector<Edge> flipped;
    for (const auto& e : s.candidates.edges) flipped.push_back({e.v, e.u});
    Tape t;
    const auto mass = mass_matrix(s.refined, cfg.alpha);
    const auto fwd = ib_curvature(mass, t.constant(z), s.params.head, cfg.metric(), s.candidates.edges).values();
    const auto bwd = ib_curvature(mass, t.constant(z), s.params.head, cfg.metric(), flipped).values();
    for (std::size_t k = 0; k < fwd.size(); ++k) {
      worst_asym = std::max(worst_asym, std::abs(fwd[k] - bwd[k]));
      worst_excess = std::max(worst_excess, fwd[k] - 1.0);
    }
    ++checks;
  };
  auto s = initialize(cfg, data);
  check(s);
  train(s, cfg, data, check);
  return {worst_asym <= kTol && worst_excess <= 0.0 && checks == s.epoch + 1,
          fmt("%zu checks over %zu epochs x %zu candidates, max asymmetry %.3g (tol %.0e), max kappa - 1 = %.3g",
              checks, s.epoch, s.candidates.size(), worst_asym, kTol, worst_excess)};
}

// Shared by the learning and denoising criteria.
struct CleanRuns {
  ExperimentSummary curvgib, gcn;
  double seconds = 0.0;
};

const CleanRuns& clean_runs() {
  static const CleanRuns runs = [] {
    const auto start = Clock::now();
    const auto data = desk_sbm();
    const TrainConfig cfg;
    CleanRuns r;
    r.curvgib = run_experiment(cfg, data, kFiveSeeds, Method::CurvGib);
    r.gcn = run_experiment(cfg, data, kFiveSeeds, Method::Gcn);
    r.seconds = seconds_since(start);
    return r;
  }();
  return runs;
}

Verdict desk_scale_learning() {
  constexpr double kFloor = 0.85;
  constexpr double kLimit = 600.0;
  const auto& r = clean_runs();
  const bool complete = r.curvgib.failures.empty() && r.gcn.failures.empty();
  const double a = r.curvgib.test_accuracy.mean, b = r.gcn.test_accuracy.mean;
  return {complete && a >= b && a >= kFloor && r.seconds < kLimit,
          fmt("CurvGIB %.4f +- %.4f vs GCN %.4f +- %.4f (need CurvGIB >= GCN and >= %.2f), %.1f s (limit %.0f s)", a,
              r.curvgib.test_accuracy.std, b, r.gcn.test_accuracy.std, kFloor, r.seconds, kLimit)};
}

Verdict denoising_robustness() {
  constexpr double kLimit = 1200.0;
  const auto& clean = clean_runs();
  const auto start = Clock::now();
  auto noisy = desk_sbm();
  noisy.graph = inject_noise(noisy.graph, 0.5, NoiseMode::Remove, 0);
  const TrainConfig cfg;
  const auto c = run_experiment(cfg, noisy, kFiveSeeds, Method::CurvGib);
  const auto g = run_experiment(cfg, noisy, kFiveSeeds, Method::Gcn);
  const double t = seconds_since(start) + clean.seconds;
  const double drop_c = clean.curvgib.test_accuracy.mean - c.test_accuracy.mean;
  const double drop_g = clean.gcn.test_accuracy.mean - g.test_accuracy.mean;
  const bool complete = c.failures.empty() && g.failures.empty();
  return {complete && drop_c <= drop_g && t < kLimit,
          fmt("50%% removal (%zu edges left): CurvGIB drop %.4f (%.4f -> %.4f), GCN drop %.4f (%.4f -> %.4f), "
              "%.1f s (limit %.0f s)",
              noisy.graph.edge_count(), drop_c, clean.curvgib.test_accuracy.mean, c.test_accuracy.mean, drop_g,
              clean.gcn.test_accuracy.mean, g.test_accuracy.mean, t, kLimit)};
}

// Consecutive means must not increase, except for at most one increase that
// stays within one standard error of the difference.
Verdict beta_monotonicity() {
  const auto data = desk_sbm();
  const std::vector<double> betas{1e-4, 1e-2, 1e-1};
  std::vector<MeanStd> comp;
  std::string detail;
  for (double beta : betas) {
    TrainConfig cfg;
    cfg.beta = beta;
    const auto s = run_experiment(cfg, data, {0, 1, 2});
    if (!s.failures.empty()) return {false, fmt("beta %.0e: %zu failed seeds", beta, s.failures.size())};
    comp.push_back(s.compression);
    detail += fmt("beta %.0e -> %.5g +- %.2g; ", beta, s.compression.mean, s.compression.std);
  }
  int inversions = 0;
  bool ok = true;
  for (std::size_t k = 0; k + 1 < comp.size(); ++k) {
    const double rise = comp[k + 1].mean - comp[k].mean;
    if (rise <= 0.0) continue;
    const double se = std::sqrt((comp[k].std * comp[k].std + comp[k + 1].std * comp[k + 1].std) / 3.0);
    ++inversions;
    if (rise > se || inversions > 1) ok = false;
  }
  return {ok, detail + fmt("%d inversion(s)", inversions)};
}

Verdict complexity_sanity() {
  constexpr double kLow = 3.0, kHigh = 6.0;
  auto median_seconds = [](std::size_t n) {
    const auto data = sbm_dataset({n / 2, n / 2}, 0.2, 0.05, 16, 1.0, 0);
    TrainConfig cfg;
    cfg.dense_candidates = true;
    const auto base = initialize(cfg, data);
    auto probe = base;
    const Matrix z = current_embedding(probe, cfg, data);
    std::vector<double> trials;
    for (std::uint64_t trial = 0; trial < 5; ++trial) {
      auto s = base;
      const auto start = Clock::now();
      for (std::uint64_t rep = 0; rep < 10; ++rep) {
        refinement_step(s, cfg, z, data.labels.train_mask, KeyedStream(trial).fork(rep));
      }
      trials.push_back(seconds_since(start));
    }
    std::nth_element(trials.begin(), trials.begin() + 2, trials.end());
    return trials[2];
  };
  median_seconds(100);  // warm-up
  const double t100 = median_seconds(100), t200 = median_seconds(200);
  const double ratio = t200 / t100;
  return {ratio >= kLow && ratio <= kHigh,
          fmt("10 dense steps: n=100 %.4f s, n=200 %.4f s, ratio %.2f (need [%.0f, %.0f])", t100, t200, ratio, kLow,
              kHigh)};
}

Verdict determinism_and_round_trip() {
  const auto data = sbm_dataset({30, 30}, 0.2, 0.05, 8, 1.0, 3);
  TrainConfig cfg;
  cfg.outer_epochs = 8;
  cfg.hidden_dim = 16;
  cfg.seed = 7;
  auto strip = [](TrainState s) {
    s.log.wall_seconds.clear();
    return s;
  };
  auto a = initialize(cfg, data);
  train(a, cfg, data);
  auto b = initialize(cfg, data);
  train(b, cfg, data);
  const bool same = strip(a) == strip(b) && run_result(a, 7).epochs == run_result(b, 7).epochs;

  const auto dir = std::filesystem::temp_directory_path() / "curvgib_acceptance_roundtrip";
  std::filesystem::remove_all(dir);
  auto part = initialize(cfg, data);
  train(part, cfg, data, {}, 3);
  save_artifacts(part, make_manifest(cfg, data), dir);
  auto loaded = load_artifacts(dir);
  const bool exact_load = loaded.state == part;
  require_same_dataset(loaded.manifest, data);
  train(loaded.state, loaded.manifest.config, data);
  const bool resumed = strip(loaded.state) == strip(a);
  std::filesystem::remove_all(dir);
  return {same && exact_load && resumed,
          fmt("repeat run bitwise equal: %s; checkpoint load exact: %s; resumed after 3 of %zu epochs equals "
              "uninterrupted: %s",
              same ? "yes" : "no", exact_load ? "yes" : "no", cfg.outer_epochs, resumed ? "yes" : "no")};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria{
      {"transport oracle equivalence", transport_oracle},
      {"analytic curvature anchors", analytic_anchors},
      {"gradient integrity", gradient_integrity},
      {"closed-form KL", closed_form_kl},
      {"mass-matrix and weight normalization", row_normalization},
      {"concrete-relaxation statistics", concrete_statistics},
      {"IB-curvature symmetry and bound", ib_symmetry_and_bound},
      {"desk-scale learning", desk_scale_learning},
      {"denoising robustness", denoising_robustness},
      {"beta monotonicity", beta_monotonicity},
      {"complexity sanity", complexity_sanity},
      {"determinism and round trip", determinism_and_round_trip},
  };
  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    Verdict v;
    try {
      v = criteria[k].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failed += v.pass ? 0 : 1;
    std::printf("%s %2zu %s: %s\n", v.pass ? "PASS" : "FAIL", k + 1, criteria[k].first, v.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
