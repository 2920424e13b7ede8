#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "curvgib/curv_gnn.hpp"
#include "curvgib/dataset.hpp"
#include "curvgib/ib_curvature.hpp"
#include "curvgib/optim.hpp"
#include "curvgib/parallel.hpp"
#include "curvgib/refinement.hpp"
#include "curvgib/vib.hpp"

namespace curvgib {

struct TrainConfig {
  std::size_t outer_epochs = 50;
  std::size_t inner_repr_epochs = 5;
  std::size_t inner_struct_epochs = 5;
  double beta = 1e-3;
  double alpha = 0.5;
  double tau = 0.5;
  double learning_rate = 1e-3;
  double lambda_curv = 0.01;
  std::size_t depth = 2;
  std::size_t hidden_dim = 64;
  double dropout = 0.5;
  std::uint64_t seed = 0;
  std::size_t candidate_k = 5;
  bool dense_candidates = false;
  std::size_t patience = 20;
  double floor_epsilon = 1e-6;
  bool signed_numerator = false;
  bool normalize_weights = true;
  double head_gain = 1e-3;
  std::string dataset = "sbm";

  void validate() const {
    if (outer_epochs < 1 || inner_repr_epochs < 1 || inner_struct_epochs < 1) {
      throw UsageError("TrainConfig: outer_epochs, inner_repr_epochs and inner_struct_epochs must be >= 1");
    }
    if (!(beta >= 0.0)) throw UsageError("TrainConfig: beta must be >= 0");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw UsageError("TrainConfig: alpha must lie in [0, 1]");
    if (!(tau > 0.0)) throw UsageError("TrainConfig: tau must be positive");
    if (!(learning_rate > 0.0)) throw UsageError("TrainConfig: learning_rate must be positive");
    if (!(lambda_curv >= 0.0)) throw UsageError("TrainConfig: lambda_curv must be >= 0");
    if (patience < 1) throw UsageError("TrainConfig: patience must be >= 1");
    model(2).validate();
    metric().validate();
  }

  [[nodiscard]] CurvGnnConfig model(std::size_t classes) const {
    CurvGnnConfig c;
    c.depth = depth;
    c.hidden_dim = hidden_dim;
    c.class_count = classes;
    c.dropout_rate = dropout;
    c.normalize_weights = normalize_weights;
    return c;
  }
  [[nodiscard]] LatentMetricConfig metric() const { return {floor_epsilon, signed_numerator}; }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

struct ClassificationMetrics {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
};

/// Accuracy and unweighted mean per-class F1 over the masked nodes. Classes
/// with no support and no predictions in the split score F1 = 0.
inline ClassificationMetrics classification_metrics(const std::vector<int>& predicted, const std::vector<int>& labels,
                                                    const std::vector<bool>& mask, std::size_t classes) {
  if (predicted.size() != labels.size() || mask.size() != labels.size()) {
    throw UsageError("classification_metrics: length mismatch");
  }
  std::vector<double> tp(classes, 0.0), fp(classes, 0.0), fn(classes, 0.0);
  std::size_t total = 0, correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!mask[i]) continue;
    const auto y = static_cast<std::size_t>(labels[i]);
    const auto p = static_cast<std::size_t>(predicted[i]);
    if (y >= classes || p >= classes) throw UsageError("classification_metrics: class index out of range");
    ++total;
    if (y == p) {
      ++correct;
      tp[y] += 1;
    } else {
      fp[p] += 1;
      fn[y] += 1;
    }
  }
  if (total == 0) throw UsageError("classification_metrics: empty split");
  double f1_sum = 0.0;
  for (std::size_t c = 0; c < classes; ++c) {
    const double denom = 2 * tp[c] + fp[c] + fn[c];
    f1_sum += denom > 0 ? 2 * tp[c] / denom : 0.0;
  }
  return {static_cast<double>(correct) / static_cast<double>(total), f1_sum / static_cast<double>(classes)};
}

inline std::vector<int> argmax_rows(const Matrix& logits) {
  std::vector<int> out(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto r = logits.row(i);
    out[i] = static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
  }
  return out;
}

/// One row per outer epoch.
struct EpochRecord {
  std::size_t epoch = 0;
  double prediction = 0.0;
  double compression = 0.0;
  double structure = 0.0;
  double ibcurv = 0.0;
  double total = 0.0;
  double accuracy_val = 0.0;
  double macro_f1_val = 0.0;
  double accuracy_test = 0.0;
  double macro_f1_test = 0.0;
  std::size_t refined_edges = 0;

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

/// One row per inner gradient step.
struct InnerRecord {
  std::size_t epoch = 0;
  int phase = 1;
  std::size_t step = 0;
  double loss = 0.0;

  friend bool operator==(const InnerRecord&, const InnerRecord&) = default;
};

struct MetricsLog {
  std::vector<EpochRecord> epochs;
  std::vector<InnerRecord> inner;
  // Wall time per outer epoch; kept apart from the deterministic records.
  std::vector<double> wall_seconds;

  void append(const EpochRecord& r, double seconds) {
    if (!epochs.empty() && r.epoch <= epochs.back().epoch) {
      throw UsageError("MetricsLog: epochs must be strictly increasing");
    }
    epochs.push_back(r);
    wall_seconds.push_back(seconds);
  }

  friend bool operator==(const MetricsLog&, const MetricsLog&) = default;
};

// ---------------------------------------------------------------------------
// Training state
// ---------------------------------------------------------------------------

struct TrainState {
  CurvGnnParams params;
  Adam opt_repr;
  Adam opt_struct;
  Adam opt_outer;
  CandidateSet candidates;
  Matrix kappa;  // surrogate curvature per candidate, held fixed during phase 1
  Matrix pi;     // edge probabilities per candidate from the last phase 2
  Matrix soft;   // last relaxed sample per candidate
  Graph refined;
  std::size_t epoch = 0;  // completed outer epochs
  double last_structure = 0.0;
  double best_val = -1.0;
  std::size_t best_epoch = 0;
  double test_at_best = 0.0;
  double f1_at_best = 0.0;
  std::size_t since_best = 0;
  bool stopped = false;
  MetricsLog log;

  friend bool operator==(const TrainState&, const TrainState&) = default;
};

namespace detail {

inline constexpr std::uint64_t kPhase1Tag = 0x7031;
inline constexpr std::uint64_t kPhase2Tag = 0x7032;
inline constexpr std::uint64_t kOuterTag = 0x6f75;

inline void check_compatible(const TrainConfig& cfg, const DatasetBundle& data) {
  cfg.validate();
  data.validate();
  if (cfg.dense_candidates && data.graph.node_count() > kDenseCandidateLimit) {
    throw UsageError("dense candidate mode is limited to " + std::to_string(kDenseCandidateLimit) + " nodes");
  }
}

inline std::size_t class_count(const DatasetBundle& data) {
  return static_cast<std::size_t>(data.labels.class_count());
}

// Curvature values for the edges of g, looked up among the candidates.
inline Matrix kappa_on(const TrainState& s, const Graph& g) {
  Matrix k(g.edge_count(), 1);
  for (std::size_t e = 0; e < g.edge_count(); ++e) {
    const auto idx = s.candidates.index_of(g.edges()[e]);
    if (!idx) throw UsageError("refined structure contains a non-candidate edge");
    k[e] = s.kappa[*idx];
  }
  return k;
}

inline Matrix refined_indicator(const TrainState& s) {
  Matrix a(s.candidates.size(), 1);
  for (const auto& e : s.refined.edges()) a[*s.candidates.index_of(e)] = 1.0;
  return a;
}

inline EncoderOutput encode(Tape& t, TrainState& s, const TrainConfig& cfg, const DatasetBundle& data, Mode mode,
                            const KeyedStream& noise = KeyedStream(0)) {
  const MessageGraph mg(s.refined);
  return curv_gnn_forward(t.constant(data.features.values), t.constant(kappa_on(s, s.refined)), mg,
                          cfg.model(s.params.out_w.value.cols()), s.params, mode, noise);
}

// kappa_IB over every candidate pair, measured on the refined structure.
inline IBCurvatureMap candidate_curvature(Var z, TrainState& s, const TrainConfig& cfg) {
  const auto mass = mass_matrix(s.refined, cfg.alpha);
  return ib_curvature(mass, z, s.params.head, cfg.metric(), s.candidates.edges);
}

inline void require_finite(Var loss, const std::string& where) {
  if (!std::isfinite(loss.scalar())) throw NumericError("non-finite loss in " + where);
}

}  // namespace detail

/// Deterministic posterior mean on the current refined structure.
inline Matrix current_embedding(TrainState& s, const TrainConfig& cfg, const DatasetBundle& data) {
  Tape t;
  return detail::encode(t, s, cfg, data, Mode::Eval).mu.value();
}

inline TrainState initialize(const TrainConfig& cfg, const DatasetBundle& data) {
  detail::check_compatible(cfg, data);
  TrainState s;
  s.params = CurvGnnParams(data.features.dim(), cfg.model(detail::class_count(data)), cfg.seed, cfg.head_gain);
  s.opt_repr = Adam(cfg.learning_rate);
  s.opt_struct = Adam(cfg.learning_rate);
  s.opt_outer = Adam(cfg.learning_rate);
  s.candidates = cfg.dense_candidates ? dense_candidates(data.graph)
                                      : two_hop_candidates(data.graph, cfg.candidate_k, cfg.seed);
  s.refined = data.graph;
  s.kappa = Matrix(s.candidates.size(), 1, 1.0);  // any constant gives uniform weights
  s.pi = Matrix(s.candidates.size(), 1, 0.5);
  s.soft = s.candidates.original_column();
  Tape t;
  const auto out = detail::encode(t, s, cfg, data, Mode::Eval);
  s.kappa = detail::candidate_curvature(out.mu, s, cfg).kappa.value();
  return s;
}

/// E1 gradient steps on the VIB loss with curvature held fixed.
inline void phase1_representation(TrainState& s, const TrainConfig& cfg, const DatasetBundle& data) {
  const auto& mask = data.labels.train_mask;
  const KeyedStream root = KeyedStream(cfg.seed).fork(detail::kPhase1Tag).fork(s.epoch);
  auto params = s.params.encoder();
  for (std::size_t step = 0; step < cfg.inner_repr_epochs; ++step) {
    Tape t;
    const auto out = detail::encode(t, s, cfg, data, Mode::Train, root.fork(step));
    const auto parts = vib_loss(prediction_loss(out.logits, data.labels.labels, mask),
                                compression_loss({out.mu, out.log_var}, mask), cfg.beta);
    detail::require_finite(parts.total, "phase 1, epoch " + std::to_string(s.epoch + 1));
    t.backward(parts.total);
    s.opt_repr.step(params);
    s.log.inner.push_back({s.epoch + 1, 1, step + 1, parts.total.scalar()});
  }
}

struct RefinementStepResult {
  double structure = 0.0;
  double ibcurv = 0.0;
  Matrix pi;
  Matrix soft;
  Graph hard;
};

/// One structure step: flow weights, relaxed sample, hardening and a gradient
/// step on the head. `z` is held constant.
inline RefinementStepResult refinement_step(TrainState& s, const TrainConfig& cfg, const Matrix& z,
                                            const std::vector<bool>& protect, const KeyedStream& noise) {
  Tape t;
  const auto kappa = detail::candidate_curvature(t.constant(z), s, cfg);
  Var flow = ricci_flow_step(kappa);  // logit of pi, since pi = sigmoid(K)
  Var soft = concrete_sample_logits(flow, cfg.tau, noise);
  Var pi = edge_probabilities(flow);
  RefinementStepResult r;
  r.hard = harden(soft.value(), s.candidates, pi.value(), protect);
  Matrix hard(s.candidates.size(), 1);
  for (const auto& e : r.hard.edges()) hard[*s.candidates.index_of(e)] = 1.0;
  Var structure = structure_likelihood_logits(flow, s.candidates);
  Var ibcurv = ibcurv_objective(kappa, ad::straight_through(soft, std::move(hard)));
  Var loss = ad::add(structure, ad::scale(ibcurv, cfg.lambda_curv));
  detail::require_finite(loss, "phase 2, epoch " + std::to_string(s.epoch + 1));
  t.backward(loss);
  s.opt_struct.step(s.params.curvature_head());
  r.structure = structure.scalar();
  r.ibcurv = ibcurv.scalar();
  r.pi = pi.value();
  r.soft = soft.value();
  return r;
}

/// E2 structure steps; updates the refined structure and the head.
inline void phase2_refinement(TrainState& s, const TrainConfig& cfg, const DatasetBundle& data) {
  const Matrix z = current_embedding(s, cfg, data);
  const KeyedStream root = KeyedStream(cfg.seed).fork(detail::kPhase2Tag).fork(s.epoch);
  RefinementStepResult last;
  for (std::size_t step = 0; step < cfg.inner_struct_epochs; ++step) {
    last = refinement_step(s, cfg, z, data.labels.train_mask, root.fork(step));
    s.log.inner.push_back({s.epoch + 1, 2, step + 1, last.structure + cfg.lambda_curv * last.ibcurv});
  }
  s.refined = std::move(last.hard);
  s.pi = std::move(last.pi);
  s.soft = std::move(last.soft);
  s.last_structure = last.structure;
}

inline ClassificationMetrics evaluate(TrainState& s, const TrainConfig& cfg, const DatasetBundle& data, Split split) {
  Tape t;
  const auto out = detail::encode(t, s, cfg, data, Mode::Eval);
  return classification_metrics(argmax_rows(out.logits.value()), data.labels.labels, data.labels.mask(split),
                                 detail::class_count(data));
}

/// Joint step on vib_loss + lambda_curv * IBCurv over the refined edges, then
/// curvature recomputed on the refined structure and one metrics row logged.
inline void outer_step(TrainState& s, const TrainConfig& cfg, const DatasetBundle& data, double seconds = 0.0) {
  const auto& mask = data.labels.train_mask;
  EpochRecord rec;
  rec.epoch = s.epoch + 1;
  {
    Tape t;
    const auto out = detail::encode(t, s, cfg, data, Mode::Train, KeyedStream(cfg.seed).fork(detail::kOuterTag).fork(s.epoch));
    const auto parts = vib_loss(prediction_loss(out.logits, data.labels.labels, mask),
                                compression_loss({out.mu, out.log_var}, mask), cfg.beta);
    const auto kappa = detail::candidate_curvature(out.mu, s, cfg);
    Var ibcurv = ibcurv_objective(kappa, t.constant(detail::refined_indicator(s)));
    Var total = ad::add(parts.total, ad::scale(ibcurv, cfg.lambda_curv));
    detail::require_finite(total, "outer step, epoch " + std::to_string(rec.epoch));
    t.backward(total);
    s.opt_outer.step(s.params.all());
    rec.prediction = parts.prediction.scalar();
    rec.compression = parts.compression.scalar();
    rec.ibcurv = ibcurv.scalar();
    rec.total = total.scalar();
  }
  {
    Tape t;
    const auto out = detail::encode(t, s, cfg, data, Mode::Eval);
    s.kappa = detail::candidate_curvature(out.mu, s, cfg).kappa.value();
  }
  rec.structure = s.last_structure;
  rec.refined_edges = s.refined.edge_count();
  const auto val = evaluate(s, cfg, data, Split::Val);
  const auto test = evaluate(s, cfg, data, Split::Test);
  rec.accuracy_val = val.accuracy;
  rec.macro_f1_val = val.macro_f1;
  rec.accuracy_test = test.accuracy;
  rec.macro_f1_test = test.macro_f1;
  s.log.append(rec, seconds);
  s.epoch = rec.epoch;
  if (val.accuracy > s.best_val) {
    s.best_val = val.accuracy;
    s.best_epoch = rec.epoch;
    s.test_at_best = test.accuracy;
    s.f1_at_best = test.macro_f1;
    s.since_best = 0;
  } else if (++s.since_best >= cfg.patience) {
    s.stopped = true;
  }
}

using EpochObserver = std::function<void(TrainState&)>;

/// One full outer epoch (phase 1, phase 2, outer step).
inline void train_epoch(TrainState& s, const TrainConfig& cfg, const DatasetBundle& data) {
  const auto start = std::chrono::steady_clock::now();
  phase1_representation(s, cfg, data);
  phase2_refinement(s, cfg, data);
  const std::chrono::duration<double> spent = std::chrono::steady_clock::now() - start;
  outer_step(s, cfg, data, spent.count());
}

/// Runs outer epochs until E is reached or early stopping fires. `max_epochs`
/// bounds this call only (used to interrupt a run for checkpointing).
inline void train(TrainState& s, const TrainConfig& cfg, const DatasetBundle& data, const EpochObserver& observe = {},
                  std::optional<std::size_t> max_epochs = std::nullopt) {
  std::size_t done = 0;
  while (s.epoch < cfg.outer_epochs && !s.stopped && (!max_epochs || done < *max_epochs)) {
    train_epoch(s, cfg, data);
    ++done;
    if (observe) observe(s);
  }
}

// ---------------------------------------------------------------------------
// Runs and replicates
// ---------------------------------------------------------------------------

enum class Method { CurvGib, Gcn };

inline const char* method_name(Method m) { return m == Method::CurvGib ? "curvgib" : "gcn"; }

struct RunResult {
  std::uint64_t seed = 0;
  double val_accuracy = 0.0;   // best validation accuracy
  double test_accuracy = 0.0;  // test accuracy at the best validation epoch
  double test_macro_f1 = 0.0;
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
  double final_compression = 0.0;
  std::vector<EpochRecord> epochs;
};

inline RunResult run_result(const TrainState& s, std::uint64_t seed) {
  RunResult r;
  r.seed = seed;
  r.val_accuracy = s.best_val;
  r.test_accuracy = s.test_at_best;
  r.test_macro_f1 = s.f1_at_best;
  r.best_epoch = s.best_epoch;
  r.epochs_run = s.epoch;
  r.final_compression = s.log.epochs.empty() ? 0.0 : s.log.epochs.back().compression;
  r.epochs = s.log.epochs;
  return r;
}

inline RunResult train_curvgib(const TrainConfig& cfg, const DatasetBundle& data, const EpochObserver& observe = {}) {
  auto s = initialize(cfg, data);
  train(s, cfg, data, observe);
  return run_result(s, cfg.seed);
}

/// Plain GCN control under the same budget: E * (E1 + 1) Adam steps on the
/// training cross-entropy, evaluated every E1 + 1 steps with the same
/// early-stopping rule.
inline RunResult train_gcn(const TrainConfig& cfg, const DatasetBundle& data) {
  detail::check_compatible(cfg, data);
  const auto classes = detail::class_count(data);
  const auto mcfg = cfg.model(classes);
  GcnParams p(data.features.dim(), mcfg, cfg.seed);
  Adam opt(cfg.learning_rate);
  const auto params = p.all();
  const auto& mask = data.labels.train_mask;
  const KeyedStream root = KeyedStream(cfg.seed).fork(0x67636e);
  RunResult r;
  r.seed = cfg.seed;
  r.val_accuracy = -1.0;
  std::size_t since_best = 0;
  auto evaluate_split = [&](Split split) {
    Tape t;
    const auto out = gcn_forward(t.constant(data.features.values), data.graph, mcfg, p, Mode::Eval);
    return classification_metrics(argmax_rows(out.logits.value()), data.labels.labels, data.labels.mask(split),
                                  classes);
  };
  for (std::size_t epoch = 0; epoch < cfg.outer_epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch + 1;
    for (std::size_t step = 0; step <= cfg.inner_repr_epochs; ++step) {
      Tape t;
      const auto out = gcn_forward(t.constant(data.features.values), data.graph, mcfg, p, Mode::Train,
                                   root.fork(epoch).fork(step));
      Var loss = prediction_loss(out.logits, data.labels.labels, mask);
      detail::require_finite(loss, "gcn epoch " + std::to_string(epoch + 1));
      t.backward(loss);
      opt.step(params);
      rec.prediction = rec.total = loss.scalar();
    }
    const auto val = evaluate_split(Split::Val);
    const auto test = evaluate_split(Split::Test);
    rec.accuracy_val = val.accuracy;
    rec.macro_f1_val = val.macro_f1;
    rec.accuracy_test = test.accuracy;
    rec.macro_f1_test = test.macro_f1;
    rec.refined_edges = data.graph.edge_count();
    r.epochs.push_back(rec);
    r.epochs_run = epoch + 1;
    if (val.accuracy > r.val_accuracy) {
      r.val_accuracy = val.accuracy;
      r.test_accuracy = test.accuracy;
      r.test_macro_f1 = test.macro_f1;
      r.best_epoch = epoch + 1;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  return r;
}

inline RunResult run_method(Method m, const TrainConfig& cfg, const DatasetBundle& data) {
  return m == Method::CurvGib ? train_curvgib(cfg, data) : train_gcn(cfg, data);
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; 0 for a single value
};

inline MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd out;
  if (xs.empty()) return out;
  for (double x : xs) out.mean += x;
  out.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - out.mean) * (x - out.mean);
    out.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return out;
}

struct SeedFailure {
  std::uint64_t seed = 0;
  std::string message;
};

struct ExperimentSummary {
  std::vector<RunResult> runs;  // successful runs, in seed-list order
  std::vector<SeedFailure> failures;
  MeanStd test_accuracy;
  MeanStd test_macro_f1;
  MeanStd val_accuracy;
  MeanStd compression;
};

inline ExperimentSummary summarize(std::vector<RunResult> runs, std::vector<SeedFailure> failures) {
  ExperimentSummary s;
  std::vector<double> acc, f1, val, comp;
  for (const auto& r : runs) {
    acc.push_back(r.test_accuracy);
    f1.push_back(r.test_macro_f1);
    val.push_back(r.val_accuracy);
    comp.push_back(r.final_compression);
  }
  s.runs = std::move(runs);
  s.failures = std::move(failures);
  s.test_accuracy = mean_std(acc);
  s.test_macro_f1 = mean_std(f1);
  s.val_accuracy = mean_std(val);
  s.compression = mean_std(comp);
  return s;
}

/// Independent runs per seed on `data` (fixed splits, re-seeded training).
/// A failing seed is recorded and the others continue.
inline ExperimentSummary run_experiment(const TrainConfig& cfg, const DatasetBundle& data,
                                        const std::vector<std::uint64_t>& seeds, Method method = Method::CurvGib,
                                        std::size_t jobs = 1) {
  if (seeds.empty()) throw UsageError("run_experiment: at least one seed required");
  std::vector<std::optional<RunResult>> results(seeds.size());
  std::vector<std::string> errors(seeds.size());
  parallel_for(seeds.size(), jobs, [&](std::size_t k) {
    TrainConfig c = cfg;
    c.seed = seeds[k];
    try {
      results[k] = run_method(method, c, data);
    } catch (const std::exception& e) {
      errors[k] = e.what();
    }
  });
  std::vector<RunResult> ok;
  std::vector<SeedFailure> failed;
  for (std::size_t k = 0; k < seeds.size(); ++k) {
    if (results[k]) {
      ok.push_back(std::move(*results[k]));
    } else {
      failed.push_back({seeds[k], errors[k]});
    }
  }
  return summarize(std::move(ok), std::move(failed));
}

}  // namespace curvgib
