#include <gtest/gtest.h>

#include <algorithm>

#include "curvgib/trainer.hpp"

using namespace curvgib;

namespace {

DatasetBundle two_triangles(std::uint64_t seed) {
  return sbm_dataset({3, 3}, 1.0, 0.0, 4, 0.1, seed, SbmOptions{0.34, 0.34});
}

DatasetBundle small_sbm(std::size_t n, std::uint64_t seed) {
  return sbm_dataset({n / 2, n - n / 2}, 0.3, 0.05, 8, 0.5, seed);
}

TrainConfig small_config(std::uint64_t seed = 0) {
  TrainConfig cfg;
  cfg.hidden_dim = 16;
  cfg.outer_epochs = 6;
  cfg.inner_repr_epochs = 3;
  cfg.inner_struct_epochs = 3;
  cfg.seed = seed;
  return cfg;
}

double eval_vib_loss(TrainState& s, const TrainConfig& cfg, const DatasetBundle& d) {
  Tape t;
  const auto out = detail::encode(t, s, cfg, d, Mode::Eval);
  return vib_loss(prediction_loss(out.logits, d.labels.labels, d.labels.train_mask),
                  compression_loss({out.mu, out.log_var}, d.labels.train_mask), cfg.beta)
      .total.scalar();
}

// Independent macro-F1 through an explicit confusion matrix.
double oracle_macro_f1(const std::vector<int>& pred, const std::vector<int>& y, std::size_t classes) {
  std::vector<std::vector<double>> cm(classes, std::vector<double>(classes, 0.0));
  for (std::size_t i = 0; i < y.size(); ++i) cm[static_cast<std::size_t>(y[i])][static_cast<std::size_t>(pred[i])] += 1;
  double sum = 0.0;
  for (std::size_t c = 0; c < classes; ++c) {
    double row = 0.0, col = 0.0;
    for (std::size_t k = 0; k < classes; ++k) {
      row += cm[c][k];
      col += cm[k][c];
    }
    const double precision = col > 0 ? cm[c][c] / col : 0.0;
    const double recall = row > 0 ? cm[c][c] / row : 0.0;
    sum += precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
  }
  return sum / double(classes);
}

}  // namespace

TEST(TrainConfig, Validation) {
  TrainConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.inner_struct_epochs = 0;
  EXPECT_THROW(cfg.validate(), UsageError);
  cfg = TrainConfig{};
  cfg.beta = -1;
  EXPECT_THROW(cfg.validate(), UsageError);
  cfg = TrainConfig{};
  cfg.learning_rate = 0;
  EXPECT_THROW(cfg.validate(), UsageError);
  cfg = TrainConfig{};
  cfg.dense_candidates = true;
  EXPECT_THROW(initialize(cfg, small_sbm(kDenseCandidateLimit + 2, 0)), UsageError);
}

TEST(Initialize, DeterministicAndCoversOriginalEdges) {
  const auto d = small_sbm(40, 1);
  const auto cfg = small_config();
  auto a = initialize(cfg, d);
  auto b = initialize(cfg, d);
  const auto pa = a.params.all(), pb = b.params.all();
  for (std::size_t k = 0; k < pa.size(); ++k) EXPECT_EQ(pa[k]->value, pb[k]->value);
  EXPECT_EQ(a.kappa, b.kappa);
  EXPECT_EQ(a.refined, d.graph);
  ASSERT_EQ(a.kappa.size(), a.candidates.size());
  for (const auto& e : d.graph.edges()) EXPECT_TRUE(a.candidates.index_of(e).has_value());
  // A near-zero head puts the initial surrogate curvature close to 1.
  for (double k : a.kappa.data()) EXPECT_NEAR(k, 1.0, 1e-2);
}

TEST(Phase1, StepCountAndFixedCurvature) {
  const auto d = small_sbm(30, 2);
  const auto cfg = small_config();
  auto s = initialize(cfg, d);
  const Matrix kappa = s.kappa;
  phase1_representation(s, cfg, d);
  EXPECT_EQ(s.log.inner.size(), cfg.inner_repr_epochs);
  EXPECT_EQ(s.kappa, kappa);
  const auto head_before = s.params.head.weight.value;
  phase1_representation(s, cfg, d);
  EXPECT_EQ(s.log.inner.size(), 2 * cfg.inner_repr_epochs);
  EXPECT_EQ(s.params.head.weight.value, head_before);
}

TEST(Phase1, LowersLossOnTwoTriangles) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto d = two_triangles(seed);
    auto cfg = small_config(seed);
    cfg.inner_repr_epochs = 20;
    cfg.learning_rate = 0.01;
    auto s = initialize(cfg, d);
    const double before = eval_vib_loss(s, cfg, d);
    phase1_representation(s, cfg, d);
    EXPECT_LT(eval_vib_loss(s, cfg, d), before) << "seed " << seed;
  }
}

TEST(Phase2, UnitCurvatureGivesHalfProbabilities) {
  const auto d = small_sbm(30, 3);
  const auto cfg = small_config();
  auto s = initialize(cfg, d);
  s.params.head.weight.value.fill(0.0);
  const Matrix z = current_embedding(s, cfg, d);
  const auto r = refinement_step(s, cfg, z, d.labels.train_mask, KeyedStream(1));
  for (double p : r.pi.data()) EXPECT_EQ(p, 0.5);
}

TEST(Phase2, RefinedStructureIsAValidCandidateSubgraph) {
  const auto d = small_sbm(40, 4);
  const auto cfg = small_config();
  auto s = initialize(cfg, d);
  for (int round = 0; round < 3; ++round) {
    phase2_refinement(s, cfg, d);
    EXPECT_EQ(build_graph(edge_pairs(s.refined), s.refined.node_count()), s.refined);
    for (const auto& e : s.refined.edges()) EXPECT_TRUE(s.candidates.index_of(e).has_value());
    for (auto i : LabelSet::indices(d.labels.train_mask)) EXPECT_GT(s.refined.degree(static_cast<NodeId>(i)), 0u);
  }
}

TEST(Phase2, StructureLossDecreases) {
  // Edges must outnumber non-edges among the candidates, otherwise pi >= 0.5
  // already puts the likelihood at its floor ln 2 before any update.
  std::vector<double> change;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto d = sbm_dataset({15, 15}, 0.8, 0.3, 8, 0.5, 10 + seed);
    auto cfg = small_config(seed);
    cfg.inner_struct_epochs = 5;
    auto s = initialize(cfg, d);
    const Matrix z = current_embedding(s, cfg, d);
    const auto structure_now = [&](std::size_t step) {
      TrainState probe = s;
      return refinement_step(probe, cfg, z, d.labels.train_mask, KeyedStream(seed).fork(step)).structure;
    };
    const double before = structure_now(0);
    for (std::size_t step = 0; step < cfg.inner_struct_epochs; ++step) {
      refinement_step(s, cfg, z, d.labels.train_mask, KeyedStream(seed).fork(step));
    }
    change.push_back(structure_now(cfg.inner_struct_epochs) - before);
  }
  std::nth_element(change.begin(), change.begin() + 2, change.end());
  EXPECT_LT(change[2], 0.0);
}

TEST(Harden, MatchingProbabilitiesReproduceTheGraph) {
  // When pi matches A on every candidate the hardened sample is A itself.
  const auto d = small_sbm(30, 5);
  const auto c = two_hop_candidates(d.graph, 3, 0);
  Matrix logits(c.size(), 1);
  for (std::size_t k = 0; k < c.size(); ++k) logits[k] = c.original[k] ? 40.0 : -40.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Tape t;
    const Var soft = concrete_sample_logits(t.constant(logits), 0.5, KeyedStream(seed));
    EXPECT_EQ(harden(soft.value(), c), d.graph);
  }
}

TEST(OuterStep, KeyingAndLogging) {
  const auto d = small_sbm(40, 6);
  const auto cfg = small_config();
  auto s = initialize(cfg, d);
  phase1_representation(s, cfg, d);
  phase2_refinement(s, cfg, d);
  outer_step(s, cfg, d);
  EXPECT_EQ(s.log.epochs.size(), 1u);
  EXPECT_EQ(s.log.epochs[0].epoch, 1u);
  EXPECT_EQ(s.kappa.size(), s.candidates.size());
  EXPECT_NO_THROW(detail::kappa_on(s, s.refined));
  EXPECT_EQ(s.log.epochs[0].refined_edges, s.refined.edge_count());
  train_epoch(s, cfg, d);
  EXPECT_EQ(s.log.epochs.size(), 2u);
  EXPECT_EQ(s.log.epochs[1].epoch, 2u);
  EXPECT_THROW(s.log.append(s.log.epochs[0], 0.0), UsageError);
}

TEST(Evaluate, ClassificationMetricExamples) {
  const std::vector<int> y{0, 1, 0, 1, 2, 2};
  const std::vector<bool> all(6, true);
  const auto perfect = classification_metrics(y, y, all, 3);
  EXPECT_EQ(perfect.accuracy, 1.0);
  EXPECT_EQ(perfect.macro_f1, 1.0);

  const std::vector<int> balanced{0, 1, 0, 1};
  const auto constant = classification_metrics({0, 0, 0, 0}, balanced, std::vector<bool>(4, true), 2);
  EXPECT_DOUBLE_EQ(constant.accuracy, 0.5);
  EXPECT_NEAR(constant.macro_f1, 1.0 / 3.0, 1e-15);
  EXPECT_THROW(classification_metrics(y, y, std::vector<bool>(6, false), 3), UsageError);
}

TEST(Evaluate, MatchesConfusionMatrixOracle) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    SeqRng rng(seed);
    const std::size_t n = 5 + rng.below(40), classes = 2 + rng.below(4);
    std::vector<int> y(n), p(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = static_cast<int>(rng.below(classes));
      p[i] = rng.uniform() < 0.5 ? y[i] : static_cast<int>(rng.below(classes));
    }
    const auto m = classification_metrics(p, y, std::vector<bool>(n, true), classes);
    EXPECT_NEAR(m.macro_f1, oracle_macro_f1(p, y, classes), 1e-12);
  }
}

TEST(Evaluate, ArgmaxAndSplitMetrics) {
  EXPECT_EQ(argmax_rows(Matrix(2, 3, {0.1, 0.7, 0.2, 0.9, 0.0, 0.9})), (std::vector<int>{1, 0}));
  const auto d = two_triangles(0);
  const auto cfg = small_config();
  auto s = initialize(cfg, d);
  Tape t;
  const auto pred = argmax_rows(detail::encode(t, s, cfg, d, Mode::Eval).logits.value());
  const auto direct = classification_metrics(pred, d.labels.labels, d.labels.test_mask, 2);
  const auto via = evaluate(s, cfg, d, Split::Test);
  EXPECT_EQ(via.accuracy, direct.accuracy);
  EXPECT_EQ(via.macro_f1, direct.macro_f1);
}

TEST(Run, DeterministicBitwise) {
  const auto d = small_sbm(40, 7);
  const auto cfg = small_config(3);
  const auto a = train_curvgib(cfg, d);
  const auto b = train_curvgib(cfg, d);
  EXPECT_EQ(a.epochs, b.epochs);
  EXPECT_EQ(a.test_accuracy, b.test_accuracy);
  const auto g1 = train_gcn(cfg, d);
  const auto g2 = train_gcn(cfg, d);
  EXPECT_EQ(g1.epochs, g2.epochs);
}

TEST(Run, InterruptedTrainingMatchesUninterrupted) {
  const auto d = small_sbm(40, 8);
  const auto cfg = small_config(5);
  auto full = initialize(cfg, d);
  train(full, cfg, d);
  auto part = initialize(cfg, d);
  train(part, cfg, d, {}, 2);
  EXPECT_EQ(part.epoch, 2u);
  TrainState copy = part;
  train(copy, cfg, d);
  EXPECT_EQ(copy.log.epochs, full.log.epochs);
}

TEST(Run, TwoTrianglesReachFullTrainAccuracy) {
  const auto d = two_triangles(1);
  TrainConfig cfg;
  cfg.seed = 1;
  cfg.patience = 50;
  auto s = initialize(cfg, d);
  double best = 0.0;
  train(s, cfg, d, [&](TrainState& st) { best = std::max(best, evaluate(st, cfg, d, Split::Train).accuracy); });
  EXPECT_EQ(best, 1.0);
}

TEST(Experiment, SummaryConventions) {
  const auto d = small_sbm(30, 9);
  const auto cfg = small_config();
  const auto one = run_experiment(cfg, d, {4});
  ASSERT_EQ(one.runs.size(), 1u);
  EXPECT_EQ(one.test_accuracy.std, 0.0);
  EXPECT_EQ(one.test_accuracy.mean, one.runs[0].test_accuracy);

  const auto rep = run_experiment(cfg, d, {4, 4, 5}, Method::CurvGib, 2);
  ASSERT_EQ(rep.runs.size(), 3u);
  EXPECT_EQ(rep.runs[0].epochs, rep.runs[1].epochs);
  EXPECT_EQ(rep.runs[0].epochs, one.runs[0].epochs);
  EXPECT_THROW(run_experiment(cfg, d, {}), UsageError);

  const auto ms = mean_std({1.0, 2.0, 3.0, 4.0});
  EXPECT_DOUBLE_EQ(ms.mean, 2.5);
  EXPECT_NEAR(ms.std, std::sqrt(5.0 / 3.0), 1e-15);
}

TEST(Experiment, FailingSeedIsReportedAndOthersContinue) {
  auto d = small_sbm(30, 9);
  auto cfg = small_config();
  cfg.learning_rate = 1e300;  // overflows on the first update
  const auto r = run_experiment(cfg, d, {1, 2});
  EXPECT_EQ(r.runs.size() + r.failures.size(), 2u);
  for (const auto& f : r.failures) EXPECT_FALSE(f.message.empty());
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Parameter p("p", Matrix(1, 2, {1.0, -2.0}));
  p.grad = Matrix(1, 2, {0.5, -3.0});
  Adam opt(0.1);
  opt.step({&p});
  // Bias correction cancels on the first step, leaving lr * g / (|g| + eps).
  EXPECT_NEAR(p.value[0], 1.0 - 0.1 * 0.5 / (0.5 + 1e-8), 1e-15);
  EXPECT_NEAR(p.value[1], -2.0 + 0.1 * 3.0 / (3.0 + 1e-8), 1e-15);
  EXPECT_THROW(Adam(0.0), UsageError);
}

TEST(Stability, OuterObjectiveSettles) {
  // Median pairwise slope of the total loss over the last 10 epochs of a full
  // 200-node run is not positive.
  const auto d = sbm_dataset({100, 100}, 0.2, 0.05, 16, 1.0, 0);
  TrainConfig cfg;
  cfg.patience = cfg.outer_epochs;
  auto s = initialize(cfg, d);
  train(s, cfg, d);
  ASSERT_EQ(s.log.epochs.size(), cfg.outer_epochs);
  std::vector<double> slopes;
  const auto n = s.log.epochs.size();
  for (std::size_t i = n - 10; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      slopes.push_back((s.log.epochs[j].total - s.log.epochs[i].total) / double(j - i));
    }
  }
  std::nth_element(slopes.begin(), slopes.begin() + slopes.size() / 2, slopes.end());
  EXPECT_LE(slopes[slopes.size() / 2], 0.0);
}
