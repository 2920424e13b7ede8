#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "curvgib/curv_gnn.hpp"
#include "curvgib/ib_curvature.hpp"
#include "curvgib/refinement.hpp"
#include "curvgib/vib.hpp"

namespace curvgib {

/// Finite-difference check of one differentiable target on a random instance.
/// `max_rel_error` covers every parameter except the head bias. The surrogate
/// curvature does not depend on that bias at all, so its analytic gradient is
/// zero and a relative comparison would only measure finite-difference noise;
/// `bias_gradient` reports its absolute value instead.
struct GradCheckResult {
  std::string target;
  std::uint64_t seed = 0;
  double max_rel_error = 0.0;
  double bias_gradient = 0.0;
};

inline const std::vector<std::string>& gradcheck_targets() {
  static const std::vector<std::string> t{"ib_curvature", "ibcurv_objective", "curvgnn_vib", "concrete_structure"};
  return t;
}

namespace diag_detail {

// Connected: a random spanning tree plus independent extra edges. An
// isolated node would have an exactly zero gradient, where the relative
// error only measures finite-difference noise.
inline Graph random_graph(std::size_t n, double p, std::uint64_t seed) {
  SeqRng rng(KeyedStream(seed).fork(0x67));
  std::vector<std::pair<NodeId, NodeId>> pairs;
  for (NodeId i = 1; i < n; ++i) pairs.emplace_back(static_cast<NodeId>(rng.below(i)), i);
  for (NodeId i = 0; i < n; ++i) {
    for (NodeId j = i + 1; j < n; ++j) {
      if (rng.uniform() < p) pairs.emplace_back(i, j);
    }
  }
  return build_graph(pairs, n);
}

inline Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  SeqRng rng(KeyedStream(seed).fork(0x6d));
  Matrix m(r, c);
  for (auto& v : m.data()) v = 2.0 * rng.uniform() - 1.0;
  return m;
}

inline double gradient_of(const std::function<Var(Tape&)>& build, Parameter& p) {
  Tape t;
  Var loss = build(t);
  t.param(p);
  t.backward(loss);
  double worst = 0.0;
  for (double g : p.grad.data()) worst = std::max(worst, std::abs(g));
  return worst;
}

}  // namespace diag_detail

inline GradCheckResult run_gradcheck(const std::string& target, std::uint64_t seed, std::size_t nodes = 10,
                                     double step = 1e-5) {
  using namespace diag_detail;
  if (nodes < 3) throw UsageError("gradcheck: need at least 3 nodes");
  const auto g = random_graph(nodes, 0.2, seed);
  const auto mass = mass_matrix(g, 0.5);
  GradCheckResult r{target, seed, 0.0, 0.0};
  const std::size_t h = 3;
  Parameter z("z", random_matrix(nodes, h, seed + 1));
  Parameter w("w", random_matrix(h, 1, seed + 2));
  Parameter b("b", Matrix(1, 1, 0.3));

  if (target == "ib_curvature" || target == "ibcurv_objective" || target == "concrete_structure") {
    const auto cand = two_hop_candidates(g, 2, seed);
    std::function<Var(Tape&)> build;
    if (target == "ib_curvature") {
      build = [&](Tape& t) {
        return ad::sum_all(ib_curvature(mass, t.param(z), t.param(w), t.param(b), {}, g.edges()).kappa);
      };
    } else if (target == "ibcurv_objective") {
      build = [&](Tape& t) {
        return ibcurv_objective(ib_curvature(mass, t.param(z), t.param(w), t.param(b), {}, g.edges()));
      };
    } else {
      build = [&](Tape& t) {
        const auto k = ib_curvature(mass, t.param(z), t.param(w), t.param(b), {}, cand.edges);
        Var pi = edge_probabilities(ricci_flow_step(k));
        Var soft = concrete_sample(pi, 0.5, KeyedStream(seed));
        return ad::add(structure_likelihood(pi, cand), ad::mean_all(soft));
      };
    }
    r.max_rel_error = grad_check(build, {&z, &w}, step);
    r.bias_gradient = gradient_of(build, b);
    return r;
  }
  if (target == "curvgnn_vib") {
    CurvGnnConfig cfg;
    cfg.depth = 2;
    cfg.hidden_dim = 4;
    cfg.class_count = 2;
    cfg.dropout_rate = 0.5;
    CurvGnnParams p(3, cfg, seed, 0.5);
    // Zero biases put dead ReLU rows exactly on the kink of the next layer.
    SeqRng brng(KeyedStream(seed).fork(0x62));
    for (Parameter* q : p.all()) {
      if (q->value.rows() == 1 && q->value.cols() > 1) {
        for (auto& v : q->value.data()) v = 0.2 * (2.0 * brng.uniform() - 1.0);
      }
    }
    const MessageGraph mg(g);
    const auto x = random_matrix(nodes, 3, seed + 3);
    std::vector<int> labels(nodes);
    for (std::size_t i = 0; i < nodes; ++i) labels[i] = static_cast<int>(i % 2);
    const std::vector<bool> mask(nodes, true);
    auto build = [&](Tape& t) {
      Var xv = t.constant(x);
      const auto first = curv_gnn_forward(xv, t.constant(Matrix(g.edge_count(), 1, 1.0)), mg, cfg, p, Mode::Eval);
      const auto k = ib_curvature(mass, first.mu, p.head, {}, g.edges());
      const auto out = curv_gnn_forward(xv, k.kappa, mg, cfg, p, Mode::Train, KeyedStream(seed));
      return vib_loss(prediction_loss(out.logits, labels, mask), compression_loss({out.mu, out.log_var}, mask), 0.01)
          .total;
    };
    auto params = p.all();
    std::erase(params, &p.head.bias);
    r.max_rel_error = grad_check(build, params, step);
    r.bias_gradient = gradient_of(build, p.head.bias);
    return r;
  }
  throw UsageError("gradcheck: unknown target '" + target + "'");
}

}  // namespace curvgib
