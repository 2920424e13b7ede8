#pragma once

#include <vector>

#include "curvgib/autodiff.hpp"
#include "curvgib/graph.hpp"
#include "curvgib/rng.hpp"

namespace curvgib {

inline constexpr double kLogVarMin = -10.0;
inline constexpr double kLogVarMax = 10.0;

/// Diagonal Gaussian q(Z | X) per node.
struct GaussianPosterior {
  Var mu;       // N x H
  Var log_var;  // N x H, within [kLogVarMin, kLogVarMax]
};

/// Z = mu + exp(log_var / 2) * eps, eps ~ N(0, I) drawn from `noise`.
inline Var reparameterize(const GaussianPosterior& post, const KeyedStream& noise) {
  const auto rows = post.mu.rows(), cols = post.mu.cols();
  Matrix eps(rows, cols);
  for (std::size_t i = 0; i < eps.size(); ++i) eps[i] = noise.normal(i);
  Tape& t = *post.mu.tape();
  Var sigma = ad::exp(ad::scale(post.log_var, 0.5));
  return ad::add(post.mu, ad::multiply(sigma, t.constant(std::move(eps))));
}

namespace detail {

inline std::vector<std::size_t> masked_rows(const std::vector<bool>& mask, std::size_t n, const char* op) {
  if (mask.size() != n) throw UsageError(std::string(op) + ": mask length mismatch");
  auto idx = LabelSet::indices(mask);
  if (idx.empty()) throw UsageError(std::string(op) + ": mask selects no nodes");
  return idx;
}

}  // namespace detail

/// Mean cross-entropy of the masked nodes.
inline Var prediction_loss(Var logits, const std::vector<int>& labels, const std::vector<bool>& mask) {
  const auto idx = detail::masked_rows(mask, logits.rows(), "prediction_loss");
  std::vector<std::size_t> cls;
  cls.reserve(idx.size());
  for (auto i : idx) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= logits.cols()) {
      throw UsageError("prediction_loss: label out of range at node " + std::to_string(i));
    }
    cls.push_back(static_cast<std::size_t>(labels[i]));
  }
  Var lp = ad::log_softmax(ad::gather_rows(logits, idx));
  return ad::scale(ad::mean_all(ad::pick_columns(lp, std::move(cls))), -1.0);
}

/// Mean over masked nodes of KL(q || N(0, I)) = sum_h 0.5 (mu^2 + s^2 - 1 - log s^2).
inline Var compression_loss(const GaussianPosterior& post, const std::vector<bool>& mask) {
  const auto idx = detail::masked_rows(mask, post.mu.rows(), "compression_loss");
  Var mu = ad::gather_rows(post.mu, idx);
  Var lv = ad::gather_rows(post.log_var, idx);
  Var term = ad::subtract(ad::add(ad::square(mu), ad::exp(lv)), ad::add_constant(lv, 1.0));
  Var per_node = ad::row_sum(term);
  return ad::scale(ad::mean_all(per_node), 0.5);
}

struct VibLossParts {
  Var prediction;
  Var compression;
  double beta = 0.0;
  Var total;
};

inline VibLossParts vib_loss(Var prediction, Var compression, double beta) {
  if (!(beta >= 0.0)) throw UsageError("vib_loss: beta must be >= 0");
  VibLossParts p{prediction, compression, beta, {}};
  p.total = ad::add(prediction, ad::scale(compression, beta));
  return p;
}

}  // namespace curvgib
