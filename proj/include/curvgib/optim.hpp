#pragma once

#include <cmath>
#include <vector>

#include "curvgib/autodiff.hpp"

namespace curvgib {

/// Adaptive moment estimation. Holds moments but no parameter pointers, so
/// a state owning both stays copyable; `step` takes the parameter list in a
/// fixed order on every call.
struct Adam {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t steps = 0;
  std::vector<Matrix> m;
  std::vector<Matrix> v;

  Adam() = default;
  explicit Adam(double lr) : learning_rate(lr) {
    if (!(lr > 0.0)) throw UsageError("Adam: learning rate must be positive");
  }

  void step(const std::vector<Parameter*>& params) {
    if (m.empty()) {
      for (const Parameter* p : params) {
        m.emplace_back(p->value.rows(), p->value.cols());
        v.emplace_back(p->value.rows(), p->value.cols());
      }
    }
    if (m.size() != params.size()) throw UsageError("Adam: parameter list changed between steps");
    ++steps;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(steps));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(steps));
    for (std::size_t k = 0; k < params.size(); ++k) {
      Parameter& p = *params[k];
      if (!p.grad.same_shape(p.value) || !m[k].same_shape(p.value)) {
        throw UsageError("Adam: shape mismatch for " + p.name);
      }
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double g = p.grad[i];
        m[k][i] = beta1 * m[k][i] + (1.0 - beta1) * g;
        v[k][i] = beta2 * v[k][i] + (1.0 - beta2) * g * g;
        p.value[i] -= learning_rate * (m[k][i] / c1) / (std::sqrt(v[k][i] / c2) + epsilon);
      }
    }
  }

  friend bool operator==(const Adam&, const Adam&) = default;
};

}  // namespace curvgib
