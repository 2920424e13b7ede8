#pragma once

// Reverse-mode differentiation over dense double matrices.
//
// A Tape records every operation as a node holding its value and a closure
// that pushes the node's gradient into its inputs. Nodes are appended in
// evaluation order, so walking the tape backwards is a valid topological
// order. Values live in a std::deque and keep stable addresses.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <deque>
#include <functional>
#include <istream>
#include <limits>
#include <memory>
#include <ostream>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "curvgib/error.hpp"
#include "curvgib/matrix.hpp"

namespace curvgib {

/// Trainable tensor with an accumulated gradient of the same shape.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Parameter() = default;
  Parameter(std::string n, Matrix v)
      : name(std::move(n)), value(std::move(v)), grad(value.rows(), value.cols()) {}

  void zero_grad() { grad = Matrix(value.rows(), value.cols()); }

  // Gradients are scratch space and do not take part in equality.
  friend bool operator==(const Parameter& a, const Parameter& b) { return a.name == b.name && a.value == b.value; }
};

class Tape;

/// Handle to a node on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  [[nodiscard]] const Matrix& value() const;
  [[nodiscard]] std::size_t rows() const { return value().rows(); }
  [[nodiscard]] std::size_t cols() const { return value().cols(); }
  [[nodiscard]] double scalar() const;
  [[nodiscard]] std::size_t id() const noexcept { return id_; }
  [[nodiscard]] Tape* tape() const noexcept { return tape_; }
  [[nodiscard]] bool valid() const noexcept { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value) {
    check_finite(value, "constant");
    nodes_.push_back(Node{std::move(value), {}, false, nullptr, nullptr});
    return {this, nodes_.size() - 1};
  }

  // Leaf for a Parameter. Registering the same Parameter twice returns the
  // same node.
  Var param(Parameter& p) {
    if (auto it = param_ids_.find(&p); it != param_ids_.end()) return {this, it->second};
    check_finite(p.value, p.name.c_str());
    nodes_.push_back(Node{p.value, {}, true, nullptr, &p});
    param_ids_[&p] = nodes_.size() - 1;
    return {this, nodes_.size() - 1};
  }

  // Append a computed node. `op` names the primitive in error messages.
  Var record(Matrix value, std::initializer_list<Var> inputs, BackwardFn fn, const char* op) {
    check_finite(value, op);
    bool needs = false;
    for (const Var& in : inputs) {
      if (in.tape() != this) throw UsageError(std::string(op) + ": input from a different tape");
      needs = needs || nodes_[in.id()].requires_grad;
    }
    nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(fn) : nullptr, nullptr});
    return {this, nodes_.size() - 1};
  }

  [[nodiscard]] const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  [[nodiscard]] bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }

  // Gradient buffer of a node, allocated as zeros on first access.
  Matrix& grad(std::size_t id) {
    auto& n = nodes_[id];
    if (n.grad.size() != n.value.size() || !n.grad.same_shape(n.value)) {
      n.grad = Matrix(n.value.rows(), n.value.cols());
    }
    return n.grad;
  }
  [[nodiscard]] bool has_grad(std::size_t id) const { return nodes_[id].grad.size() > 0; }

  /// Populate Parameter::grad with d(loss)/d(parameter) for every parameter
  /// registered on this tape. Parameters the loss does not reach get zeros.
  void backward(Var loss) {
    if (loss.tape() != this) throw UsageError("backward: loss is not on this tape");
    const auto& lv = nodes_[loss.id()].value;
    if (lv.rows() != 1 || lv.cols() != 1) {
      throw UsageError("backward: loss must be 1x1, got " + lv.shape_str());
    }
    grad(loss.id())(0, 0) = 1.0;
    for (std::size_t k = loss.id() + 1; k-- > 0;) {
      auto& n = nodes_[k];
      if (!n.requires_grad || n.grad.size() == 0 || !n.backward) continue;
      n.backward(*this, k);
    }
    for (auto& n : nodes_) {
      if (n.param == nullptr) continue;
      n.param->grad = n.grad.size() > 0 ? n.grad : Matrix(n.value.rows(), n.value.cols());
    }
    for (const auto& n : nodes_) {
      if (n.param != nullptr && !n.param->grad.all_finite()) {
        throw NumericError("backward: non-finite gradient for parameter " + n.param->name);
      }
    }
  }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    BackwardFn backward;
    Parameter* param = nullptr;
  };

  static void check_finite(const Matrix& m, const char* op) {
    if (!m.all_finite()) throw NumericError(std::string(op) + ": produced a non-finite value");
  }

  std::deque<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_ids_;
};

inline const Matrix& Var::value() const { return tape_->value(id_); }

inline double Var::scalar() const {
  const auto& v = value();
  if (v.size() != 1) throw UsageError("Var::scalar on a " + v.shape_str() + " value");
  return v[0];
}

namespace ad {

namespace detail {

enum class Broadcast { Same, Scalar, Row, Col };

inline Broadcast broadcast_kind(const Matrix& a, const Matrix& b, const char* op) {
  if (a.same_shape(b)) return Broadcast::Same;
  if (b.rows() == 1 && b.cols() == 1) return Broadcast::Scalar;
  if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::Row;
  if (b.cols() == 1 && b.rows() == a.rows()) return Broadcast::Col;
  throw UsageError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

inline std::size_t bindex(Broadcast k, std::size_t r, std::size_t c, std::size_t cols) {
  switch (k) {
    case Broadcast::Same: return r * cols + c;
    case Broadcast::Scalar: return 0;
    case Broadcast::Row: return c;
    case Broadcast::Col: return r;
  }
  return 0;
}

// Elementwise binary op with right-hand broadcasting. `f` computes the value,
// `da`/`db` the local partials given (a, b, out).
template <typename F, typename DA, typename DB>
Var binary(Var a, Var b, const char* op, F f, DA da, DB db) {
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  const auto kind = broadcast_kind(av, bv, op);
  Matrix out(av.rows(), av.cols());
  const auto cols = av.cols();
  for (std::size_t r = 0; r < av.rows(); ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const auto i = r * cols + c;
      out[i] = f(av[i], bv[bindex(kind, r, c, cols)]);
    }
  }
  Tape& t = *a.tape();
  const auto ia = a.id();
  const auto ib = b.id();
  return t.record(
      std::move(out), {a, b},
      [ia, ib, kind, cols, da, db](Tape& tp, std::size_t self) {
        const Matrix& g = tp.grad(self);
        const Matrix& av = tp.value(ia);
        const Matrix& bv = tp.value(ib);
        const Matrix& ov = tp.value(self);
        const bool need_a = tp.requires_grad(ia);
        const bool need_b = tp.requires_grad(ib);
        Matrix* ga = need_a ? &tp.grad(ia) : nullptr;
        Matrix* gb = need_b ? &tp.grad(ib) : nullptr;
        for (std::size_t r = 0; r < av.rows(); ++r) {
          for (std::size_t c = 0; c < cols; ++c) {
            const auto i = r * cols + c;
            const auto j = bindex(kind, r, c, cols);
            if (ga) (*ga)[i] += g[i] * da(av[i], bv[j], ov[i]);
            if (gb) (*gb)[j] += g[i] * db(av[i], bv[j], ov[i]);
          }
        }
      },
      op);
}

// Elementwise unary op; `d` gives the local derivative from (x, out).
template <typename F, typename D>
Var unary(Var x, const char* op, F f, D d) {
  const Matrix& xv = x.value();
  Matrix out(xv.rows(), xv.cols());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  const auto ix = x.id();
  return x.tape()->record(
      std::move(out), {x},
      [ix, d](Tape& tp, std::size_t self) {
        const Matrix& g = tp.grad(self);
        const Matrix& xv = tp.value(ix);
        const Matrix& ov = tp.value(self);
        Matrix& gx = tp.grad(ix);
        for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += g[i] * d(xv[i], ov[i]);
      },
      op);
}

inline double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double stable_softplus(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

}  // namespace detail

inline Var add(Var a, Var b) {
  return detail::binary(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return 1.0; });
}

inline Var subtract(Var a, Var b) {
  return detail::binary(
      a, b, "subtract", [](double x, double y) { return x - y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return -1.0; });
}

inline Var multiply(Var a, Var b) {
  return detail::binary(
      a, b, "multiply", [](double x, double y) { return x * y; },
      [](double, double y, double) { return y; }, [](double x, double, double) { return x; });
}

inline Var divide(Var a, Var b) {
  for (double v : b.value().data()) {
    if (v == 0.0) throw NumericError("divide: division by zero");
  }
  return detail::binary(
      a, b, "divide", [](double x, double y) { return x / y; },
      [](double, double y, double) { return 1.0 / y; },
      [](double x, double y, double) { return -x / (y * y); });
}

inline Var scale(Var x, double s) {
  return detail::unary(
      x, "scale", [s](double v) { return s * v; }, [s](double, double) { return s; });
}

inline Var add_constant(Var x, double c) {
  return detail::unary(
      x, "add_constant", [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

// 1 - x
inline Var one_minus(Var x) {
  return detail::unary(
      x, "one_minus", [](double v) { return 1.0 - v; }, [](double, double) { return -1.0; });
}

inline Var relu(Var x) {
  return detail::unary(
      x, "relu", [](double v) { return v > 0 ? v : 0.0; },
      [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

// Numerically stable for |x| well beyond 700.
inline Var sigmoid(Var x) {
  return detail::unary(
      x, "sigmoid", detail::stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

inline Var softplus(Var x) {
  return detail::unary(
      x, "softplus", detail::stable_softplus,
      [](double v, double) { return detail::stable_sigmoid(v); });
}

inline Var exp(Var x) {
  return detail::unary(
      x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

inline Var log(Var x) {
  for (double v : x.value().data()) {
    if (!(v > 0.0)) throw NumericError("log: non-positive argument " + std::to_string(v));
  }
  return detail::unary(
      x, "log", [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

// Subgradient 0 at exactly 0.
inline Var absolute_value(Var x) {
  return detail::unary(
      x, "absolute_value", [](double v) { return std::abs(v); },
      [](double v, double) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
}

inline Var square(Var x) {
  return detail::unary(
      x, "square", [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

inline Var sqrt(Var x) {
  for (double v : x.value().data()) {
    if (!(v > 0.0)) throw NumericError("sqrt: non-positive argument " + std::to_string(v));
  }
  return detail::unary(
      x, "sqrt", [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}

// Gradient is zero where the value was clipped.
inline Var clamp(Var x, double lo, double hi) {
  return detail::unary(
      x, "clamp", [lo, hi](double v) { return std::min(hi, std::max(lo, v)); },
      [lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

inline Var matmul(Var a, Var b) {
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw UsageError("matmul: shape mismatch " + av.shape_str() + " * " + bv.shape_str());
  }
  const auto n = av.rows(), k = av.cols(), m = bv.cols();
  Matrix out(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    auto orow = out.row(i);
    for (std::size_t p = 0; p < k; ++p) {
      const double x = av(i, p);
      if (x == 0.0) continue;
      const auto brow = bv.row(p);
      for (std::size_t j = 0; j < m; ++j) orow[j] += x * brow[j];
    }
  }
  const auto ia = a.id(), ib = b.id();
  return a.tape()->record(
      std::move(out), {a, b},
      [ia, ib, n, k, m](Tape& tp, std::size_t self) {
        const Matrix& g = tp.grad(self);
        const Matrix& av = tp.value(ia);
        const Matrix& bv = tp.value(ib);
        if (tp.requires_grad(ia)) {
          Matrix& ga = tp.grad(ia);  // G B^T
          for (std::size_t i = 0; i < n; ++i) {
            const auto grow = g.row(i);
            for (std::size_t p = 0; p < k; ++p) {
              const auto brow = bv.row(p);
              double s = 0.0;
              for (std::size_t j = 0; j < m; ++j) s += grow[j] * brow[j];
              ga(i, p) += s;
            }
          }
        }
        if (tp.requires_grad(ib)) {
          Matrix& gb = tp.grad(ib);  // A^T G
          for (std::size_t i = 0; i < n; ++i) {
            const auto grow = g.row(i);
            for (std::size_t p = 0; p < k; ++p) {
              const double x = av(i, p);
              if (x == 0.0) continue;
              auto gbrow = gb.row(p);
              for (std::size_t j = 0; j < m; ++j) gbrow[j] += x * grow[j];
            }
          }
        }
      },
      "matmul");
}

// Constant sparse operator applied from the left: S x.
inline Var sparse_left(const SparseMatrix& s, Var x) {
  Matrix out = s.multiply(x.value());
  const auto ix = x.id();
  return x.tape()->record(
      std::move(out), {x},
      [ix, s](Tape& tp, std::size_t self) {
        Matrix gx = s.multiply_transposed(tp.grad(self));
        Matrix& acc = tp.grad(ix);
        for (std::size_t i = 0; i < gx.size(); ++i) acc[i] += gx[i];
      },
      "sparse_left");
}

// out[k] = x[index[k]]
inline Var gather_rows(Var x, std::vector<std::size_t> index) {
  const Matrix& xv = x.value();
  Matrix out(index.size(), xv.cols());
  for (std::size_t k = 0; k < index.size(); ++k) {
    if (index[k] >= xv.rows()) throw UsageError("gather_rows: index out of range");
    const auto src = xv.row(index[k]);
    std::copy(src.begin(), src.end(), out.row(k).begin());
  }
  const auto ix = x.id();
  return x.tape()->record(
      std::move(out), {x},
      [ix, index = std::move(index)](Tape& tp, std::size_t self) {
        const Matrix& g = tp.grad(self);
        Matrix& gx = tp.grad(ix);
        for (std::size_t k = 0; k < index.size(); ++k) {
          const auto grow = g.row(k);
          auto dst = gx.row(index[k]);
          for (std::size_t c = 0; c < grow.size(); ++c) dst[c] += grow[c];
        }
      },
      "gather_rows");
}

// out[index[k]] += x[k], out has `rows` rows.
inline Var scatter_add_rows(Var x, std::vector<std::size_t> index, std::size_t rows) {
  const Matrix& xv = x.value();
  if (index.size() != xv.rows()) throw UsageError("scatter_add_rows: index length mismatch");
  Matrix out(rows, xv.cols());
  for (std::size_t k = 0; k < index.size(); ++k) {
    if (index[k] >= rows) throw UsageError("scatter_add_rows: index out of range");
    const auto src = xv.row(k);
    auto dst = out.row(index[k]);
    for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
  }
  const auto ix = x.id();
  return x.tape()->record(
      std::move(out), {x},
      [ix, index = std::move(index)](Tape& tp, std::size_t self) {
        const Matrix& g = tp.grad(self);
        Matrix& gx = tp.grad(ix);
        for (std::size_t k = 0; k < index.size(); ++k) {
          const auto grow = g.row(index[k]);
          auto dst = gx.row(k);
          for (std::size_t c = 0; c < grow.size(); ++c) dst[c] += grow[c];
        }
      },
      "scatter_add_rows");
}

// out[k] = x[k, cols[k]], an (rows x 1) column.
inline Var pick_columns(Var x, std::vector<std::size_t> cols) {
  const Matrix& xv = x.value();
  if (cols.size() != xv.rows()) throw UsageError("pick_columns: one column per row required");
  Matrix out(xv.rows(), 1);
  for (std::size_t r = 0; r < cols.size(); ++r) {
    if (cols[r] >= xv.cols()) throw UsageError("pick_columns: column out of range");
    out[r] = xv(r, cols[r]);
  }
  const auto ix = x.id();
  return x.tape()->record(
      std::move(out), {x},
      [ix, cols = std::move(cols)](Tape& tp, std::size_t self) {
        const Matrix& g = tp.grad(self);
        Matrix& gx = tp.grad(ix);
        for (std::size_t r = 0; r < cols.size(); ++r) gx(r, cols[r]) += g[r];
      },
      "pick_columns");
}

inline Var row_sum(Var x) {
  const Matrix& xv = x.value();
  Matrix out(xv.rows(), 1);
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    double s = 0.0;
    for (double v : xv.row(r)) s += v;
    out[r] = s;
  }
  const auto ix = x.id();
  return x.tape()->record(
      std::move(out), {x},
      [ix](Tape& tp, std::size_t self) {
        const Matrix& g = tp.grad(self);
        Matrix& gx = tp.grad(ix);
        for (std::size_t r = 0; r < gx.rows(); ++r) {
          for (auto& v : gx.row(r)) v += g[r];
        }
      },
      "row_sum");
}

inline Var sum_all(Var x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  const auto ix = x.id();
  return x.tape()->record(
      Matrix::scalar(s), {x},
      [ix](Tape& tp, std::size_t self) {
        const double g = tp.grad(self)[0];
        for (auto& v : tp.grad(ix).data()) v += g;
      },
      "sum_all");
}

inline Var mean_all(Var x) {
  const auto n = x.value().size();
  if (n == 0) throw UsageError("mean_all: empty tensor");
  return scale(sum_all(x), 1.0 / static_cast<double>(n));
}

inline Var row_softmax(Var x) {
  const Matrix& xv = x.value();
  Matrix out(xv.rows(), xv.cols());
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    const auto in = xv.row(r);
    auto o = out.row(r);
    const double mx = *std::max_element(in.begin(), in.end());
    double z = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) z += (o[c] = std::exp(in[c] - mx));
    for (auto& v : o) v /= z;
  }
  const auto ix = x.id();
  return x.tape()->record(
      std::move(out), {x},
      [ix](Tape& tp, std::size_t self) {
        const Matrix& g = tp.grad(self);
        const Matrix& y = tp.value(self);
        Matrix& gx = tp.grad(ix);
        for (std::size_t r = 0; r < y.rows(); ++r) {
          double dot = 0.0;
          for (std::size_t c = 0; c < y.cols(); ++c) dot += g(r, c) * y(r, c);
          for (std::size_t c = 0; c < y.cols(); ++c) gx(r, c) += y(r, c) * (g(r, c) - dot);
        }
      },
      "row_softmax");
}

inline Var log_softmax(Var x) {
  const Matrix& xv = x.value();
  Matrix out(xv.rows(), xv.cols());
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    const auto in = xv.row(r);
    const double mx = *std::max_element(in.begin(), in.end());
    double z = 0.0;
    for (double v : in) z += std::exp(v - mx);
    const double lse = mx + std::log(z);
    auto o = out.row(r);
    for (std::size_t c = 0; c < in.size(); ++c) o[c] = in[c] - lse;
  }
  const auto ix = x.id();
  return x.tape()->record(
      std::move(out), {x},
      [ix](Tape& tp, std::size_t self) {
        const Matrix& g = tp.grad(self);
        const Matrix& y = tp.value(self);
        Matrix& gx = tp.grad(ix);
        for (std::size_t r = 0; r < y.rows(); ++r) {
          double gs = 0.0;
          for (std::size_t c = 0; c < y.cols(); ++c) gs += g(r, c);
          for (std::size_t c = 0; c < y.cols(); ++c) gx(r, c) += g(r, c) - std::exp(y(r, c)) * gs;
        }
      },
      "log_softmax");
}

/// Euclidean norm of each row, floored at `floor` (> 0). Gradient is zero on
/// rows where the floor is active.
inline Var row_norm(Var x, double floor) {
  if (!(floor > 0.0)) throw UsageError("row_norm: floor must be positive");
  const Matrix& xv = x.value();
  Matrix out(xv.rows(), 1);
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    double s = 0.0;
    for (double v : xv.row(r)) s += v * v;
    out[r] = std::max(std::sqrt(s), floor);
  }
  const auto ix = x.id();
  return x.tape()->record(
      std::move(out), {x},
      [ix, floor](Tape& tp, std::size_t self) {
        const Matrix& g = tp.grad(self);
        const Matrix& y = tp.value(self);
        const Matrix& xv = tp.value(ix);
        Matrix& gx = tp.grad(ix);
        for (std::size_t r = 0; r < xv.rows(); ++r) {
          double s = 0.0;
          for (double v : xv.row(r)) s += v * v;
          const double nrm = std::sqrt(s);
          if (!(nrm > floor)) continue;
          const double k = g[r] / y[r];
          auto gr = gx.row(r);
          const auto xr = xv.row(r);
          for (std::size_t c = 0; c < gr.size(); ++c) gr[c] += k * xr[c];
        }
      },
      "row_norm");
}

/// max(||x_u[k] - x_v[k]||, floor) per index pair, m x 1. Equivalent to
/// row_norm(gather(u) - gather(v)) without materializing the m x d difference.
inline Var pair_distance(Var x, std::vector<std::size_t> u, std::vector<std::size_t> v, double floor) {
  if (!(floor > 0.0)) throw UsageError("pair_distance: floor must be positive");
  if (u.size() != v.size()) throw UsageError("pair_distance: index length mismatch");
  const Matrix& xv = x.value();
  Matrix out(u.size(), 1);
  for (std::size_t k = 0; k < u.size(); ++k) {
    if (u[k] >= xv.rows() || v[k] >= xv.rows()) throw UsageError("pair_distance: index out of range");
    const auto a = xv.row(u[k]), b = xv.row(v[k]);
    double s = 0.0;
    for (std::size_t c = 0; c < a.size(); ++c) s += (a[c] - b[c]) * (a[c] - b[c]);
    out[k] = std::max(std::sqrt(s), floor);
  }
  const auto ix = x.id();
  return x.tape()->record(
      std::move(out), {x},
      [ix, floor, u = std::move(u), v = std::move(v)](Tape& tp, std::size_t self) {
        const Matrix& g = tp.grad(self);
        const Matrix& y = tp.value(self);
        const Matrix& xv = tp.value(ix);
        Matrix& gx = tp.grad(ix);
        for (std::size_t k = 0; k < u.size(); ++k) {
          if (!(y[k] > floor)) continue;
          const double w = g[k] / y[k];
          const auto a = xv.row(u[k]), b = xv.row(v[k]);
          auto ga = gx.row(u[k]), gb = gx.row(v[k]);
          for (std::size_t c = 0; c < a.size(); ++c) {
            const double d = w * (a[c] - b[c]);
            ga[c] += d;
            gb[c] -= d;
          }
        }
      },
      "pair_distance");
}

/// Straight-through estimator: forward value is `hard`, backward passes the
/// incoming gradient to `soft` unchanged.
inline Var straight_through(Var soft, Matrix hard) {
  if (!hard.same_shape(soft.value())) throw UsageError("straight_through: shape mismatch");
  const auto is = soft.id();
  return soft.tape()->record(
      std::move(hard), {soft},
      [is](Tape& tp, std::size_t self) {
        const Matrix& g = tp.grad(self);
        Matrix& gs = tp.grad(is);
        for (std::size_t i = 0; i < g.size(); ++i) gs[i] += g[i];
      },
      "straight_through");
}

}  // namespace ad

/// Worst relative error between analytic gradients and central differences,
/// with denominator max(|analytic|, |numeric|, 1e-8).
inline double grad_check(const std::function<Var(Tape&)>& build, std::span<Parameter* const> params,
                         double step) {
  if (!(step > 0.0)) throw UsageError("grad_check: step must be positive");
  auto eval = [&]() {
    Tape t;
    const double v = build(t).scalar();
    if (!std::isfinite(v)) throw NumericError("grad_check: non-finite loss");
    return v;
  };
  std::vector<Matrix> analytic;
  {
    Tape t;
    Var loss = build(t);
    if (!std::isfinite(loss.scalar())) throw NumericError("grad_check: non-finite loss");
    for (Parameter* p : params) t.param(*p);
    t.backward(loss);
    for (Parameter* p : params) analytic.push_back(p->grad);
  }
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double orig = p.value[i];
      p.value[i] = orig + step;
      const double up = eval();
      p.value[i] = orig - step;
      const double down = eval();
      p.value[i] = orig;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[k][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

inline double grad_check(const std::function<Var(Tape&)>& build, std::initializer_list<Parameter*> params,
                         double step) {
  std::vector<Parameter*> v(params);
  return grad_check(build, std::span<Parameter* const>(v), step);
}

// ---------------------------------------------------------------------------
// Checkpoint format
//
//   magic "CGIBCKPT" | u32 version | u32 count
//   count x { u32 name_len | name bytes | u64 rows | u64 cols }
//   all tensors' values, row-major, f64 little-endian, in header order
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}
inline void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}
inline std::uint64_t get_u(std::istream& is, int bytes) {
  unsigned char b[8] = {};
  if (!is.read(reinterpret_cast<char*>(b), bytes)) throw DataError("checkpoint: truncated file");
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace detail

using NamedTensor = std::pair<std::string, Matrix>;

inline void write_checkpoint(std::ostream& os, const std::vector<NamedTensor>& tensors) {
  os.write("CGIBCKPT", 8);
  detail::put_u32(os, 1);
  detail::put_u32(os, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, m] : tensors) {
    detail::put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put_u64(os, m.rows());
    detail::put_u64(os, m.cols());
  }
  for (const auto& [name, m] : tensors) {
    for (double v : m.data()) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      detail::put_u64(os, bits);
    }
  }
  if (!os) throw DataError("checkpoint: write failed");
}

inline std::vector<NamedTensor> read_checkpoint(std::istream& is) {
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, "CGIBCKPT", 8) != 0) {
    throw DataError("checkpoint: bad magic");
  }
  const auto version = detail::get_u(is, 4);
  if (version != 1) throw DataError("checkpoint: unsupported version " + std::to_string(version));
  const auto count = detail::get_u(is, 4);
  std::vector<NamedTensor> out;
  std::vector<std::pair<std::size_t, std::size_t>> shapes;
  for (std::uint64_t k = 0; k < count; ++k) {
    const auto len = detail::get_u(is, 4);
    if (len > (1u << 20)) throw DataError("checkpoint: implausible name length");
    std::string name(len, '\0');
    if (!is.read(name.data(), static_cast<std::streamsize>(len))) throw DataError("checkpoint: truncated name");
    const auto rows = detail::get_u(is, 8);
    const auto cols = detail::get_u(is, 8);
    if (rows > (1ull << 32) || cols > (1ull << 32)) throw DataError("checkpoint: implausible shape");
    out.emplace_back(std::move(name), Matrix());
    shapes.emplace_back(rows, cols);
  }
  for (std::size_t k = 0; k < out.size(); ++k) {
    std::vector<double> data(shapes[k].first * shapes[k].second);
    for (auto& v : data) {
      const std::uint64_t bits = detail::get_u(is, 8);
      std::memcpy(&v, &bits, sizeof v);
    }
    out[k].second = Matrix(shapes[k].first, shapes[k].second, std::move(data));
  }
  return out;
}

}  // namespace curvgib
