#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "logicsolver/error.hpp"
#include "logicsolver/rng.hpp"

namespace logicsolver::nn {

using Shape = std::vector<std::size_t>;

inline std::string shape_text(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out + "]";
}

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

inline thread_local bool grad_enabled = true;

}  // namespace detail

/// Disables graph recording for its lifetime (inference).
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_enabled) { detail::grad_enabled = false; }
  ~NoGradGuard() { detail::grad_enabled = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Dense float64 array of rank 0-2 with an optional gradient accumulator.
/// Copies share storage; results of operations record how to propagate
/// gradients back to their inputs.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  static Tensor from_values(Shape shape, std::vector<double> values, bool requires_grad = false) {
    if (shape_size(shape) != values.size()) {
      throw Error(Errc::ShapeMismatch, "shape " + shape_text(shape) + " does not hold " +
                                           std::to_string(values.size()) + " values");
    }
    auto n = std::make_shared<detail::Node>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }
  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = shape_size(shape);
    return from_values(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }
  static Tensor scalar(double v) { return from_values({}, {v}); }
  static Tensor vector(std::vector<double> v) {
    const std::size_t n = v.size();
    return from_values({n}, std::move(v));
  }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
    return from_values({rows, cols}, std::move(v));
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rows() const { return rank() == 2 ? dim(0) : 1; }
  std::size_t cols() const { return rank() == 0 ? 1 : node_->shape.back(); }

  std::span<const double> values() const { return node_->value; }
  std::span<double> mutable_values() { return node_->value; }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->ensure_grad(); }
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }

  bool requires_grad() const { return node_->requires_grad; }
  double item() const {
    if (size() != 1) throw Error(Errc::ShapeMismatch, "item() on tensor of shape " + shape_text(shape()));
    return node_->value[0];
  }
  double operator[](std::size_t i) const { return node_->value[i]; }
  std::vector<double> to_vector() const { return node_->value; }

  /// Fresh leaf with the same values and no history.
  Tensor detach() const { return from_values(shape(), node_->value); }

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

/// Builds an op result; history is kept only when some input needs gradients.
template <typename Backward>
Tensor make_result(Shape shape, std::vector<double> value, std::initializer_list<const Tensor*> inputs,
                   Backward&& backward) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  if (grad_enabled) {
    for (const Tensor* t : inputs) {
      if (t->requires_grad()) {
        n->requires_grad = true;
        break;
      }
    }
  }
  if (n->requires_grad) {
    for (const Tensor* t : inputs) n->parents.push_back(t->node_ptr());
    n->backward = std::forward<Backward>(backward);
  }
  return Tensor(std::move(n));
}

inline Tensor make_result_list(Shape shape, std::vector<double> value, const std::vector<Tensor>& inputs,
                               std::function<void(Node&)> backward) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  if (grad_enabled) {
    for (const Tensor& t : inputs) {
      if (t.requires_grad()) {
        n->requires_grad = true;
        break;
      }
    }
  }
  if (n->requires_grad) {
    for (const Tensor& t : inputs) n->parents.push_back(t.node_ptr());
    n->backward = std::move(backward);
  }
  return Tensor(std::move(n));
}

inline void require(bool ok, const std::string& what) {
  if (!ok) throw Error(Errc::ShapeMismatch, what);
}

inline void accumulate(Node& parent, std::span<const double> g) {
  if (!parent.requires_grad) return;
  auto& dst = parent.ensure_grad();
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

inline double dot(const double* a, const double* b, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

// y[0..n) += alpha * x[0..n)
inline void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

/// Rank-1 operands act as a row (left) or column (right) vector.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require(a.rank() >= 1 && a.rank() <= 2 && b.rank() >= 1 && b.rank() <= 2,
                  "matmul needs rank-1 or rank-2 operands");
  const std::size_t m = a.rank() == 2 ? a.dim(0) : 1;
  const std::size_t k = a.rank() == 2 ? a.dim(1) : a.dim(0);
  const std::size_t kb = b.dim(0);
  const std::size_t n = b.rank() == 2 ? b.dim(1) : 1;
  detail::require(k == kb, "matmul " + shape_text(a.shape()) + " x " + shape_text(b.shape()));

  std::vector<double> c(m * n, 0.0);
  const double* A = a.values().data();
  const double* B = b.values().data();
  if (n == 1) {
    for (std::size_t i = 0; i < m; ++i) c[i] = detail::dot(A + i * k, B, k);
  } else {
    for (std::size_t i = 0; i < m; ++i) {
      double* Ci = c.data() + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = A[i * k + p];
        const double* Bp = B + p * n;
        for (std::size_t j = 0; j < n; ++j) Ci[j] += aip * Bp[j];
      }
    }
  }
  Shape shape;
  if (a.rank() == 2) shape.push_back(m);
  if (b.rank() == 2) shape.push_back(n);
  return detail::make_result(std::move(shape), std::move(c), {&a, &b}, [m, k, n](detail::Node& self) {
    detail::Node& na = *self.parents[0];
    detail::Node& nb = *self.parents[1];
    const double* G = self.grad.data();
    if (na.requires_grad) {
      auto& ga = na.ensure_grad();
      const double* B = nb.value.data();
      if (n == 1) {
        for (std::size_t i = 0; i < m; ++i) detail::axpy(G[i], B, ga.data() + i * k, k);
      } else {
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) ga[i * k + p] += detail::dot(G + i * n, B + p * n, n);
        }
      }
    }
    if (nb.requires_grad) {
      auto& gb = nb.ensure_grad();
      const double* A = na.value.data();
      if (n == 1) {
        for (std::size_t i = 0; i < m; ++i) detail::axpy(G[i], A + i * k, gb.data(), k);
      } else {
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) detail::axpy(A[i * k + p], G + i * n, gb.data() + p * n, n);
        }
      }
    }
  });
}

/// a [m x k] times b^T for b [n x k]; result [m x n].
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  detail::require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(1),
                  "matmul_nt " + shape_text(a.shape()) + " x " + shape_text(b.shape()) + "^T");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  std::vector<double> c(m * n);
  const double* A = a.values().data();
  const double* B = b.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) c[i * n + j] = detail::dot(A + i * k, B + j * k, k);
  }
  return detail::make_result({m, n}, std::move(c), {&a, &b}, [m, k, n](detail::Node& self) {
    detail::Node& na = *self.parents[0];
    detail::Node& nb = *self.parents[1];
    const double* G = self.grad.data();
    if (na.requires_grad) {
      auto& ga = na.ensure_grad();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          const double g = G[i * n + j];
          const double* Bj = nb.value.data() + j * k;
          double* gai = ga.data() + i * k;
          for (std::size_t p = 0; p < k; ++p) gai[p] += g * Bj[p];
        }
      }
    }
    if (nb.requires_grad) {
      auto& gb = nb.ensure_grad();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          const double g = G[i * n + j];
          const double* Ai = na.value.data() + i * k;
          double* gbj = gb.data() + j * k;
          for (std::size_t p = 0; p < k; ++p) gbj[p] += g * Ai[p];
        }
      }
    }
  });
}

inline Tensor dot(const Tensor& a, const Tensor& b) {
  detail::require(a.rank() == 1 && b.rank() == 1 && a.size() == b.size(), "dot needs equal-length vectors");
  return matmul(a, b);
}

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

/// Same shapes, or a rank-2 left operand plus a row vector broadcast to every row.
inline Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) {
    std::vector<double> c(a.size());
    for (std::size_t i = 0; i < c.size(); ++i) c[i] = a[i] + b[i];
    return detail::make_result(a.shape(), std::move(c), {&a, &b}, [](detail::Node& self) {
      detail::accumulate(*self.parents[0], self.grad);
      detail::accumulate(*self.parents[1], self.grad);
    });
  }
  detail::require(a.rank() == 2 && b.rank() == 1 && a.dim(1) == b.dim(0),
                  "add " + shape_text(a.shape()) + " + " + shape_text(b.shape()));
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  std::vector<double> c(a.size());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < cols; ++j) c[r * cols + j] = a[r * cols + j] + b[j];
  }
  return detail::make_result(a.shape(), std::move(c), {&a, &b}, [rows, cols](detail::Node& self) {
    detail::accumulate(*self.parents[0], self.grad);
    detail::Node& nb = *self.parents[1];
    if (nb.requires_grad) {
      auto& gb = nb.ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < cols; ++j) gb[j] += self.grad[r * cols + j];
      }
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require(a.shape() == b.shape(), "sub " + shape_text(a.shape()) + " - " + shape_text(b.shape()));
  std::vector<double> c(a.size());
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = a[i] - b[i];
  return detail::make_result(a.shape(), std::move(c), {&a, &b}, [](detail::Node& self) {
    detail::accumulate(*self.parents[0], self.grad);
    detail::Node& nb = *self.parents[1];
    if (nb.requires_grad) {
      auto& gb = nb.ensure_grad();
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= self.grad[i];
    }
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require(a.shape() == b.shape(), "mul " + shape_text(a.shape()) + " * " + shape_text(b.shape()));
  std::vector<double> c(a.size());
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = a[i] * b[i];
  return detail::make_result(a.shape(), std::move(c), {&a, &b}, [](detail::Node& self) {
    detail::Node& na = *self.parents[0];
    detail::Node& nb = *self.parents[1];
    if (na.requires_grad) {
      auto& g = na.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * nb.value[i];
    }
    if (nb.requires_grad) {
      auto& g = nb.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * na.value[i];
    }
  });
}

/// alpha * a + beta
inline Tensor affine(const Tensor& a, double alpha, double beta = 0.0) {
  std::vector<double> c(a.size());
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = alpha * a[i] + beta;
  return detail::make_result(a.shape(), std::move(c), {&a}, [alpha](detail::Node& self) {
    detail::Node& na = *self.parents[0];
    auto& g = na.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += alpha * self.grad[i];
  });
}

inline Tensor scale(const Tensor& a, double alpha) { return affine(a, alpha, 0.0); }

namespace detail {

template <typename F, typename DF>
Tensor unary(const Tensor& a, F f, DF df_from_output) {
  std::vector<double> c(a.size());
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = f(a[i]);
  return make_result(a.shape(), std::move(c), {&a}, [df_from_output](Node& self) {
    Node& na = *self.parents[0];
    auto& g = na.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * df_from_output(na.value[i], self.value[i]);
  });
}

}  // namespace detail

inline Tensor tanh(const Tensor& a) {
  return detail::unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline Tensor sigmoid(const Tensor& a) {
  return detail::unary(
      a, [](double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); },
      [](double, double y) { return y * (1.0 - y); });
}

inline Tensor exp(const Tensor& a) {
  return detail::unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Tensor log(const Tensor& a) {
  return detail::unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

// ---------------------------------------------------------------------------
// Structural
// ---------------------------------------------------------------------------

/// Concatenates rank-1 tensors.
inline Tensor concat(const std::vector<Tensor>& parts) {
  detail::require(!parts.empty(), "concat needs at least one part");
  std::vector<double> c;
  std::vector<std::size_t> sizes;
  for (const auto& p : parts) {
    detail::require(p.rank() == 1, "concat needs rank-1 parts, got " + shape_text(p.shape()));
    c.insert(c.end(), p.values().begin(), p.values().end());
    sizes.push_back(p.size());
  }
  const std::size_t n = c.size();
  return detail::make_result_list({n}, std::move(c), parts, [sizes](detail::Node& self) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < sizes.size(); ++i) {
      detail::accumulate(*self.parents[i], std::span<const double>(self.grad).subspan(off, sizes[i]));
      off += sizes[i];
    }
  });
}

/// Stacks equal-length rank-1 tensors into rows, or appends rank-2 blocks.
inline Tensor stack_rows(const std::vector<Tensor>& rows) {
  detail::require(!rows.empty(), "stack_rows needs at least one row");
  const std::size_t cols = rows[0].cols();
  std::vector<double> c;
  std::vector<std::size_t> sizes;
  std::size_t nrows = 0;
  for (const auto& r : rows) {
    detail::require(r.rank() >= 1 && r.cols() == cols, "stack_rows: row " + shape_text(r.shape()));
    c.insert(c.end(), r.values().begin(), r.values().end());
    sizes.push_back(r.size());
    nrows += r.rows();
  }
  return detail::make_result_list({nrows, cols}, std::move(c), rows, [sizes](detail::Node& self) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < sizes.size(); ++i) {
      detail::accumulate(*self.parents[i], std::span<const double>(self.grad).subspan(off, sizes[i]));
      off += sizes[i];
    }
  });
}

inline Tensor row(const Tensor& a, std::size_t r) {
  detail::require(a.rank() == 2 && r < a.dim(0), "row " + std::to_string(r) + " of " + shape_text(a.shape()));
  const std::size_t cols = a.dim(1);
  std::vector<double> c(a.values().begin() + r * cols, a.values().begin() + (r + 1) * cols);
  return detail::make_result({cols}, std::move(c), {&a}, [r, cols](detail::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t j = 0; j < cols; ++j) g[r * cols + j] += self.grad[j];
  });
}

/// Elements [begin, end) of a rank-1 tensor.
inline Tensor slice(const Tensor& a, std::size_t begin, std::size_t end) {
  detail::require(a.rank() == 1 && begin <= end && end <= a.size(), "slice of " + shape_text(a.shape()));
  std::vector<double> c(a.values().begin() + begin, a.values().begin() + end);
  return detail::make_result({end - begin}, std::move(c), {&a}, [begin](detail::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t j = 0; j < self.grad.size(); ++j) g[begin + j] += self.grad[j];
  });
}

/// Columns [begin, end) of a rank-2 tensor.
inline Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  detail::require(a.rank() == 2 && begin <= end && end <= a.dim(1), "slice_cols of " + shape_text(a.shape()));
  const std::size_t rows = a.dim(0), cols = a.dim(1), w = end - begin;
  std::vector<double> c(rows * w);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < w; ++j) c[r * w + j] = a[r * cols + begin + j];
  }
  return detail::make_result({rows, w}, std::move(c), {&a}, [rows, cols, w, begin](detail::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < w; ++j) g[r * cols + begin + j] += self.grad[r * w + j];
    }
  });
}

inline Tensor gather(const Tensor& a, std::vector<std::size_t> indices) {
  detail::require(a.rank() == 1, "gather needs a rank-1 tensor");
  std::vector<double> c(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    detail::require(indices[i] < a.size(), "gather index out of range");
    c[i] = a[indices[i]];
  }
  const std::size_t n = indices.size();
  return detail::make_result({n}, std::move(c), {&a}, [indices = std::move(indices)](detail::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < indices.size(); ++i) g[indices[i]] += self.grad[i];
  });
}

/// Single element of a rank-1 tensor as a scalar.
inline Tensor pick(const Tensor& a, std::size_t i) {
  detail::require(a.rank() == 1 && i < a.size(), "pick index out of range");
  return detail::make_result({}, {a[i]}, {&a}, [i](detail::Node& self) {
    self.parents[0]->ensure_grad()[i] += self.grad[0];
  });
}

/// Rows of `table` selected by id, shape [ids x cols].
inline Tensor embedding_lookup(const Tensor& table, const std::vector<std::size_t>& ids) {
  detail::require(table.rank() == 2, "embedding table must be rank 2");
  const std::size_t cols = table.dim(1);
  std::vector<double> c(ids.size() * cols);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    detail::require(ids[i] < table.dim(0), "embedding id out of range");
    std::copy_n(table.values().begin() + ids[i] * cols, cols, c.begin() + i * cols);
  }
  return detail::make_result({ids.size(), cols}, std::move(c), {&table}, [ids, cols](detail::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < ids.size(); ++i) {
      for (std::size_t j = 0; j < cols; ++j) g[ids[i] * cols + j] += self.grad[i * cols + j];
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions and normalisation
// ---------------------------------------------------------------------------

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  return detail::make_result({}, {s}, {&a}, [](detail::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (double& v : g) v += self.grad[0];
  });
}

/// Sums scalars; an empty list gives 0.
inline Tensor sum_scalars(const std::vector<Tensor>& terms) {
  double s = 0.0;
  for (const auto& t : terms) s += t.item();
  return detail::make_result_list({}, {s}, terms, [](detail::Node& self) {
    for (auto& p : self.parents) {
      if (p->requires_grad) p->ensure_grad()[0] += self.grad[0];
    }
  });
}

/// Mean of a rank-2 tensor over rows (axis 0, result [cols]) or columns
/// (axis 1, result [rows]).
inline Tensor mean_pool(const Tensor& a, std::size_t axis = 0) {
  detail::require(a.rank() == 2 && axis < 2, "mean_pool needs a rank-2 tensor");
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  detail::require(rows > 0 && cols > 0, "mean_pool over an empty axis");
  if (axis == 0) {
    std::vector<double> c(cols, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < cols; ++j) c[j] += a[r * cols + j];
    }
    for (double& v : c) v /= static_cast<double>(rows);
    return detail::make_result({cols}, std::move(c), {&a}, [rows, cols](detail::Node& self) {
      auto& g = self.parents[0]->ensure_grad();
      const double inv = 1.0 / static_cast<double>(rows);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < cols; ++j) g[r * cols + j] += self.grad[j] * inv;
      }
    });
  }
  std::vector<double> c(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < cols; ++j) c[r] += a[r * cols + j];
    c[r] /= static_cast<double>(cols);
  }
  return detail::make_result({rows}, std::move(c), {&a}, [rows, cols](detail::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    const double inv = 1.0 / static_cast<double>(cols);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < cols; ++j) g[r * cols + j] += self.grad[r] * inv;
    }
  });
}

namespace detail {

// Softmax over `count` elements spaced by `stride`, starting at `base`.
inline void softmax_lane(const double* x, double* y, std::size_t base, std::size_t count, std::size_t stride) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < count; ++i) mx = std::max(mx, x[base + i * stride]);
  double z = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    y[base + i * stride] = std::exp(x[base + i * stride] - mx);
    z += y[base + i * stride];
  }
  for (std::size_t i = 0; i < count; ++i) y[base + i * stride] /= z;
}

}  // namespace detail

/// Normalises along `axis` (rank 1: axis 0; rank 2: 0 = columns, 1 = rows).
inline Tensor softmax(const Tensor& a, std::size_t axis = 0) {
  detail::require(a.rank() == 1 ? axis == 0 : (a.rank() == 2 && axis < 2), "softmax axis out of range");
  const std::size_t rows = a.rows(), cols = a.cols();
  const bool along_rows = a.rank() == 1 || axis == 1;
  std::vector<double> y(a.size());
  const double* x = a.values().data();
  const std::size_t lanes = along_rows ? rows : cols;
  const std::size_t count = along_rows ? cols : rows;
  const std::size_t stride = along_rows ? 1 : cols;
  for (std::size_t l = 0; l < lanes; ++l) detail::softmax_lane(x, y.data(), along_rows ? l * cols : l, count, stride);
  return detail::make_result(a.shape(), std::move(y), {&a}, [lanes, count, stride, along_rows, cols](detail::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t l = 0; l < lanes; ++l) {
      const std::size_t base = along_rows ? l * cols : l;
      double s = 0.0;
      for (std::size_t i = 0; i < count; ++i) s += self.grad[base + i * stride] * self.value[base + i * stride];
      for (std::size_t i = 0; i < count; ++i) {
        const std::size_t k = base + i * stride;
        g[k] += self.value[k] * (self.grad[k] - s);
      }
    }
  });
}

inline Tensor log_softmax(const Tensor& a) {
  detail::require(a.rank() == 1 && a.size() > 0, "log_softmax needs a nonempty rank-1 tensor");
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : a.values()) mx = std::max(mx, v);
  double z = 0.0;
  for (double v : a.values()) z += std::exp(v - mx);
  const double lse = mx + std::log(z);
  std::vector<double> y(a.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] - lse;
  return detail::make_result(a.shape(), std::move(y), {&a}, [](detail::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    double s = 0.0;
    for (double v : self.grad) s += v;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] - std::exp(self.value[i]) * s;
  });
}

/// log(sum(exp(a))) of a rank-1 tensor, as a scalar.
inline Tensor logsumexp(const Tensor& a) {
  detail::require(a.rank() == 1 && a.size() > 0, "logsumexp needs a nonempty rank-1 tensor");
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : a.values()) mx = std::max(mx, v);
  double z = 0.0;
  for (double v : a.values()) z += std::exp(v - mx);
  const double lse = mx + std::log(z);
  return detail::make_result({}, {lse}, {&a}, [](detail::Node& self) {
    detail::Node& na = *self.parents[0];
    auto& g = na.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * std::exp(na.value[i] - self.value[0]);
  });
}

/// Inverted dropout; identity (the same tensor) when not training.
inline Tensor dropout(const Tensor& a, double rate, Rng& rng, bool train) {
  if (!train || rate <= 0.0) return a;
  detail::require(rate < 1.0, "dropout rate must be below 1");
  const double keep = 1.0 / (1.0 - rate);
  std::vector<double> mask(a.size());
  for (double& m : mask) m = rng.uniform() < rate ? 0.0 : keep;
  std::vector<double> c(a.size());
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = a[i] * mask[i];
  return detail::make_result(a.shape(), std::move(c), {&a}, [mask = std::move(mask)](detail::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * mask[i];
  });
}

// ---------------------------------------------------------------------------
// Reverse pass
// ---------------------------------------------------------------------------

/// Accumulates d(loss)/d(x) into every reachable tensor that requires
/// gradients, then releases the recorded graph.
inline void backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw Error(Errc::GraphError, "backward needs a scalar loss");
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{loss.node(), 0}};
  visited.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
  for (detail::Node* n : order) {
    if (n->backward) {
      n->backward = nullptr;
      n->parents.clear();
      n->grad.clear();
    }
  }
}

}  // namespace logicsolver::nn
