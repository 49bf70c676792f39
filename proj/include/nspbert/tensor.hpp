#pragma once

// Dense rank-2 tensors with reverse-mode differentiation.
//
// Every value is an Eigen row-major matrix; vectors are 1 x n and scalars are
// 1 x 1. Operations are free functions that build a dynamic graph when any
// input requires a gradient. backward() orders the reachable nodes on a tape
// (reverse topological order) and visits each one exactly once.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numbers>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace nspbert {

using Index = Eigen::Index;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Raised when operand shapes are incompatible.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a gather index is outside the table.
class IndexError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// Raised when an operation is called outside its contract (e.g. backward on a
/// non-scalar).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

namespace detail {

inline std::string shape_str(Index r, Index c) {
  std::ostringstream os;
  os << "(" << r << ", " << c << ")";
  return os.str();
}

inline thread_local bool grad_enabled = true;

template <typename Scalar>
struct Node {
  Matrix<Scalar> value;
  Matrix<Scalar> grad;  // empty until the first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Propagates this node's grad into its parents.
  std::function<void(Node&)> backward_fn;

  void accumulate(const Matrix<Scalar>& g) {
    if (grad.size() == 0) {
      grad = g;
    } else {
      grad += g;
    }
  }
  Matrix<Scalar>& grad_buffer() {
    if (grad.size() == 0) grad = Matrix<Scalar>::Zero(value.rows(), value.cols());
    return grad;
  }
};

}  // namespace detail

/// Disables graph construction on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_enabled) { detail::grad_enabled = false; }
  ~NoGradGuard() { detail::grad_enabled = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename Scalar>
class Tensor {
 public:
  using NodeType = detail::Node<Scalar>;
  using MatrixType = Matrix<Scalar>;

  Tensor() : node_(std::make_shared<NodeType>()) {}
  explicit Tensor(MatrixType value, bool requires_grad = false) : node_(std::make_shared<NodeType>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  static Tensor constant(MatrixType value) { return Tensor(std::move(value), false); }
  static Tensor parameter(MatrixType value) { return Tensor(std::move(value), true); }
  static Tensor scalar(Scalar v) { return Tensor(MatrixType::Constant(1, 1, v), false); }
  static Tensor zeros(Index rows, Index cols, bool requires_grad = false) {
    return Tensor(MatrixType::Zero(rows, cols), requires_grad);
  }
  static Tensor row(std::span<const Scalar> values, bool requires_grad = false) {
    MatrixType m(1, static_cast<Index>(values.size()));
    for (Index i = 0; i < m.cols(); ++i) m(0, i) = values[static_cast<size_t>(i)];
    return Tensor(std::move(m), requires_grad);
  }

  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  Index size() const { return node_->value.size(); }
  std::vector<Index> shape() const { return {rows(), cols()}; }

  const MatrixType& value() const { return node_->value; }
  /// Direct write access, intended for optimizers and initialization only.
  MatrixType& mutable_value() { return node_->value; }
  Scalar item() const {
    if (size() != 1) throw ContractError("item() requires a 1x1 tensor, got " + detail::shape_str(rows(), cols()));
    return node_->value(0, 0);
  }
  Scalar operator()(Index r, Index c) const { return node_->value(r, c); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return node_->grad.size() != 0; }
  const MatrixType& grad() const { return node_->grad; }
  void zero_grad() { node_->grad.resize(0, 0); }

  /// Identity of the underlying node (two handles to one tensor compare equal).
  const NodeType* id() const { return node_.get(); }
  const std::shared_ptr<NodeType>& node() const { return node_; }

  /// Creates an op result. The closure is recorded only when some parent is
  /// differentiable and graph construction is enabled.
  static Tensor from_op(MatrixType value, std::vector<Tensor> inputs, std::function<void(NodeType&)> backward_fn) {
    Tensor out(std::move(value), false);
    if (!detail::grad_enabled) return out;
    bool any = false;
    for (const auto& t : inputs) any = any || t.requires_grad();
    if (!any) return out;
    out.node_->requires_grad = true;
    out.node_->parents.reserve(inputs.size());
    for (auto& t : inputs) out.node_->parents.push_back(t.node_);
    out.node_->backward_fn = std::move(backward_fn);
    return out;
  }

 private:
  std::shared_ptr<NodeType> node_;
};

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

/// Reverse traversal order for a loss: every differentiable node reachable from
/// the root, children before parents.
template <typename Scalar>
std::vector<detail::Node<Scalar>*> build_tape(const Tensor<Scalar>& root) {
  using NodeT = detail::Node<Scalar>;
  std::vector<NodeT*> order;
  std::unordered_set<const NodeT*> visited;
  // Iterative post-order DFS; deep encoder graphs overflow a recursive walk.
  std::vector<std::pair<NodeT*, size_t>> stack;
  NodeT* start = root.node().get();
  if (!start->requires_grad) return order;
  stack.emplace_back(start, 0);
  visited.insert(start);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      NodeT* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  std::reverse(order.begin(), order.end());
  return order;
}

/// Populates grad on every differentiable tensor reachable from `loss`.
/// Leaf gradients accumulate across calls until zero_grad(); the interior graph
/// is consumed.
template <typename Scalar>
void backward(const Tensor<Scalar>& loss) {
  if (loss.rows() != 1 || loss.cols() != 1) {
    throw ContractError("backward() requires a scalar loss, got shape " + detail::shape_str(loss.rows(), loss.cols()));
  }
  if (!loss.requires_grad()) throw ContractError("backward() on a loss with no differentiable inputs");
  auto tape = build_tape(loss);
  tape.front()->accumulate(Matrix<Scalar>::Ones(1, 1));
  for (auto* node : tape) {
    if (node->backward_fn && node->grad.size() != 0) node->backward_fn(*node);
  }
  // Interior nodes no longer need their closures. Parent handles are parked
  // until the loop ends so no tape pointer dangles mid-walk.
  std::vector<std::shared_ptr<detail::Node<Scalar>>> released;
  for (auto* node : tape) {
    if (node->backward_fn) {
      node->backward_fn = nullptr;
      for (auto& p : node->parents) released.push_back(std::move(p));
      node->parents.clear();
      node->grad.resize(0, 0);
    }
  }
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

namespace detail {

template <typename Scalar>
void require_same_shape(const char* op, const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.rows(), a.cols()) + " vs " +
                         shape_str(b.rows(), b.cols()));
  }
}

template <typename Scalar>
inline void add_to_parent(Node<Scalar>& self, size_t i, const Matrix<Scalar>& g) {
  auto& p = *self.parents[i];
  if (p.requires_grad) p.accumulate(g);
}

template <typename Scalar>
inline bool wants(const Node<Scalar>& self, size_t i) {
  return self.parents[i]->requires_grad;
}

}  // namespace detail

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions differ, " + detail::shape_str(a.rows(), a.cols()) + " x " +
                         detail::shape_str(b.rows(), b.cols()));
  }
  Matrix<Scalar> out = a.value() * b.value();
  return Tensor<Scalar>::from_op(std::move(out), {a, b}, [](detail::Node<Scalar>& self) {
    const auto& A = self.parents[0]->value;
    const auto& B = self.parents[1]->value;
    if (detail::wants(self, 0)) self.parents[0]->grad_buffer().noalias() += self.grad * B.transpose();
    if (detail::wants(self, 1)) self.parents[1]->grad_buffer().noalias() += A.transpose() * self.grad;
  });
}

/// a * b^T, the layout used for linear layers (weights stored out x in) and
/// attention scores.
template <typename Scalar>
Tensor<Scalar> matmul_nt(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul_nt: inner dimensions differ, " + detail::shape_str(a.rows(), a.cols()) + " x " +
                         detail::shape_str(b.rows(), b.cols()) + "^T");
  }
  Matrix<Scalar> out = a.value() * b.value().transpose();
  return Tensor<Scalar>::from_op(std::move(out), {a, b}, [](detail::Node<Scalar>& self) {
    const auto& A = self.parents[0]->value;
    const auto& B = self.parents[1]->value;
    if (detail::wants(self, 0)) self.parents[0]->grad_buffer().noalias() += self.grad * B;
    if (detail::wants(self, 1)) self.parents[1]->grad_buffer().noalias() += self.grad.transpose() * A;
  });
}

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require_same_shape("add", a, b);
  Matrix<Scalar> out = a.value() + b.value();
  return Tensor<Scalar>::from_op(std::move(out), {a, b}, [](detail::Node<Scalar>& self) {
    detail::add_to_parent(self, 0, self.grad);
    detail::add_to_parent(self, 1, self.grad);
  });
}

template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require_same_shape("sub", a, b);
  Matrix<Scalar> out = a.value() - b.value();
  return Tensor<Scalar>::from_op(std::move(out), {a, b}, [](detail::Node<Scalar>& self) {
    detail::add_to_parent(self, 0, self.grad);
    if (detail::wants(self, 1)) self.parents[1]->grad_buffer() -= self.grad;
  });
}

/// Adds a 1 x n row to every row of an m x n tensor.
template <typename Scalar>
Tensor<Scalar> add_row(const Tensor<Scalar>& a, const Tensor<Scalar>& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw DimensionError("add_row: expected a (1, " + std::to_string(a.cols()) + ") row, got " +
                         detail::shape_str(row.rows(), row.cols()));
  }
  Matrix<Scalar> out = a.value().rowwise() + row.value().row(0);
  return Tensor<Scalar>::from_op(std::move(out), {a, row}, [](detail::Node<Scalar>& self) {
    detail::add_to_parent(self, 0, self.grad);
    if (detail::wants(self, 1)) {
      auto& g = self.parents[1]->grad_buffer();
      for (Index c = 0; c < self.grad.cols(); ++c) {
        double acc = 0.0;
        for (Index r = 0; r < self.grad.rows(); ++r) acc += self.grad(r, c);
        g(0, c) += static_cast<Scalar>(acc);
      }
    }
  });
}

/// Elementwise product.
template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require_same_shape("mul", a, b);
  Matrix<Scalar> out = a.value().cwiseProduct(b.value());
  return Tensor<Scalar>::from_op(std::move(out), {a, b}, [](detail::Node<Scalar>& self) {
    const auto& A = self.parents[0]->value;
    const auto& B = self.parents[1]->value;
    if (detail::wants(self, 0)) self.parents[0]->grad_buffer() += self.grad.cwiseProduct(B);
    if (detail::wants(self, 1)) self.parents[1]->grad_buffer() += self.grad.cwiseProduct(A);
  });
}

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& a, Scalar s) {
  Matrix<Scalar> out = a.value() * s;
  return Tensor<Scalar>::from_op(std::move(out), {a}, [s](detail::Node<Scalar>& self) {
    if (detail::wants(self, 0)) self.parents[0]->grad_buffer() += self.grad * s;
  });
}

template <typename Scalar>
Tensor<Scalar> operator+(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return add(a, b); }
template <typename Scalar>
Tensor<Scalar> operator-(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return sub(a, b); }
template <typename Scalar>
Tensor<Scalar> operator*(const Tensor<Scalar>& a, Scalar s) { return scale(a, s); }

template <typename Scalar>
Tensor<Scalar> tanh_op(const Tensor<Scalar>& x) {
  Matrix<Scalar> out = x.value().array().tanh().matrix();
  return Tensor<Scalar>::from_op(out, {x}, [out](detail::Node<Scalar>& self) {
    if (detail::wants(self, 0)) {
      self.parents[0]->grad_buffer().array() += self.grad.array() * (Scalar(1) - out.array().square());
    }
  });
}

template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& x) {
  Matrix<Scalar> out = x.value().unaryExpr([](Scalar v) {
    // Split by sign so exp never overflows.
    if (v >= 0) return Scalar(1) / (Scalar(1) + std::exp(-v));
    Scalar e = std::exp(v);
    return e / (Scalar(1) + e);
  });
  return Tensor<Scalar>::from_op(out, {x}, [out](detail::Node<Scalar>& self) {
    if (detail::wants(self, 0)) {
      self.parents[0]->grad_buffer().array() += self.grad.array() * out.array() * (Scalar(1) - out.array());
    }
  });
}

/// Exact (erf-based) GELU.
template <typename Scalar>
Tensor<Scalar> gelu(const Tensor<Scalar>& x) {
  constexpr Scalar inv_sqrt2 = Scalar(0.70710678118654752440);
  Matrix<Scalar> out = x.value().unaryExpr([](Scalar v) { return Scalar(0.5) * v * (Scalar(1) + std::erf(v * inv_sqrt2)); });
  return Tensor<Scalar>::from_op(std::move(out), {x}, [](detail::Node<Scalar>& self) {
    if (!detail::wants(self, 0)) return;
    constexpr Scalar inv_sqrt_2pi = Scalar(0.39894228040143267794);
    const auto& X = self.parents[0]->value;
    auto& g = self.parents[0]->grad_buffer();
    for (Index i = 0; i < X.size(); ++i) {
      Scalar v = X.data()[i];
      Scalar cdf = Scalar(0.5) * (Scalar(1) + std::erf(v * inv_sqrt2));
      Scalar pdf = inv_sqrt_2pi * std::exp(Scalar(-0.5) * v * v);
      g.data()[i] += self.grad.data()[i] * (cdf + v * pdf);
    }
  });
}

/// Row-wise softmax with max subtraction; normalizers accumulate in double.
template <typename Scalar>
Matrix<Scalar> softmax_rows_value(const Matrix<Scalar>& x) {
  Matrix<Scalar> out(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    const Scalar m = x.row(r).maxCoeff();
    double denom = 0.0;
    for (Index c = 0; c < x.cols(); ++c) {
      const double e = std::exp(static_cast<double>(x(r, c)) - static_cast<double>(m));
      out(r, c) = static_cast<Scalar>(e);
      denom += e;
    }
    for (Index c = 0; c < x.cols(); ++c) out(r, c) = static_cast<Scalar>(static_cast<double>(out(r, c)) / denom);
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> softmax_rows(const Tensor<Scalar>& x) {
  if (x.cols() < 1) throw DimensionError("softmax_rows: last dimension must be >= 1");
  Matrix<Scalar> out = softmax_rows_value(x.value());
  return Tensor<Scalar>::from_op(out, {x}, [out](detail::Node<Scalar>& self) {
    if (!detail::wants(self, 0)) return;
    auto& g = self.parents[0]->grad_buffer();
    for (Index r = 0; r < out.rows(); ++r) {
      double dot = 0.0;
      for (Index c = 0; c < out.cols(); ++c) dot += static_cast<double>(self.grad(r, c)) * out(r, c);
      for (Index c = 0; c < out.cols(); ++c) {
        g(r, c) += static_cast<Scalar>(out(r, c) * (static_cast<double>(self.grad(r, c)) - dot));
      }
    }
  });
}

/// Normalizes each row to zero mean and unit variance, then applies gain and
/// bias (both 1 x n).
template <typename Scalar>
Tensor<Scalar> layer_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& gain, const Tensor<Scalar>& bias,
                          Scalar eps = Scalar(1e-12)) {
  const Index n = x.cols();
  if (gain.rows() != 1 || gain.cols() != n || bias.rows() != 1 || bias.cols() != n) {
    throw DimensionError("layer_norm: gain/bias must be (1, " + std::to_string(n) + "), got " +
                         detail::shape_str(gain.rows(), gain.cols()) + " and " +
                         detail::shape_str(bias.rows(), bias.cols()));
  }
  const auto& X = x.value();
  Matrix<Scalar> normed(X.rows(), n);
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> inv_std(X.rows());
  for (Index r = 0; r < X.rows(); ++r) {
    double mean = 0.0;
    for (Index c = 0; c < n; ++c) mean += X(r, c);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (Index c = 0; c < n; ++c) {
      const double d = X(r, c) - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + static_cast<double>(eps));
    inv_std(r) = static_cast<Scalar>(is);
    for (Index c = 0; c < n; ++c) normed(r, c) = static_cast<Scalar>((X(r, c) - mean) * is);
  }
  Matrix<Scalar> out = (normed.array().rowwise() * gain.value().row(0).array()).rowwise() + bias.value().row(0).array();
  return Tensor<Scalar>::from_op(std::move(out), {x, gain, bias},
                                 [normed, inv_std](detail::Node<Scalar>& self) {
    const Index rows = normed.rows();
    const Index cols = normed.cols();
    const auto& G = self.parents[1]->value;
    if (detail::wants(self, 0)) {
      auto& gx = self.parents[0]->grad_buffer();
      for (Index r = 0; r < rows; ++r) {
        double sum_dy = 0.0;
        double sum_dy_n = 0.0;
        for (Index c = 0; c < cols; ++c) {
          const double dy = static_cast<double>(self.grad(r, c)) * G(0, c);
          sum_dy += dy;
          sum_dy_n += dy * normed(r, c);
        }
        const double mean_dy = sum_dy / static_cast<double>(cols);
        const double mean_dy_n = sum_dy_n / static_cast<double>(cols);
        for (Index c = 0; c < cols; ++c) {
          const double dy = static_cast<double>(self.grad(r, c)) * G(0, c);
          gx(r, c) += static_cast<Scalar>(inv_std(r) * (dy - mean_dy - normed(r, c) * mean_dy_n));
        }
      }
    }
    if (detail::wants(self, 1) || detail::wants(self, 2)) {
      for (Index c = 0; c < cols; ++c) {
        double dg = 0.0;
        double db = 0.0;
        for (Index r = 0; r < rows; ++r) {
          dg += static_cast<double>(self.grad(r, c)) * normed(r, c);
          db += self.grad(r, c);
        }
        if (detail::wants(self, 1)) self.parents[1]->grad_buffer()(0, c) += static_cast<Scalar>(dg);
        if (detail::wants(self, 2)) self.parents[2]->grad_buffer()(0, c) += static_cast<Scalar>(db);
      }
    }
  });
}

/// Gathers rows of `table`; repeated ids accumulate gradient on the same row.
template <typename Scalar>
Tensor<Scalar> embedding_lookup(const Tensor<Scalar>& table, std::span<const int32_t> ids) {
  Matrix<Scalar> out(static_cast<Index>(ids.size()), table.cols());
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= table.rows()) {
      throw IndexError("embedding_lookup: id " + std::to_string(ids[i]) + " outside table of " +
                       std::to_string(table.rows()) + " rows");
    }
    out.row(static_cast<Index>(i)) = table.value().row(ids[i]);
  }
  std::vector<int32_t> rows(ids.begin(), ids.end());
  return Tensor<Scalar>::from_op(std::move(out), {table}, [rows = std::move(rows)](detail::Node<Scalar>& self) {
    if (!detail::wants(self, 0)) return;
    auto& g = self.parents[0]->grad_buffer();
    for (size_t i = 0; i < rows.size(); ++i) g.row(rows[i]) += self.grad.row(static_cast<Index>(i));
  });
}

template <typename Scalar>
Tensor<Scalar> select_rows(const Tensor<Scalar>& x, std::span<const int32_t> rows) {
  return embedding_lookup(x, rows);
}

template <typename Scalar>
Tensor<Scalar> slice_rows(const Tensor<Scalar>& x, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > x.rows()) {
    throw DimensionError("slice_rows: [" + std::to_string(start) + ", " + std::to_string(start + count) +
                         ") outside " + detail::shape_str(x.rows(), x.cols()));
  }
  Matrix<Scalar> out = x.value().middleRows(start, count);
  return Tensor<Scalar>::from_op(std::move(out), {x}, [start, count](detail::Node<Scalar>& self) {
    if (detail::wants(self, 0)) self.parents[0]->grad_buffer().middleRows(start, count) += self.grad;
  });
}

template <typename Scalar>
Tensor<Scalar> slice_cols(const Tensor<Scalar>& x, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > x.cols()) {
    throw DimensionError("slice_cols: [" + std::to_string(start) + ", " + std::to_string(start + count) +
                         ") outside " + detail::shape_str(x.rows(), x.cols()));
  }
  Matrix<Scalar> out = x.value().middleCols(start, count);
  return Tensor<Scalar>::from_op(std::move(out), {x}, [start, count](detail::Node<Scalar>& self) {
    if (detail::wants(self, 0)) self.parents[0]->grad_buffer().middleCols(start, count) += self.grad;
  });
}

/// Same data reinterpreted as rows x cols (row-major order is preserved).
template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& x, Index rows, Index cols) {
  if (rows < 0 || cols < 0 || rows * cols != x.size()) {
    throw DimensionError("reshape: cannot view " + detail::shape_str(x.rows(), x.cols()) + " as " +
                         detail::shape_str(rows, cols));
  }
  Matrix<Scalar> out = Eigen::Map<const Matrix<Scalar>>(x.value().data(), rows, cols);
  return Tensor<Scalar>::from_op(std::move(out), {x}, [](detail::Node<Scalar>& self) {
    if (!detail::wants(self, 0)) return;
    auto& g = self.parents[0]->grad_buffer();
    Eigen::Map<Matrix<Scalar>>(g.data(), g.rows(), g.cols()) +=
        Eigen::Map<const Matrix<Scalar>>(self.grad.data(), g.rows(), g.cols());
  });
}

/// Column vector holding x(i, cols[i]) for every row i.
template <typename Scalar>
Tensor<Scalar> pick(const Tensor<Scalar>& x, std::span<const int32_t> cols) {
  if (static_cast<Index>(cols.size()) != x.rows()) {
    throw DimensionError("pick: " + std::to_string(cols.size()) + " column indices for " +
                         detail::shape_str(x.rows(), x.cols()));
  }
  Matrix<Scalar> out(x.rows(), 1);
  for (Index i = 0; i < x.rows(); ++i) {
    const int32_t c = cols[static_cast<size_t>(i)];
    if (c < 0 || c >= x.cols()) throw IndexError("pick: column " + std::to_string(c) + " outside " +
                                                 detail::shape_str(x.rows(), x.cols()));
    out(i, 0) = x.value()(i, c);
  }
  std::vector<int32_t> idx(cols.begin(), cols.end());
  return Tensor<Scalar>::from_op(std::move(out), {x}, [idx = std::move(idx)](detail::Node<Scalar>& self) {
    if (!detail::wants(self, 0)) return;
    auto& g = self.parents[0]->grad_buffer();
    for (size_t i = 0; i < idx.size(); ++i) g(static_cast<Index>(i), idx[i]) += self.grad(static_cast<Index>(i), 0);
  });
}

template <typename Scalar>
Tensor<Scalar> concat_rows(const std::vector<Tensor<Scalar>>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != parts.front().cols()) throw DimensionError("concat_rows: column counts differ");
    rows += p.rows();
  }
  Matrix<Scalar> out(rows, parts.front().cols());
  Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  return Tensor<Scalar>::from_op(std::move(out), parts, [](detail::Node<Scalar>& self) {
    Index offset = 0;
    for (auto& p : self.parents) {
      const Index r = p->value.rows();
      if (p->requires_grad) p->grad_buffer() += self.grad.middleRows(offset, r);
      offset += r;
    }
  });
}

template <typename Scalar>
Tensor<Scalar> concat_cols(const std::vector<Tensor<Scalar>>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != parts.front().rows()) throw DimensionError("concat_cols: row counts differ");
    cols += p.cols();
  }
  Matrix<Scalar> out(parts.front().rows(), cols);
  Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return Tensor<Scalar>::from_op(std::move(out), parts, [](detail::Node<Scalar>& self) {
    Index offset = 0;
    for (auto& p : self.parents) {
      const Index c = p->value.cols();
      if (p->requires_grad) p->grad_buffer() += self.grad.middleCols(offset, c);
      offset += c;
    }
  });
}

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& x) {
  double acc = 0.0;
  for (Index i = 0; i < x.size(); ++i) acc += x.value().data()[i];
  return Tensor<Scalar>::from_op(Matrix<Scalar>::Constant(1, 1, static_cast<Scalar>(acc)), {x},
                                 [](detail::Node<Scalar>& self) {
    if (detail::wants(self, 0)) self.parents[0]->grad_buffer().array() += self.grad(0, 0);
  });
}

template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& x) {
  if (x.size() == 0) throw DimensionError("mean: empty tensor");
  return scale(sum(x), Scalar(1) / static_cast<Scalar>(x.size()));
}

/// Mean over rows of -log softmax(logits)[target]. One target per row.
template <typename Scalar>
Tensor<Scalar> cross_entropy(const Tensor<Scalar>& logits, std::span<const int32_t> targets) {
  if (static_cast<Index>(targets.size()) != logits.rows()) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(logits.rows()) + " rows");
  }
  if (logits.rows() == 0) throw DimensionError("cross_entropy: no rows");
  for (auto t : targets) {
    if (t < 0 || t >= logits.cols()) {
      throw IndexError("cross_entropy: target " + std::to_string(t) + " outside " + std::to_string(logits.cols()) +
                       " classes");
    }
  }
  Matrix<Scalar> probs = softmax_rows_value(logits.value());
  double loss = 0.0;
  const auto& L = logits.value();
  for (Index r = 0; r < L.rows(); ++r) {
    const double m = L.row(r).maxCoeff();
    double denom = 0.0;
    for (Index c = 0; c < L.cols(); ++c) denom += std::exp(static_cast<double>(L(r, c)) - m);
    loss += (m + std::log(denom)) - static_cast<double>(L(r, targets[static_cast<size_t>(r)]));
  }
  loss /= static_cast<double>(L.rows());
  std::vector<int32_t> tgt(targets.begin(), targets.end());
  return Tensor<Scalar>::from_op(Matrix<Scalar>::Constant(1, 1, static_cast<Scalar>(loss)), {logits},
                                 [probs = std::move(probs), tgt = std::move(tgt)](detail::Node<Scalar>& self) {
    if (!detail::wants(self, 0)) return;
    const Scalar g = self.grad(0, 0) / static_cast<Scalar>(probs.rows());
    auto& gl = self.parents[0]->grad_buffer();
    for (Index r = 0; r < probs.rows(); ++r) {
      gl.row(r) += g * probs.row(r);
      gl(r, tgt[static_cast<size_t>(r)]) -= g;
    }
  });
}

template <typename Scalar>
Tensor<Scalar> cross_entropy(const Tensor<Scalar>& logits, int32_t target) {
  return cross_entropy(logits, std::span<const int32_t>(&target, 1));
}

inline constexpr double kBceEps = 1e-7;

/// Mean binary cross-entropy of probabilities p (any shape) against 0/1
/// targets in row-major order. p is clamped to [eps, 1 - eps].
template <typename Scalar>
Tensor<Scalar> binary_cross_entropy(const Tensor<Scalar>& p, std::span<const Scalar> targets) {
  if (static_cast<Index>(targets.size()) != p.size()) {
    throw DimensionError("binary_cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(p.size()) + " probabilities");
  }
  if (p.size() == 0) throw DimensionError("binary_cross_entropy: no probabilities");
  const auto& P = p.value();
  double loss = 0.0;
  for (Index i = 0; i < P.size(); ++i) {
    const double q = std::clamp(static_cast<double>(P.data()[i]), kBceEps, 1.0 - kBceEps);
    const double y = targets[static_cast<size_t>(i)];
    loss -= y * std::log(q) + (1.0 - y) * std::log(1.0 - q);
  }
  loss /= static_cast<double>(P.size());
  std::vector<Scalar> y(targets.begin(), targets.end());
  return Tensor<Scalar>::from_op(Matrix<Scalar>::Constant(1, 1, static_cast<Scalar>(loss)), {p},
                                 [y = std::move(y)](detail::Node<Scalar>& self) {
    if (!detail::wants(self, 0)) return;
    const auto& P = self.parents[0]->value;
    auto& g = self.parents[0]->grad_buffer();
    const double scale = static_cast<double>(self.grad(0, 0)) / static_cast<double>(P.size());
    for (Index i = 0; i < P.size(); ++i) {
      const double raw = P.data()[i];
      // Clamped entries are constant in p.
      if (raw < kBceEps || raw > 1.0 - kBceEps) continue;
      const double t = y[static_cast<size_t>(i)];
      g.data()[i] += static_cast<Scalar>(scale * (-(t / raw) + (1.0 - t) / (1.0 - raw)));
    }
  });
}

template <typename Scalar>
Tensor<Scalar> binary_cross_entropy(const Tensor<Scalar>& p, Scalar target) {
  return binary_cross_entropy(p, std::span<const Scalar>(&target, 1));
}

/// True when every entry is finite.
template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
  return m.allFinite();
}

}  // namespace nspbert
