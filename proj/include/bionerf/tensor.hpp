// Copyright 2026 The bionerf-cpp Authors
// SPDX-License-Identifier: Apache-2.0

// Dense row-major tensors with define-by-run reverse-mode differentiation.
//
// Every op allocates a node that owns its output values, keeps shared
// references to its inputs and carries two closures: `forward` recomputes the
// value from the inputs (used for replay checks) and `backward` pushes the
// node's gradient into its inputs. `backward(loss)` runs the closures in
// reverse topological order and then releases the graph, so a second call on
// the same loss throws StaleGraphError.

#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "bionerf/errors.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace bionerf {

using Index = std::size_t;

class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<Index> dims) : dims_(dims) {}
  explicit Shape(std::vector<Index> dims) : dims_(std::move(dims)) {}

  Index rank() const noexcept { return dims_.size(); }
  Index operator[](Index axis) const { return dims_.at(axis); }
  const std::vector<Index>& dims() const noexcept { return dims_; }

  Index numel() const noexcept {
    return std::accumulate(dims_.begin(), dims_.end(), Index{1}, std::multiplies<>());
  }

  std::string str() const {
    std::string s = "[";
    for (Index i = 0; i < dims_.size(); ++i) {
      if (i) s += ", ";
      s += std::to_string(dims_[i]);
    }
    return s + "]";
  }

  friend bool operator==(const Shape&, const Shape&) = default;

 private:
  std::vector<Index> dims_;
};

namespace detail {

#if defined(__GLIBC__)
// Node buffers are large and short-lived. Keeping them on the heap instead of
// fresh mmap pages avoids a page fault and kernel zeroing per allocation.
inline const bool kHeapTuned = [] {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  return true;
}();
#endif

inline std::uint64_t next_node_id() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}

template <class T>
struct Node {
  using Ptr = std::shared_ptr<Node>;

  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until first accumulation
  bool has_grad = false;
  std::vector<Ptr> inputs;
  std::function<void(Node&)> forward;
  std::function<void(Node&)> backward;
  const char* op = "leaf";
  bool requires_grad = false;
  bool released = false;
  std::uint64_t id = next_node_id();

  bool is_leaf() const noexcept { return std::strcmp(op, "leaf") == 0; }

  std::vector<T>& grad_buffer() {
    if (!has_grad) {
      grad.assign(value.size(), T(0));
      has_grad = true;
    }
    return grad;
  }
};

}  // namespace detail

template <class T>
class Tensor;

template <class T>
void backward(const Tensor<T>& loss);

template <class T>
class Graph;

template <class T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    std::vector<T> values(shape.numel(), T(0));
    return from(std::move(shape), std::move(values), requires_grad);
  }

  static Tensor filled(Shape shape, T fill, bool requires_grad = false) {
    std::vector<T> values(shape.numel(), fill);
    return from(std::move(shape), std::move(values), requires_grad);
  }

  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false) {
    if (values.size() != shape.numel()) {
      throw DimensionError("tensor of shape " + shape.str() + " given " +
                           std::to_string(values.size()) + " values");
    }
    auto node = std::make_shared<detail::Node<T>>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor scalar(T v, bool requires_grad = false) { return from(Shape{1}, {v}, requires_grad); }

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  Index numel() const { return node_->value.size(); }
  Index rows() const { return node_->shape.rank() ? node_->shape[0] : 1; }
  Index cols() const { return node_->shape.rank() > 1 ? numel() / rows() : 1; }

  std::span<const T> values() const { return node_->value; }
  const T* data() const { return node_->value.data(); }

  /// Writable access for leaves (optimizer updates, test perturbations).
  std::span<T> mutable_values() {
    if (!node_->is_leaf()) throw Error("mutable_values() on non-leaf tensor");
    return node_->value;
  }

  T operator[](Index i) const { return node_->value[i]; }
  T operator()(Index r, Index c) const { return node_->value[r * cols() + c]; }
  T item() const {
    if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape().str());
    return node_->value[0];
  }

  bool requires_grad() const noexcept { return node_->requires_grad; }
  bool is_leaf() const noexcept { return node_->is_leaf(); }
  const char* op() const noexcept { return node_->op; }
  std::uint64_t id() const noexcept { return node_->id; }

  bool has_grad() const noexcept { return node_->has_grad; }
  std::span<const T> grad() const {
    if (!node_->has_grad) throw Error("tensor has no gradient");
    return node_->grad;
  }
  void zero_grad() {
    node_->grad.clear();
    node_->has_grad = false;
  }

  /// Copy of the values as a constant leaf, cut from any graph.
  Tensor detach() const { return from(shape(), node_->value, false); }

  /// True when both handles refer to the same value storage.
  bool same_storage(const Tensor& other) const noexcept { return node_ == other.node_; }

  const NodePtr& node() const noexcept { return node_; }
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

 private:
  NodePtr node_;
};

/// Builds an op node. `forward` fills `self.value` from `self.inputs`;
/// `backward` reads `self.grad` and accumulates into the inputs that require
/// a gradient. The forward closure runs once here.
template <class T, class Fwd, class Bwd>
Tensor<T> make_op(const char* op, Shape shape, std::vector<Tensor<T>> inputs, Fwd&& forward,
                  Bwd&& backward) {
  auto node = std::make_shared<detail::Node<T>>();
  node->op = op;
  node->shape = std::move(shape);
  node->value.resize(node->shape.numel());
  for (auto& in : inputs) {
    node->requires_grad = node->requires_grad || in.requires_grad();
    node->inputs.push_back(in.node());
  }
  node->forward = std::forward<Fwd>(forward);
  node->forward(*node);
  if (node->requires_grad) node->backward = std::forward<Bwd>(backward);
  return Tensor<T>(std::move(node));
}

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstArrMap = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;
template <class T>
using ArrMap = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;

template <class T>
ConstArrMap<T> arr(const std::vector<T>& v) {
  return ConstArrMap<T>(v.data(), static_cast<Eigen::Index>(v.size()));
}
template <class T>
ArrMap<T> arr(std::vector<T>& v) {
  return ArrMap<T>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline void require_rank2(const Shape& s, const char* op, const char* name) {
  if (s.rank() != 2) {
    throw DimensionError(std::string(op) + ": " + name + " must be rank 2, got " + s.str());
  }
}

}  // namespace detail

/// out = x·W + b, with b broadcast over rows.
template <class T>
Tensor<T> affine(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  detail::require_rank2(x.shape(), "affine", "x");
  detail::require_rank2(w.shape(), "affine", "W");
  const Index n = x.shape()[0], k = x.shape()[1], m = w.shape()[1];
  if (w.shape()[0] != k) {
    throw DimensionError("affine: x " + x.shape().str() + " incompatible with W " +
                         w.shape().str());
  }
  if (b.numel() != m) {
    throw DimensionError("affine: bias " + b.shape().str() + " incompatible with W " +
                         w.shape().str());
  }
  using namespace detail;
  const auto en = static_cast<Eigen::Index>(n), ek = static_cast<Eigen::Index>(k),
             em = static_cast<Eigen::Index>(m);
  return make_op<T>(
      "affine", Shape{n, m}, {x, w, b},
      [=](Node<T>& self) {
        const auto& X = self.inputs[0]->value;
        const auto& W = self.inputs[1]->value;
        const auto& B = self.inputs[2]->value;
        MatMap<T> out(self.value.data(), en, em);
        out.noalias() = ConstMatMap<T>(X.data(), en, ek) * ConstMatMap<T>(W.data(), ek, em);
        out.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(B.data(), em);
      },
      [=](Node<T>& self) {
        auto& xin = *self.inputs[0];
        auto& win = *self.inputs[1];
        auto& bin = *self.inputs[2];
        ConstMatMap<T> dout(self.grad.data(), en, em);
        if (xin.requires_grad) {
          MatMap<T>(xin.grad_buffer().data(), en, ek).noalias() +=
              dout * ConstMatMap<T>(win.value.data(), ek, em).transpose();
        }
        if (win.requires_grad) {
          MatMap<T>(win.grad_buffer().data(), ek, em).noalias() +=
              ConstMatMap<T>(xin.value.data(), en, ek).transpose() * dout;
        }
        if (bin.requires_grad) {
          auto& db = bin.grad_buffer();
          std::vector<double> acc(m, 0.0);
          for (Index i = 0; i < n; ++i) {
            const T* row = self.grad.data() + i * m;
            for (Index j = 0; j < m; ++j) acc[j] += row[j];
          }
          for (Index j = 0; j < m; ++j) db[j] += static_cast<T>(acc[j]);
        }
      });
}

enum class Activation { sigmoid, tanh, relu };

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::sigmoid: return "sigmoid";
    case Activation::tanh: return "tanh";
    case Activation::relu: return "relu";
  }
  return "?";
}

template <class T>
Tensor<T> activation(const Tensor<T>& x, Activation kind) {
  using namespace detail;
  return make_op<T>(
      to_string(kind), x.shape(), {x},
      [kind](Node<T>& self) {
        auto in = arr(std::as_const(self.inputs[0]->value));
        auto out = arr(self.value);
        switch (kind) {
          case Activation::sigmoid: out = in.logistic(); break;
          case Activation::tanh: out = in.tanh(); break;
          case Activation::relu: out = in.max(T(0)); break;
        }
      },
      [kind](Node<T>& self) {
        auto& xin = *self.inputs[0];
        auto dx = arr(xin.grad_buffer());
        auto y = arr(std::as_const(self.value));
        auto g = arr(std::as_const(self.grad));
        switch (kind) {
          case Activation::sigmoid: dx += g * y * (T(1) - y); break;
          case Activation::tanh: dx += g * (T(1) - y.square()); break;
          case Activation::relu: dx += (y > T(0)).select(g, T(0)); break;
        }
      });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) { return activation(x, Activation::sigmoid); }
template <class T>
Tensor<T> tanh(const Tensor<T>& x) { return activation(x, Activation::tanh); }
template <class T>
Tensor<T> relu(const Tensor<T>& x) { return activation(x, Activation::relu); }

/// Elementwise product.
template <class T>
Tensor<T> hadamard(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("hadamard: " + a.shape().str() + " vs " + b.shape().str());
  }
  using namespace detail;
  return make_op<T>(
      "hadamard", a.shape(), {a, b},
      [](Node<T>& self) {
        arr(self.value) = arr(std::as_const(self.inputs[0]->value)) *
                          arr(std::as_const(self.inputs[1]->value));
      },
      [](Node<T>& self) {
        auto& ain = *self.inputs[0];
        auto& bin = *self.inputs[1];
        auto g = arr(std::as_const(self.grad));
        if (ain.requires_grad) arr(ain.grad_buffer()) += g * arr(std::as_const(bin.value));
        if (bin.requires_grad) arr(bin.grad_buffer()) += g * arr(std::as_const(ain.value));
      });
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("add: " + a.shape().str() + " vs " + b.shape().str());
  }
  using namespace detail;
  return make_op<T>(
      "add", a.shape(), {a, b},
      [](Node<T>& self) {
        arr(self.value) = arr(std::as_const(self.inputs[0]->value)) +
                          arr(std::as_const(self.inputs[1]->value));
      },
      [](Node<T>& self) {
        auto g = arr(std::as_const(self.grad));
        for (auto& in : self.inputs) {
          if (in->requires_grad) arr(in->grad_buffer()) += g;
        }
      });
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  using namespace detail;
  return make_op<T>(
      "scale", x.shape(), {x},
      [factor](Node<T>& self) { arr(self.value) = arr(std::as_const(self.inputs[0]->value)) * factor; },
      [factor](Node<T>& self) {
        arr(self.inputs[0]->grad_buffer()) += arr(std::as_const(self.grad)) * factor;
      });
}

/// Column-wise concatenation of two rank-2 tensors with equal row counts.
template <class T>
Tensor<T> concat(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank2(a.shape(), "concat", "a");
  detail::require_rank2(b.shape(), "concat", "b");
  const Index n = a.shape()[0], p = a.shape()[1], q = b.shape()[1];
  if (b.shape()[0] != n) {
    throw DimensionError("concat: row mismatch " + a.shape().str() + " vs " + b.shape().str());
  }
  using namespace detail;
  return make_op<T>(
      "concat", Shape{n, p + q}, {a, b},
      [=](Node<T>& self) {
        const T* av = self.inputs[0]->value.data();
        const T* bv = self.inputs[1]->value.data();
        T* out = self.value.data();
        for (Index i = 0; i < n; ++i) {
          std::copy_n(av + i * p, p, out + i * (p + q));
          std::copy_n(bv + i * q, q, out + i * (p + q) + p);
        }
      },
      [=](Node<T>& self) {
        auto& ain = *self.inputs[0];
        auto& bin = *self.inputs[1];
        const T* g = self.grad.data();
        if (ain.requires_grad) {
          T* da = ain.grad_buffer().data();
          for (Index i = 0; i < n; ++i)
            for (Index j = 0; j < p; ++j) da[i * p + j] += g[i * (p + q) + j];
        }
        if (bin.requires_grad) {
          T* db = bin.grad_buffer().data();
          for (Index i = 0; i < n; ++i)
            for (Index j = 0; j < q; ++j) db[i * q + j] += g[i * (p + q) + p + j];
        }
      });
}

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape.numel() != x.numel()) {
    throw DimensionError("reshape: " + x.shape().str() + " to " + shape.str());
  }
  using namespace detail;
  return make_op<T>(
      "reshape", std::move(shape), {x},
      [](Node<T>& self) { self.value = self.inputs[0]->value; },
      [](Node<T>& self) { arr(self.inputs[0]->grad_buffer()) += arr(std::as_const(self.grad)); });
}

/// Sum of all elements into a [1] tensor, accumulated in double.
template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  using namespace detail;
  return make_op<T>(
      "sum", Shape{1}, {x},
      [](Node<T>& self) {
        double acc = 0.0;
        for (T v : self.inputs[0]->value) acc += v;
        self.value[0] = static_cast<T>(acc);
      },
      [](Node<T>& self) { arr(self.inputs[0]->grad_buffer()) += self.grad[0]; });
}

/// Topologically ordered view of the differentiable part of a graph.
template <class T>
class Graph {
 public:
  struct Record {
    std::string op;
    std::vector<std::uint64_t> inputs;
    std::uint64_t output;
  };

  explicit Graph(const Tensor<T>& root) { collect(root.node()); }

  /// Nodes in dependency order; every input precedes its consumer.
  const std::vector<typename Tensor<T>::NodePtr>& nodes() const noexcept { return order_; }

  std::vector<Record> records() const {
    std::vector<Record> out;
    for (const auto& n : order_) {
      Record r{n->op, {}, n->id};
      for (const auto& in : n->inputs) r.inputs.push_back(in->id);
      out.push_back(std::move(r));
    }
    return out;
  }

  /// Recomputes every op node from its inputs in order and reports whether
  /// all recomputed values are bit-identical to the stored ones.
  bool replay_matches() const {
    bool same = true;
    for (const auto& n : order_) {
      if (n->is_leaf() || !n->forward) continue;
      std::vector<T> before = n->value;
      n->forward(*n);
      same = same && std::memcmp(before.data(), n->value.data(), before.size() * sizeof(T)) == 0;
    }
    return same;
  }

 private:
  void collect(const typename Tensor<T>::NodePtr& root) {
    std::unordered_set<const detail::Node<T>*> seen;
    std::vector<std::pair<typename Tensor<T>::NodePtr, Index>> stack;
    stack.emplace_back(root, 0);
    seen.insert(root.get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->inputs.size()) {
        auto child = node->inputs[next++];
        if (seen.insert(child.get()).second) stack.emplace_back(std::move(child), 0);
      } else {
        order_.push_back(node);
        stack.pop_back();
      }
    }
  }

  std::vector<typename Tensor<T>::NodePtr> order_;
};

/// Accumulates d(loss)/d(leaf) into every reachable leaf that requires a
/// gradient, then releases the intermediate graph.
template <class T>
void backward(const Tensor<T>& loss) {
  auto& root = loss.node();
  if (!root) throw Error("backward on undefined tensor");
  if (root->released) throw StaleGraphError("backward already ran on this graph; rerun forward");
  if (loss.numel() != 1) throw DimensionError("backward expects a scalar loss, got " + loss.shape().str());
  if (!root->requires_grad) throw Error("loss does not depend on any tensor requiring grad");

  Graph<T> graph(loss);
  const auto& order = graph.nodes();
  for (const auto& n : order) {
    if (!n->is_leaf() && n->released) {
      throw StaleGraphError("graph contains a node consumed by an earlier backward");
    }
  }
  if (root->is_leaf()) {
    auto& g = root->grad_buffer();
    g[0] += T(1);
    return;
  }
  root->grad_buffer()[0] = T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto& n = **it;
    if (n.is_leaf() || !n.requires_grad || !n.has_grad) continue;
    n.backward(n);
  }
  for (const auto& n : order) {
    if (n->is_leaf()) continue;
    n->inputs.clear();
    n->forward = nullptr;
    n->backward = nullptr;
    n->released = true;
    if (n != root) {
      n->grad.clear();
      n->grad.shrink_to_fit();
      n->has_grad = false;
    }
  }
}

}  // namespace bionerf
