// Copyright (c) 2026 the fetr authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense N-d tensor with reverse-mode automatic differentiation.
//
// Tensors are cheap handles onto a shared buffer (torch-style aliasing).
// Every operation builds a fresh graph node when any input requires grad;
// backward() walks the graph once in reverse topological order and
// accumulates into leaf .grad buffers. Values are immutable once produced
// by an op; leaf (parameter) data may be mutated between graphs.

#ifndef FETR_TENSOR_HPP
#define FETR_TENSOR_HPP

#include <algorithm>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <sstream>
#include <unordered_set>
#include <utility>

#include "fetr/common.hpp"

namespace fetr {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

namespace detail {

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  bool requires_grad = false;
  std::vector<T> grad;  // allocated lazily, same length as data
  const char* op = "leaf";
  std::vector<std::shared_ptr<TensorImpl>> parents;
  std::function<void(const std::vector<T>&)> backward_fn;  // receives this node's grad

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
  }
  bool is_leaf() const { return !backward_fn; }
};

}  // namespace detail

template <typename T>
class Tensor {
  static_assert(std::is_floating_point_v<T>, "Tensor supports float and double");

 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<T> data) {
    if (shape_numel(shape) != static_cast<int64_t>(data.size()))
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
    Tensor t;
    t.impl_ = std::make_shared<detail::TensorImpl<T>>();
    t.impl_->shape = std::move(shape);
    t.impl_->data = std::move(data);
    return t;
  }

  static Tensor zeros(const Shape& shape) {
    return from(shape, std::vector<T>(static_cast<size_t>(shape_numel(shape)), T(0)));
  }

  static Tensor full(const Shape& shape, T v) {
    return from(shape, std::vector<T>(static_cast<size_t>(shape_numel(shape)), v));
  }

  static Tensor ones(const Shape& shape) { return full(shape, T(1)); }

  static Tensor scalar(T v) { return from({1}, {v}); }

  static Tensor randn(const Shape& shape, Rng& rng, T stddev = T(1), T mean = T(0)) {
    std::vector<T> d(static_cast<size_t>(shape_numel(shape)));
    for (auto& x : d) x = mean + stddev * static_cast<T>(rng.normal());
    return from(shape, std::move(d));
  }

  static Tensor uniform(const Shape& shape, Rng& rng, T lo, T hi) {
    std::vector<T> d(static_cast<size_t>(shape_numel(shape)));
    for (auto& x : d) x = static_cast<T>(rng.uniform(lo, hi));
    return from(shape, std::move(d));
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  int64_t dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(impl_->data.size()); }
  static constexpr DType dtype() { return dtype_of<T>(); }

  T* data() { return impl_->data.data(); }
  const T* data() const { return impl_->data.data(); }
  std::vector<T>& vec() { return impl_->data; }
  const std::vector<T>& vec() const { return impl_->data; }

  T item() const {
    if (numel() != 1) throw ContractError("item() requires a scalar tensor, got " + shape_str(shape()));
    return impl_->data[0];
  }

  Tensor& set_requires_grad(bool b) {
    if (!impl_->is_leaf() && b)
      throw ContractError("requires_grad can only be toggled on leaf tensors");
    impl_->requires_grad = b;
    return *this;
  }
  bool requires_grad() const { return impl_->requires_grad; }

  bool has_grad() const { return !impl_->grad.empty(); }
  const std::vector<T>& grad_vec() const {
    if (impl_->grad.empty()) throw ContractError("tensor has no gradient");
    return impl_->grad;
  }
  std::vector<T>& raw_grad() {
    impl_->ensure_grad();
    return impl_->grad;
  }
  Tensor grad() const { return Tensor::from(shape(), grad_vec()); }
  void zero_grad() {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
  }

  /// Deep copy with no graph history.
  Tensor clone() const {
    Tensor t = Tensor::from(shape(), impl_->data);
    return t;
  }

  /// Same values, detached from the graph (fresh leaf).
  Tensor detach() const { return clone(); }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> d(impl_->data.size());
    for (size_t i = 0; i < d.size(); ++i) d[i] = static_cast<U>(impl_->data[i]);
    return Tensor<U>::from(shape(), std::move(d));
  }

  const char* op_name() const { return impl_->op; }

  /// Backpropagate from a scalar. Leaf grads accumulate across calls;
  /// intermediate grads are cleared once consumed.
  void backward() const {
    if (numel() != 1) throw ContractError("backward() requires a scalar loss, got " + shape_str(shape()));
    if (!impl_->requires_grad) return;

    // Post-order DFS over the grad-requiring subgraph.
    std::vector<detail::TensorImpl<T>*> order;
    std::unordered_set<detail::TensorImpl<T>*> seen;
    struct Frame {
      detail::TensorImpl<T>* node;
      size_t next_parent;
    };
    std::vector<Frame> stack{{impl_.get(), 0}};
    seen.insert(impl_.get());
    while (!stack.empty()) {
      Frame& f = stack.back();
      if (f.next_parent < f.node->parents.size()) {
        detail::TensorImpl<T>* p = f.node->parents[f.next_parent++].get();
        if (p->requires_grad && !seen.count(p)) {
          seen.insert(p);
          stack.push_back({p, 0});
        }
      } else {
        order.push_back(f.node);
        stack.pop_back();
      }
    }

    impl_->ensure_grad();
    impl_->grad[0] += T(1);

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      detail::TensorImpl<T>* node = *it;
      if (node->backward_fn) {
        node->ensure_grad();
        node->backward_fn(node->grad);
      }
    }
    // Intermediates are one-shot; leaves keep their accumulation.
    for (auto* node : order)
      if (node->backward_fn) node->grad.clear();
  }

  std::shared_ptr<detail::TensorImpl<T>>& impl() { return impl_; }
  const std::shared_ptr<detail::TensorImpl<T>>& impl() const { return impl_; }

 private:
  std::shared_ptr<detail::TensorImpl<T>> impl_;
};

// ---------------------------------------------------------------------------
// Graph-node construction. `backward` receives the node's incoming gradient
// and must accumulate into the inputs it captured (guarded by requires_grad).
// ---------------------------------------------------------------------------

/// Thread-local switch for graph recording; off inside NoGradGuard scopes.
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = prev; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

template <typename T>
Tensor<T> make_op(const char* name, Shape shape, std::vector<T> data,
                  const std::vector<Tensor<T>>& inputs,
                  std::function<void(const std::vector<T>&)> backward) {
  Tensor<T> out = Tensor<T>::from(std::move(shape), std::move(data));
  bool needs = false;
  if (grad_mode())
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  out.impl()->op = name;
  if (needs) {
    out.impl()->requires_grad = true;
    for (const auto& in : inputs) out.impl()->parents.push_back(in.impl());
    out.impl()->backward_fn = std::move(backward);
  }
  return out;
}

namespace detail {

// Row-major strides; broadcast dims get stride 0.
inline std::vector<int64_t> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<int64_t> strides(out.size(), 0);
  int64_t s = 1;
  int off = static_cast<int>(out.size()) - static_cast<int>(in.size());
  for (int i = static_cast<int>(in.size()) - 1; i >= 0; --i) {
    if (in[static_cast<size_t>(i)] != 1) strides[static_cast<size_t>(i + off)] = s;
    s *= in[static_cast<size_t>(i)];
  }
  return strides;
}

inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* opname) {
  size_t r = std::max(a.size(), b.size());
  Shape out(r, 1);
  for (size_t i = 0; i < r; ++i) {
    int64_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    int64_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1)
      throw ShapeError(std::string(opname) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                       " are not broadcastable");
    out[i] = std::max(da, db);
  }
  return out;
}

// Walk an output shape while tracking offsets into two broadcast inputs.
template <typename Body>
void for_each_broadcast(const Shape& out, const std::vector<int64_t>& sa,
                        const std::vector<int64_t>& sb, Body&& body) {
  const int64_t n = shape_numel(out);
  const size_t r = out.size();
  std::vector<int64_t> idx(r, 0);
  int64_t oa = 0, ob = 0;
  for (int64_t i = 0; i < n; ++i) {
    body(i, oa, ob);
    for (int d = static_cast<int>(r) - 1; d >= 0; --d) {
      size_t du = static_cast<size_t>(d);
      if (++idx[du] < out[du]) {
        oa += sa[du];
        ob += sb[du];
        break;
      }
      oa -= sa[du] * (out[du] - 1);
      ob -= sb[du] * (out[du] - 1);
      idx[du] = 0;
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() == b.shape()) {
    std::vector<T> out(a.vec());
    const T* pb = b.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] += pb[i];
    auto ai = a.impl();
    auto bi = b.impl();
    return make_op<T>("add", a.shape(), std::move(out), {a, b}, [ai, bi](const std::vector<T>& g) {
      if (ai->requires_grad) {
        ai->ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) ai->grad[i] += g[i];
      }
      if (bi->requires_grad) {
        bi->ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) bi->grad[i] += g[i];
      }
    });
  }
  Shape os = detail::broadcast_shape(a.shape(), b.shape(), "add");
  auto sa = detail::broadcast_strides(a.shape(), os);
  auto sb = detail::broadcast_strides(b.shape(), os);
  std::vector<T> out(static_cast<size_t>(shape_numel(os)));
  const T* pa = a.data();
  const T* pb = b.data();
  detail::for_each_broadcast(os, sa, sb,
                             [&](int64_t i, int64_t oa, int64_t ob) { out[static_cast<size_t>(i)] = pa[oa] + pb[ob]; });
  auto ai = a.impl();
  auto bi = b.impl();
  return make_op<T>("add", os, std::move(out), {a, b}, [ai, bi, os, sa, sb](const std::vector<T>& g) {
    if (ai->requires_grad) ai->ensure_grad();
    if (bi->requires_grad) bi->ensure_grad();
    detail::for_each_broadcast(os, sa, sb, [&](int64_t i, int64_t oa, int64_t ob) {
      if (ai->requires_grad) ai->grad[static_cast<size_t>(oa)] += g[static_cast<size_t>(i)];
      if (bi->requires_grad) bi->grad[static_cast<size_t>(ob)] += g[static_cast<size_t>(i)];
    });
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() == b.shape()) {
    std::vector<T> out(a.vec());
    const T* pb = b.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] *= pb[i];
    auto ai = a.impl();
    auto bi = b.impl();
    return make_op<T>("mul", a.shape(), std::move(out), {a, b}, [ai, bi](const std::vector<T>& g) {
      if (ai->requires_grad) {
        ai->ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) ai->grad[i] += g[i] * bi->data[i];
      }
      if (bi->requires_grad) {
        bi->ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) bi->grad[i] += g[i] * ai->data[i];
      }
    });
  }
  Shape os = detail::broadcast_shape(a.shape(), b.shape(), "mul");
  auto sa = detail::broadcast_strides(a.shape(), os);
  auto sb = detail::broadcast_strides(b.shape(), os);
  std::vector<T> out(static_cast<size_t>(shape_numel(os)));
  const T* pa = a.data();
  const T* pb = b.data();
  detail::for_each_broadcast(os, sa, sb,
                             [&](int64_t i, int64_t oa, int64_t ob) { out[static_cast<size_t>(i)] = pa[oa] * pb[ob]; });
  auto ai = a.impl();
  auto bi = b.impl();
  return make_op<T>("mul", os, std::move(out), {a, b}, [ai, bi, os, sa, sb](const std::vector<T>& g) {
    if (ai->requires_grad) ai->ensure_grad();
    if (bi->requires_grad) bi->ensure_grad();
    detail::for_each_broadcast(os, sa, sb, [&](int64_t i, int64_t oa, int64_t ob) {
      size_t iu = static_cast<size_t>(i);
      if (ai->requires_grad) ai->grad[static_cast<size_t>(oa)] += g[iu] * bi->data[static_cast<size_t>(ob)];
      if (bi->requires_grad) bi->grad[static_cast<size_t>(ob)] += g[iu] * ai->data[static_cast<size_t>(oa)];
    });
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return add(a, mul(b, Tensor<T>::scalar(T(-1))));
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> out(x.vec());
  for (auto& v : out) v = v > T(0) ? v : T(0);
  auto xi = x.impl();
  return make_op<T>("relu", x.shape(), std::move(out), {x}, [xi](const std::vector<T>& g) {
    if (!xi->requires_grad) return;
    xi->ensure_grad();
    for (size_t i = 0; i < g.size(); ++i)
      if (xi->data[i] > T(0)) xi->grad[i] += g[i];
  });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  std::vector<T> out(x.vec().size());
  const T* px = x.data();
  // Clamps keep the output strictly inside (0,1) even where the exact value
  // rounds to 0 or 1 at this precision.
  const T lo = std::numeric_limits<T>::min();
  const T hi = T(1) - std::numeric_limits<T>::epsilon() / T(2);
  for (size_t i = 0; i < out.size(); ++i) {
    T v = px[i];
    T s = v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
    out[i] = std::min(hi, std::max(lo, s));
  }
  auto xi = x.impl();
  std::vector<T> saved = out;
  return make_op<T>("sigmoid", x.shape(), std::move(out), {x}, [xi, saved](const std::vector<T>& g) {
    if (!xi->requires_grad) return;
    xi->ensure_grad();
    for (size_t i = 0; i < g.size(); ++i) xi->grad[i] += g[i] * saved[i] * (T(1) - saved[i]);
  });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& x, T s) {
  std::vector<T> out(x.vec());
  for (auto& v : out) v *= s;
  auto xi = x.impl();
  return make_op<T>("mul_scalar", x.shape(), std::move(out), {x}, [xi, s](const std::vector<T>& g) {
    if (!xi->requires_grad) return;
    xi->ensure_grad();
    for (size_t i = 0; i < g.size(); ++i) xi->grad[i] += g[i] * s;
  });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T s) {
  std::vector<T> out(x.vec());
  for (auto& v : out) v += s;
  auto xi = x.impl();
  return make_op<T>("add_scalar", x.shape(), std::move(out), {x}, [xi](const std::vector<T>& g) {
    if (!xi->requires_grad) return;
    xi->ensure_grad();
    for (size_t i = 0; i < g.size(); ++i) xi->grad[i] += g[i];
  });
}

template <typename T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) {
  return add(a, b);
}
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) {
  return mul(a, b);
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  // One extent may be -1 (inferred).
  int64_t known = 1;
  int infer = -1;
  for (size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) {
      if (infer >= 0) throw ShapeError("reshape: more than one inferred extent");
      infer = static_cast<int>(i);
    } else {
      known *= shape[i];
    }
  }
  if (infer >= 0) shape[static_cast<size_t>(infer)] = x.numel() / known;
  if (shape_numel(shape) != x.numel())
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  auto xi = x.impl();
  Shape in_shape = x.shape();
  return make_op<T>("reshape", shape, x.vec(), {x}, [xi](const std::vector<T>& g) {
    if (!xi->requires_grad) return;
    xi->ensure_grad();
    for (size_t i = 0; i < g.size(); ++i) xi->grad[i] += g[i];
  });
}

/// Stack two same-shape tensors along a new trailing axis of extent 2.
template <typename T>
Tensor<T> stack_last(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) throw ShapeError("stack_last: shapes differ");
  Shape os = a.shape();
  os.push_back(2);
  const size_t n = a.vec().size();
  std::vector<T> out(2 * n);
  for (size_t i = 0; i < n; ++i) {
    out[2 * i] = a.data()[i];
    out[2 * i + 1] = b.data()[i];
  }
  auto ai = a.impl();
  auto bi = b.impl();
  return make_op<T>("stack_last", os, std::move(out), {a, b}, [ai, bi, n](const std::vector<T>& g) {
    if (ai->requires_grad) {
      ai->ensure_grad();
      for (size_t i = 0; i < n; ++i) ai->grad[i] += g[2 * i];
    }
    if (bi->requires_grad) {
      bi->ensure_grad();
      for (size_t i = 0; i < n; ++i) bi->grad[i] += g[2 * i + 1];
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
  T s = T(0);
  for (T v : x.vec()) s += v;
  auto xi = x.impl();
  return make_op<T>("sum_all", {1}, {s}, {x}, [xi](const std::vector<T>& g) {
    if (!xi->requires_grad) return;
    xi->ensure_grad();
    for (auto& gv : xi->grad) gv += g[0];
  });
}

/// Sum along one axis; the axis is dropped from the output shape.
template <typename T>
Tensor<T> sum_axis(const Tensor<T>& x, int axis) {
  if (axis < 0 || axis >= x.rank()) throw ShapeError("sum_axis: axis out of range");
  const Shape& s = x.shape();
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[static_cast<size_t>(i)];
  for (int i = axis + 1; i < x.rank(); ++i) inner *= s[static_cast<size_t>(i)];
  const int64_t n = s[static_cast<size_t>(axis)];
  Shape os;
  for (int i = 0; i < x.rank(); ++i)
    if (i != axis) os.push_back(s[static_cast<size_t>(i)]);
  if (os.empty()) os.push_back(1);
  std::vector<T> out(static_cast<size_t>(outer * inner), T(0));
  const T* px = x.data();
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t k = 0; k < n; ++k)
      for (int64_t i = 0; i < inner; ++i) out[static_cast<size_t>(o * inner + i)] += px[(o * n + k) * inner + i];
  auto xi = x.impl();
  return make_op<T>("sum_axis", os, std::move(out), {x}, [xi, outer, inner, n](const std::vector<T>& g) {
    if (!xi->requires_grad) return;
    xi->ensure_grad();
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t k = 0; k < n; ++k)
        for (int64_t i = 0; i < inner; ++i)
          xi->grad[static_cast<size_t>((o * n + k) * inner + i)] += g[static_cast<size_t>(o * inner + i)];
  });
}

// ---------------------------------------------------------------------------
// Matrix products
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2) throw ShapeError("matmul: both inputs must be rank 2");
  const int64_t m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2)
    throw ShapeError("matmul: inner extents disagree, " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<T> out(static_cast<size_t>(m * n), T(0));
  const T* pa = a.data();
  const T* pb = b.data();
  for (int64_t i = 0; i < m; ++i)
    for (int64_t kk = 0; kk < k; ++kk) {
      const T aik = pa[i * k + kk];
      const T* brow = pb + kk * n;
      T* orow = out.data() + i * n;
      for (int64_t j = 0; j < n; ++j) orow[j] += aik * brow[j];
    }
  auto ai = a.impl();
  auto bi = b.impl();
  return make_op<T>("matmul", {m, n}, std::move(out), {a, b}, [ai, bi, m, k, n](const std::vector<T>& g) {
    if (ai->requires_grad) {
      ai->ensure_grad();
      // dA = g . B^T
      for (int64_t i = 0; i < m; ++i)
        for (int64_t kk = 0; kk < k; ++kk) {
          T acc = T(0);
          const T* grow = g.data() + i * n;
          const T* brow = bi->data.data() + kk * n;
          for (int64_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
          ai->grad[static_cast<size_t>(i * k + kk)] += acc;
        }
    }
    if (bi->requires_grad) {
      bi->ensure_grad();
      // dB = A^T . g
      for (int64_t kk = 0; kk < k; ++kk)
        for (int64_t i = 0; i < m; ++i) {
          const T aik = ai->data[static_cast<size_t>(i * k + kk)];
          const T* grow = g.data() + i * n;
          T* brow = bi->grad.data() + kk * n;
          for (int64_t j = 0; j < n; ++j) brow[j] += aik * grow[j];
        }
    }
  });
}

/// Fully connected: y[b,o] = sum_i x[b,i] * w[o,i].
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w) {
  if (x.rank() != 2 || w.rank() != 2) throw ShapeError("linear: inputs must be rank 2");
  const int64_t B = x.dim(0), in = x.dim(1), out_dim = w.dim(0);
  if (w.dim(1) != in)
    throw ShapeError("linear: weight " + shape_str(w.shape()) + " does not accept input " + shape_str(x.shape()));
  std::vector<T> out(static_cast<size_t>(B * out_dim), T(0));
  const T* px = x.data();
  const T* pw = w.data();
  for (int64_t b = 0; b < B; ++b)
    for (int64_t o = 0; o < out_dim; ++o) {
      T acc = T(0);
      const T* xrow = px + b * in;
      const T* wrow = pw + o * in;
      for (int64_t i = 0; i < in; ++i) acc += xrow[i] * wrow[i];
      out[static_cast<size_t>(b * out_dim + o)] = acc;
    }
  auto xi = x.impl();
  auto wi = w.impl();
  return make_op<T>("linear", {B, out_dim}, std::move(out), {x, w},
                    [xi, wi, B, in, out_dim](const std::vector<T>& g) {
                      if (xi->requires_grad) {
                        xi->ensure_grad();
                        for (int64_t b = 0; b < B; ++b)
                          for (int64_t o = 0; o < out_dim; ++o) {
                            const T gv = g[static_cast<size_t>(b * out_dim + o)];
                            const T* wrow = wi->data.data() + o * in;
                            T* xg = xi->grad.data() + b * in;
                            for (int64_t i = 0; i < in; ++i) xg[i] += gv * wrow[i];
                          }
                      }
                      if (wi->requires_grad) {
                        wi->ensure_grad();
                        for (int64_t b = 0; b < B; ++b)
                          for (int64_t o = 0; o < out_dim; ++o) {
                            const T gv = g[static_cast<size_t>(b * out_dim + o)];
                            const T* xrow = xi->data.data() + b * in;
                            T* wg = wi->grad.data() + o * in;
                            for (int64_t i = 0; i < in; ++i) wg[i] += gv * xrow[i];
                          }
                      }
                    });
}

// ---------------------------------------------------------------------------
// Convolutions
// ---------------------------------------------------------------------------

namespace detail {

inline void check_conv_geometry(int64_t H, int64_t W, int64_t k, int stride, int pad, const char* name,
                                int64_t* Ho, int64_t* Wo) {
  if (k % 2 == 0) throw ShapeError(std::string(name) + ": kernel extent must be odd");
  if (stride < 1) throw ShapeError(std::string(name) + ": stride must be >= 1");
  *Ho = (H + 2 * pad - k) / stride + 1;
  *Wo = (W + 2 * pad - k) / stride + 1;
  if (*Ho < 1 || *Wo < 1)
    throw ShapeError(std::string(name) + ": output extent < 1 for input " + std::to_string(H) + "x" +
                     std::to_string(W) + ", kernel " + std::to_string(k));
}

// Output range [lo, hi) for which o*stride + d stays inside [0, n); hoisting
// this out of the inner loops keeps them branch-free and vectorizable.
inline int64_t conv_lo(int64_t d, int stride) {
  return d >= 0 ? 0 : (-d + stride - 1) / stride;
}
inline int64_t conv_hi(int64_t d, int64_t n, int64_t cap, int stride) {
  const int64_t num = n - 1 - d;
  return num < 0 ? 0 : std::min(cap, num / stride + 1);
}

}  // namespace detail

/// Cross-correlation with square odd kernels: x[B,C,H,W] (*) w[O,C,k,k].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, int stride = 1, int pad = 0) {
  if (x.rank() != 4 || w.rank() != 4) throw ShapeError("conv2d: x and w must be rank 4");
  const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t O = w.dim(0), k = w.dim(2);
  if (w.dim(1) != C)
    throw ShapeError("conv2d: weight expects " + std::to_string(w.dim(1)) + " channels, input has " +
                     std::to_string(C));
  if (w.dim(3) != k) throw ShapeError("conv2d: kernel must be square");
  int64_t Ho, Wo;
  detail::check_conv_geometry(H, W, k, stride, pad, "conv2d", &Ho, &Wo);

  std::vector<T> out(static_cast<size_t>(B * O * Ho * Wo), T(0));
  const T* px = x.data();
  const T* pw = w.data();
#pragma omp parallel for schedule(static)
  for (int64_t bo = 0; bo < B * O; ++bo) {
    const int64_t b = bo / O, o = bo % O;
    T* oslab = out.data() + bo * Ho * Wo;
    for (int64_t c = 0; c < C; ++c) {
      const T* xslab = px + (b * C + c) * H * W;
      const T* wslab = pw + (o * C + c) * k * k;
      for (int64_t kh = 0; kh < k; ++kh) {
        const int64_t dh = kh - pad;
        const int64_t oh_lo = detail::conv_lo(dh, stride), oh_hi = detail::conv_hi(dh, H, Ho, stride);
        for (int64_t kw = 0; kw < k; ++kw) {
          const T wv = wslab[kh * k + kw];
          const int64_t dw = kw - pad;
          const int64_t ow_lo = detail::conv_lo(dw, stride), ow_hi = detail::conv_hi(dw, W, Wo, stride);
          for (int64_t oh = oh_lo; oh < oh_hi; ++oh) {
            const T* xrow = xslab + (oh * stride + dh) * W + dw;
            T* orow = oslab + oh * Wo;
            if (stride == 1) {
              for (int64_t ow = ow_lo; ow < ow_hi; ++ow) orow[ow] += wv * xrow[ow];
            } else {
              for (int64_t ow = ow_lo; ow < ow_hi; ++ow) orow[ow] += wv * xrow[ow * stride];
            }
          }
        }
      }
    }
  }

  auto xi = x.impl();
  auto wi = w.impl();
  return make_op<T>(
      "conv2d", {B, O, Ho, Wo}, std::move(out), {x, w},
      [xi, wi, B, C, H, W, O, k, Ho, Wo, stride, pad](const std::vector<T>& g) {
        if (xi->requires_grad) {
          xi->ensure_grad();
#pragma omp parallel for schedule(static)
          for (int64_t bc = 0; bc < B * C; ++bc) {
            const int64_t b = bc / C, c = bc % C;
            T* xg = xi->grad.data() + bc * H * W;
            for (int64_t o = 0; o < O; ++o) {
              const T* gslab = g.data() + (b * O + o) * Ho * Wo;
              const T* wslab = wi->data.data() + (o * C + c) * k * k;
              for (int64_t kh = 0; kh < k; ++kh) {
                const int64_t dh = kh - pad;
                const int64_t oh_lo = detail::conv_lo(dh, stride),
                              oh_hi = detail::conv_hi(dh, H, Ho, stride);
                for (int64_t kw = 0; kw < k; ++kw) {
                  const T wv = wslab[kh * k + kw];
                  const int64_t dw = kw - pad;
                  const int64_t ow_lo = detail::conv_lo(dw, stride),
                                ow_hi = detail::conv_hi(dw, W, Wo, stride);
                  for (int64_t oh = oh_lo; oh < oh_hi; ++oh) {
                    const T* grow = gslab + oh * Wo;
                    T* xgrow = xg + (oh * stride + dh) * W + dw;
                    if (stride == 1) {
                      for (int64_t ow = ow_lo; ow < ow_hi; ++ow) xgrow[ow] += wv * grow[ow];
                    } else {
                      for (int64_t ow = ow_lo; ow < ow_hi; ++ow) xgrow[ow * stride] += wv * grow[ow];
                    }
                  }
                }
              }
            }
          }
        }
        if (wi->requires_grad) {
          wi->ensure_grad();
#pragma omp parallel for schedule(static)
          for (int64_t oc = 0; oc < O * C; ++oc) {
            const int64_t o = oc / C, c = oc % C;
            T* wg = wi->grad.data() + oc * k * k;
            for (int64_t kh = 0; kh < k; ++kh) {
              const int64_t dh = kh - pad;
              const int64_t oh_lo = detail::conv_lo(dh, stride),
                            oh_hi = detail::conv_hi(dh, H, Ho, stride);
              for (int64_t kw = 0; kw < k; ++kw) {
                const int64_t dw = kw - pad;
                const int64_t ow_lo = detail::conv_lo(dw, stride),
                              ow_hi = detail::conv_hi(dw, W, Wo, stride);
                T acc = T(0);
                for (int64_t b = 0; b < B; ++b) {
                  const T* gslab = g.data() + (b * O + o) * Ho * Wo;
                  const T* xslab = xi->data.data() + (b * C + c) * H * W;
                  for (int64_t oh = oh_lo; oh < oh_hi; ++oh) {
                    const T* grow = gslab + oh * Wo;
                    const T* xrow = xslab + (oh * stride + dh) * W + dw;
                    if (stride == 1) {
                      for (int64_t ow = ow_lo; ow < ow_hi; ++ow) acc += grow[ow] * xrow[ow];
                    } else {
                      for (int64_t ow = ow_lo; ow < ow_hi; ++ow) acc += grow[ow] * xrow[ow * stride];
                    }
                  }
                }
                wg[kh * k + kw] += acc;
              }
            }
          }
        }
      });
}

/// Per-channel convolution: x[B,C,H,W] (*) w[C,1,k,k].
template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& x, const Tensor<T>& w, int stride = 1, int pad = 0) {
  if (x.rank() != 4 || w.rank() != 4) throw ShapeError("depthwise_conv2d: x and w must be rank 4");
  const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t k = w.dim(2);
  if (w.dim(0) != C || w.dim(1) != 1)
    throw ShapeError("depthwise_conv2d: weight must be [C,1,k,k] with C=" + std::to_string(C) + ", got " +
                     shape_str(w.shape()));
  if (w.dim(3) != k) throw ShapeError("depthwise_conv2d: kernel must be square");
  int64_t Ho, Wo;
  detail::check_conv_geometry(H, W, k, stride, pad, "depthwise_conv2d", &Ho, &Wo);

  std::vector<T> out(static_cast<size_t>(B * C * Ho * Wo), T(0));
  const T* px = x.data();
  const T* pw = w.data();
#pragma omp parallel for schedule(static)
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const int64_t c = bc % C;
    const T* xslab = px + bc * H * W;
    const T* wslab = pw + c * k * k;
    T* oslab = out.data() + bc * Ho * Wo;
    for (int64_t kh = 0; kh < k; ++kh) {
      const int64_t dh = kh - pad;
      const int64_t oh_lo = detail::conv_lo(dh, stride), oh_hi = detail::conv_hi(dh, H, Ho, stride);
      for (int64_t kw = 0; kw < k; ++kw) {
        const T wv = wslab[kh * k + kw];
        const int64_t dw = kw - pad;
        const int64_t ow_lo = detail::conv_lo(dw, stride), ow_hi = detail::conv_hi(dw, W, Wo, stride);
        for (int64_t oh = oh_lo; oh < oh_hi; ++oh) {
          const T* xrow = xslab + (oh * stride + dh) * W + dw;
          T* orow = oslab + oh * Wo;
          if (stride == 1) {
            for (int64_t ow = ow_lo; ow < ow_hi; ++ow) orow[ow] += wv * xrow[ow];
          } else {
            for (int64_t ow = ow_lo; ow < ow_hi; ++ow) orow[ow] += wv * xrow[ow * stride];
          }
        }
      }
    }
  }

  auto xi = x.impl();
  auto wi = w.impl();
  return make_op<T>(
      "depthwise_conv2d", {B, C, Ho, Wo}, std::move(out), {x, w},
      [xi, wi, B, C, H, W, k, Ho, Wo, stride, pad](const std::vector<T>& g) {
        if (xi->requires_grad) {
          xi->ensure_grad();
#pragma omp parallel for schedule(static)
          for (int64_t bc = 0; bc < B * C; ++bc) {
            const int64_t c = bc % C;
            const T* gslab = g.data() + bc * Ho * Wo;
            const T* wslab = wi->data.data() + c * k * k;
            T* xg = xi->grad.data() + bc * H * W;
            for (int64_t kh = 0; kh < k; ++kh) {
              const int64_t dh = kh - pad;
              const int64_t oh_lo = detail::conv_lo(dh, stride), oh_hi = detail::conv_hi(dh, H, Ho, stride);
              for (int64_t kw = 0; kw < k; ++kw) {
                const T wv = wslab[kh * k + kw];
                const int64_t dw = kw - pad;
                const int64_t ow_lo = detail::conv_lo(dw, stride),
                              ow_hi = detail::conv_hi(dw, W, Wo, stride);
                for (int64_t oh = oh_lo; oh < oh_hi; ++oh) {
                  const T* grow = gslab + oh * Wo;
                  T* xgrow = xg + (oh * stride + dh) * W + dw;
                  if (stride == 1) {
                    for (int64_t ow = ow_lo; ow < ow_hi; ++ow) xgrow[ow] += wv * grow[ow];
                  } else {
                    for (int64_t ow = ow_lo; ow < ow_hi; ++ow) xgrow[ow * stride] += wv * grow[ow];
                  }
                }
              }
            }
          }
        }
        if (wi->requires_grad) {
          wi->ensure_grad();
#pragma omp parallel for schedule(static)
          for (int64_t c = 0; c < C; ++c) {
            T* wg = wi->grad.data() + c * k * k;
            for (int64_t kh = 0; kh < k; ++kh) {
              const int64_t dh = kh - pad;
              const int64_t oh_lo = detail::conv_lo(dh, stride), oh_hi = detail::conv_hi(dh, H, Ho, stride);
              for (int64_t kw = 0; kw < k; ++kw) {
                const int64_t dw = kw - pad;
                const int64_t ow_lo = detail::conv_lo(dw, stride),
                              ow_hi = detail::conv_hi(dw, W, Wo, stride);
                T acc = T(0);
                for (int64_t b = 0; b < B; ++b) {
                  const T* gslab = g.data() + (b * C + c) * Ho * Wo;
                  const T* xslab = xi->data.data() + (b * C + c) * H * W;
                  for (int64_t oh = oh_lo; oh < oh_hi; ++oh) {
                    const T* grow = gslab + oh * Wo;
                    const T* xrow = xslab + (oh * stride + dh) * W + dw;
                    if (stride == 1) {
                      for (int64_t ow = ow_lo; ow < ow_hi; ++ow) acc += grow[ow] * xrow[ow];
                    } else {
                      for (int64_t ow = ow_lo; ow < ow_hi; ++ow) acc += grow[ow] * xrow[ow * stride];
                    }
                  }
                }
                wg[kh * k + kw] += acc;
              }
            }
          }
        }
      });
}

/// Depthwise pass (same-size padding) followed by 1x1 pointwise mixing.
template <typename T>
Tensor<T> depthwise_separable_conv(const Tensor<T>& x, const Tensor<T>& w_depth, const Tensor<T>& w_point) {
  if (w_depth.rank() != 4 || w_depth.dim(1) != 1)
    throw ShapeError("depthwise_separable_conv: w_depth must be [C,1,k,k]");
  if (x.rank() != 4 || w_depth.dim(0) != x.dim(1))
    throw ShapeError("depthwise_separable_conv: one depthwise kernel per input channel required");
  const int pad = static_cast<int>(w_depth.dim(2) / 2);
  Tensor<T> mid = depthwise_conv2d(x, w_depth, 1, pad);
  return conv2d(mid, w_point, 1, 0);
}

// ---------------------------------------------------------------------------
// Batch normalization
//
// Accepts [B,C,H,W] or [B,C]; statistics are taken over every axis except
// the channel axis (dim 1). Train mode uses batch statistics (population
// variance) and folds them into the running buffers with the given momentum;
// eval mode reads the running buffers and mutates nothing.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     Tensor<T>& running_mean, Tensor<T>& running_var, bool train,
                     T momentum = T(0.1), T eps = T(1e-5)) {
  if (x.rank() != 4 && x.rank() != 2) throw ShapeError("batch_norm: input must be rank 2 or 4");
  const int64_t B = x.dim(0), C = x.dim(1);
  const int64_t S = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
  if (gamma.numel() != C || beta.numel() != C || running_mean.numel() != C || running_var.numel() != C)
    throw ShapeError("batch_norm: affine/running extents must equal channel count");
  const int64_t N = B * S;
  if (train && N < 2)
    throw DegenerateBatchError("batch_norm: train mode needs at least 2 elements per channel, got " +
                               std::to_string(N));

  std::vector<T> mean(static_cast<size_t>(C)), var(static_cast<size_t>(C));
  const T* px = x.data();
  if (train) {
    for (int64_t c = 0; c < C; ++c) {
      T m = T(0);
      for (int64_t b = 0; b < B; ++b) {
        const T* row = px + (b * C + c) * S;
        for (int64_t s = 0; s < S; ++s) m += row[s];
      }
      m /= static_cast<T>(N);
      T v = T(0);
      for (int64_t b = 0; b < B; ++b) {
        const T* row = px + (b * C + c) * S;
        for (int64_t s = 0; s < S; ++s) {
          const T d = row[s] - m;
          v += d * d;
        }
      }
      v /= static_cast<T>(N);
      mean[static_cast<size_t>(c)] = m;
      var[static_cast<size_t>(c)] = v;
      running_mean.data()[c] = (T(1) - momentum) * running_mean.data()[c] + momentum * m;
      running_var.data()[c] = (T(1) - momentum) * running_var.data()[c] + momentum * v;
    }
  } else {
    for (int64_t c = 0; c < C; ++c) {
      mean[static_cast<size_t>(c)] = running_mean.data()[c];
      var[static_cast<size_t>(c)] = running_var.data()[c];
    }
  }

  std::vector<T> inv_std(static_cast<size_t>(C));
  for (int64_t c = 0; c < C; ++c) inv_std[static_cast<size_t>(c)] = T(1) / std::sqrt(var[static_cast<size_t>(c)] + eps);

  std::vector<T> xhat(x.vec().size());
  std::vector<T> out(x.vec().size());
  const T* pg = gamma.data();
  const T* pb = beta.data();
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c) {
      const size_t cu = static_cast<size_t>(c);
      const T* row = px + (b * C + c) * S;
      T* hrow = xhat.data() + (b * C + c) * S;
      T* orow = out.data() + (b * C + c) * S;
      for (int64_t s = 0; s < S; ++s) {
        const T h = (row[s] - mean[cu]) * inv_std[cu];
        hrow[s] = h;
        orow[s] = pg[c] * h + pb[c];
      }
    }

  auto xi = x.impl();
  auto gi = gamma.impl();
  auto bi = beta.impl();
  return make_op<T>(
      "batch_norm", x.shape(), std::move(out), {x, gamma, beta},
      [xi, gi, bi, B, C, S, N, train, xhat = std::move(xhat), inv_std = std::move(inv_std)](const std::vector<T>& g) {
        if (gi->requires_grad) gi->ensure_grad();
        if (bi->requires_grad) bi->ensure_grad();
        if (xi->requires_grad) xi->ensure_grad();
        for (int64_t c = 0; c < C; ++c) {
          const size_t cu = static_cast<size_t>(c);
          T sum_g = T(0), sum_gh = T(0);
          for (int64_t b = 0; b < B; ++b) {
            const T* grow = g.data() + (b * C + c) * S;
            const T* hrow = xhat.data() + (b * C + c) * S;
            for (int64_t s = 0; s < S; ++s) {
              sum_g += grow[s];
              sum_gh += grow[s] * hrow[s];
            }
          }
          if (bi->requires_grad) bi->grad[cu] += sum_g;
          if (gi->requires_grad) gi->grad[cu] += sum_gh;
          if (xi->requires_grad) {
            const T gam = gi->data[cu];
            const T is = inv_std[cu];
            if (train) {
              const T nf = static_cast<T>(N);
              for (int64_t b = 0; b < B; ++b) {
                const T* grow = g.data() + (b * C + c) * S;
                const T* hrow = xhat.data() + (b * C + c) * S;
                T* xg = xi->grad.data() + (b * C + c) * S;
                for (int64_t s = 0; s < S; ++s)
                  xg[s] += gam * is / nf * (nf * grow[s] - sum_g - hrow[s] * sum_gh);
              }
            } else {
              for (int64_t b = 0; b < B; ++b) {
                const T* grow = g.data() + (b * C + c) * S;
                T* xg = xi->grad.data() + (b * C + c) * S;
                for (int64_t s = 0; s < S; ++s) xg[s] += gam * is * grow[s];
              }
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Pooling and resampling
// ---------------------------------------------------------------------------

enum class PoolStat { kMean, kStd };

/// Per-(batch,channel) spatial statistic; std is sqrt(population var + 1e-5).
template <typename T>
Tensor<T> global_pool(const Tensor<T>& x, PoolStat stat) {
  if (x.rank() != 4) throw ShapeError("global_pool: input must be [B,C,H,W]");
  const int64_t B = x.dim(0), C = x.dim(1), S = x.dim(2) * x.dim(3);
  if (S < 1) throw ShapeError("global_pool: empty spatial extent");
  const T eps = T(1e-5);
  std::vector<T> out(static_cast<size_t>(B * C));
  std::vector<T> means(static_cast<size_t>(B * C));
  const T* px = x.data();
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const T* row = px + bc * S;
    T m = T(0);
    for (int64_t s = 0; s < S; ++s) m += row[s];
    m /= static_cast<T>(S);
    means[static_cast<size_t>(bc)] = m;
    if (stat == PoolStat::kMean) {
      out[static_cast<size_t>(bc)] = m;
    } else {
      T v = T(0);
      for (int64_t s = 0; s < S; ++s) {
        const T d = row[s] - m;
        v += d * d;
      }
      v /= static_cast<T>(S);
      out[static_cast<size_t>(bc)] = std::sqrt(v + eps);
    }
  }
  auto xi = x.impl();
  std::vector<T> saved_out = stat == PoolStat::kStd ? out : std::vector<T>();
  return make_op<T>("global_pool", {B, C}, std::move(out), {x},
                    [xi, B, C, S, stat, means = std::move(means), saved_out = std::move(saved_out)](
                        const std::vector<T>& g) {
                      if (!xi->requires_grad) return;
                      xi->ensure_grad();
                      for (int64_t bc = 0; bc < B * C; ++bc) {
                        const size_t bu = static_cast<size_t>(bc);
                        const T gv = g[bu];
                        T* xg = xi->grad.data() + bc * S;
                        if (stat == PoolStat::kMean) {
                          const T gs = gv / static_cast<T>(S);
                          for (int64_t s = 0; s < S; ++s) xg[s] += gs;
                        } else {
                          const T* row = xi->data.data() + bc * S;
                          const T denom = static_cast<T>(S) * saved_out[bu];
                          for (int64_t s = 0; s < S; ++s) xg[s] += gv * (row[s] - means[bu]) / denom;
                        }
                      }
                    });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  if (axis < 0 || axis >= x.rank()) throw ShapeError("softmax: axis out of range");
  const Shape& s = x.shape();
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[static_cast<size_t>(i)];
  for (int i = axis + 1; i < x.rank(); ++i) inner *= s[static_cast<size_t>(i)];
  const int64_t n = s[static_cast<size_t>(axis)];
  std::vector<T> out(x.vec().size());
  const T* px = x.data();
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t i = 0; i < inner; ++i) {
      const int64_t base = o * n * inner + i;
      T mx = px[base];
      for (int64_t j = 1; j < n; ++j) mx = std::max(mx, px[base + j * inner]);
      T sum = T(0);
      for (int64_t j = 0; j < n; ++j) {
        const T e = std::exp(px[base + j * inner] - mx);
        out[static_cast<size_t>(base + j * inner)] = e;
        sum += e;
      }
      for (int64_t j = 0; j < n; ++j) out[static_cast<size_t>(base + j * inner)] /= sum;
    }
  auto xi = x.impl();
  std::vector<T> saved = out;
  return make_op<T>("softmax", x.shape(), std::move(out), {x},
                    [xi, outer, inner, n, saved = std::move(saved)](const std::vector<T>& g) {
                      if (!xi->requires_grad) return;
                      xi->ensure_grad();
                      for (int64_t o = 0; o < outer; ++o)
                        for (int64_t i = 0; i < inner; ++i) {
                          const int64_t base = o * n * inner + i;
                          T dot = T(0);
                          for (int64_t j = 0; j < n; ++j)
                            dot += g[static_cast<size_t>(base + j * inner)] * saved[static_cast<size_t>(base + j * inner)];
                          for (int64_t j = 0; j < n; ++j) {
                            const size_t u = static_cast<size_t>(base + j * inner);
                            xi->grad[u] += saved[u] * (g[u] - dot);
                          }
                        }
                    });
}

namespace detail {
// PyTorch-style reflection (edge sample not repeated); valid for extent >= 2.
inline int64_t reflect_index(int64_t i, int64_t n) {
  if (i < 0) return -i;
  if (i >= n) return 2 * n - 2 - i;
  return i;
}
}  // namespace detail

/// Anti-alias downsample: fixed [1,2,1]x[1,2,1]/16 depthwise kernel,
/// stride 2, reflect padding. Output is ceil(H/2) x ceil(W/2).
template <typename T>
Tensor<T> blur_pool(const Tensor<T>& x) {
  if (x.rank() != 4) throw ShapeError("blur_pool: input must be [B,C,H,W]");
  const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H < 2 || W < 2) throw ShapeError("blur_pool: spatial extents must be >= 2");
  const int64_t Ho = (H + 1) / 2, Wo = (W + 1) / 2;
  static constexpr T kTap[3] = {T(0.25), T(0.5), T(0.25)};
  std::vector<T> out(static_cast<size_t>(B * C * Ho * Wo), T(0));
  const T* px = x.data();
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const T* xslab = px + bc * H * W;
    T* oslab = out.data() + bc * Ho * Wo;
    for (int64_t oh = 0; oh < Ho; ++oh)
      for (int64_t ow = 0; ow < Wo; ++ow) {
        T acc = T(0);
        for (int dy = -1; dy <= 1; ++dy) {
          const int64_t ih = detail::reflect_index(2 * oh + dy, H);
          for (int dx = -1; dx <= 1; ++dx) {
            const int64_t iw = detail::reflect_index(2 * ow + dx, W);
            acc += kTap[dy + 1] * kTap[dx + 1] * xslab[ih * W + iw];
          }
        }
        oslab[oh * Wo + ow] = acc;
      }
  }
  auto xi = x.impl();
  return make_op<T>("blur_pool", {B, C, Ho, Wo}, std::move(out), {x},
                    [xi, B, C, H, W, Ho, Wo](const std::vector<T>& g) {
                      if (!xi->requires_grad) return;
                      xi->ensure_grad();
                      static constexpr T kTap[3] = {T(0.25), T(0.5), T(0.25)};
                      for (int64_t bc = 0; bc < B * C; ++bc) {
                        const T* gslab = g.data() + bc * Ho * Wo;
                        T* xg = xi->grad.data() + bc * H * W;
                        for (int64_t oh = 0; oh < Ho; ++oh)
                          for (int64_t ow = 0; ow < Wo; ++ow) {
                            const T gv = gslab[oh * Wo + ow];
                            for (int dy = -1; dy <= 1; ++dy) {
                              const int64_t ih = detail::reflect_index(2 * oh + dy, H);
                              for (int dx = -1; dx <= 1; ++dx) {
                                const int64_t iw = detail::reflect_index(2 * ow + dx, W);
                                xg[ih * W + iw] += kTap[dy + 1] * kTap[dx + 1] * gv;
                              }
                            }
                          }
                      }
                    });
}

/// Lossless [B,C,H,W] -> [B,C*b*b,H/b,W/b] rearrangement.
/// out[b, c*b*b + by*b + bx, h, w] = in[b, c, h*b+by, w*b+bx]
template <typename T>
Tensor<T> space_to_depth(const Tensor<T>& x, int block = 4) {
  if (x.rank() != 4) throw ShapeError("space_to_depth: input must be [B,C,H,W]");
  const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), bl = block;
  if (bl < 1 || H % bl != 0 || W % bl != 0)
    throw ShapeError("space_to_depth: spatial extents " + std::to_string(H) + "x" + std::to_string(W) +
                     " not divisible by block " + std::to_string(bl));
  const int64_t Ho = H / bl, Wo = W / bl, Co = C * bl * bl;
  std::vector<T> out(x.vec().size());
  const T* px = x.data();
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t by = 0; by < bl; ++by)
        for (int64_t bx = 0; bx < bl; ++bx) {
          const int64_t co = c * bl * bl + by * bl + bx;
          for (int64_t h = 0; h < Ho; ++h) {
            const T* xrow = px + ((b * C + c) * H + h * bl + by) * W + bx;
            T* orow = out.data() + ((b * Co + co) * Ho + h) * Wo;
            for (int64_t w = 0; w < Wo; ++w) orow[w] = xrow[w * bl];
          }
        }
  auto xi = x.impl();
  return make_op<T>("space_to_depth", {B, Co, Ho, Wo}, std::move(out), {x},
                    [xi, B, C, H, W, bl, Ho, Wo, Co](const std::vector<T>& g) {
                      if (!xi->requires_grad) return;
                      xi->ensure_grad();
                      for (int64_t b = 0; b < B; ++b)
                        for (int64_t c = 0; c < C; ++c)
                          for (int64_t by = 0; by < bl; ++by)
                            for (int64_t bx = 0; bx < bl; ++bx) {
                              const int64_t co = c * bl * bl + by * bl + bx;
                              for (int64_t h = 0; h < Ho; ++h) {
                                const T* grow = g.data() + ((b * Co + co) * Ho + h) * Wo;
                                T* xrow = xi->grad.data() + ((b * C + c) * H + h * bl + by) * W + bx;
                                for (int64_t w = 0; w < Wo; ++w) xrow[w * bl] += grow[w];
                              }
                            }
                    });
}

/// Inverse of space_to_depth.
template <typename T>
Tensor<T> depth_to_space(const Tensor<T>& x, int block = 4) {
  if (x.rank() != 4) throw ShapeError("depth_to_space: input must be [B,C,H,W]");
  const int64_t B = x.dim(0), Ci = x.dim(1), Hi = x.dim(2), Wi = x.dim(3), bl = block;
  if (bl < 1 || Ci % (bl * bl) != 0)
    throw ShapeError("depth_to_space: channel extent not divisible by block^2");
  const int64_t C = Ci / (bl * bl), H = Hi * bl, W = Wi * bl;
  std::vector<T> out(x.vec().size());
  const T* px = x.data();
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t by = 0; by < bl; ++by)
        for (int64_t bx = 0; bx < bl; ++bx) {
          const int64_t ci = c * bl * bl + by * bl + bx;
          for (int64_t h = 0; h < Hi; ++h) {
            const T* xrow = px + ((b * Ci + ci) * Hi + h) * Wi;
            T* orow = out.data() + ((b * C + c) * H + h * bl + by) * W + bx;
            for (int64_t w = 0; w < Wi; ++w) orow[w * bl] = xrow[w];
          }
        }
  auto xi = x.impl();
  return make_op<T>("depth_to_space", {B, C, H, W}, std::move(out), {x},
                    [xi, B, C, Hi, Wi, bl, Ci](const std::vector<T>& g) {
                      if (!xi->requires_grad) return;
                      xi->ensure_grad();
                      const int64_t H = Hi * bl, W = Wi * bl;
                      for (int64_t b = 0; b < B; ++b)
                        for (int64_t c = 0; c < C; ++c)
                          for (int64_t by = 0; by < bl; ++by)
                            for (int64_t bx = 0; bx < bl; ++bx) {
                              const int64_t ci = c * bl * bl + by * bl + bx;
                              for (int64_t h = 0; h < Hi; ++h) {
                                T* xrow = xi->grad.data() + ((b * Ci + ci) * Hi + h) * Wi;
                                const T* grow = g.data() + ((b * C + c) * H + h * bl + by) * W + bx;
                                for (int64_t w = 0; w < Wi; ++w) xrow[w] += grow[w * bl];
                              }
                            }
                    });
}

}  // namespace fetr

#endif  // FETR_TENSOR_HPP
