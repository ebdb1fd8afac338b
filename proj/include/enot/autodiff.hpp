#pragma once

// Minimal tape-free reverse-mode automatic differentiation over dense,
// row-major tensors. Every op returns a new immutable tensor; when any input
// tracks gradients the result keeps shared ownership of its inputs together
// with a backward rule, so the graph lives exactly as long as its outputs.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace enot::ad {

using Shape = std::vector<std::size_t>;

// Tensor storage. Eigen picks its vectorized code paths from the runtime
// alignment of a buffer, so every buffer gets the same (maximal) alignment to
// keep reductions bitwise reproducible.
template <class T>
using Buffer = std::vector<T, Eigen::aligned_allocator<T>>;

inline std::size_t numel_of(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {
inline thread_local int no_grad_depth = 0;
inline thread_local int strict_depth = 0;

[[noreturn]] inline void shape_fail(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}
}  // namespace detail

inline bool grad_enabled() { return detail::no_grad_depth == 0; }
inline bool strict_finite() { return detail::strict_depth > 0; }

// Disables graph construction in the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard() { ++detail::no_grad_depth; }
  ~NoGradGuard() { --detail::no_grad_depth; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// Makes every op throw NonFiniteError when it produces NaN or Inf.
class StrictFiniteGuard {
 public:
  explicit StrictFiniteGuard(bool enable = true) : enabled_(enable) {
    if (enabled_) ++detail::strict_depth;
  }
  ~StrictFiniteGuard() {
    if (enabled_) --detail::strict_depth;
  }
  StrictFiniteGuard(const StrictFiniteGuard&) = delete;
  StrictFiniteGuard& operator=(const StrictFiniteGuard&) = delete;

 private:
  bool enabled_;
};

template <class T>
struct Node {
  Shape shape;
  Buffer<T> value;
  Buffer<T> grad;  // empty until a backward pass reaches this node
  bool requires_grad = false;
  bool is_leaf = true;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  Buffer<T>& grad_buffer() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad;
  }
};

template <class T>
class BasicTensor {
 public:
  using Scalar = T;
  using NodePtr = std::shared_ptr<Node<T>>;

  BasicTensor() : BasicTensor(Shape{}, Buffer<T>{T(0)}) {}

  BasicTensor(Shape shape, const std::vector<T>& data, bool requires_grad = false)
      : BasicTensor(std::move(shape), Buffer<T>(data.begin(), data.end()), requires_grad) {}
  BasicTensor(Shape shape, std::initializer_list<T> data, bool requires_grad = false)
      : BasicTensor(std::move(shape), Buffer<T>(data), requires_grad) {}
  BasicTensor(Shape shape, Buffer<T> data, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
    if (numel_of(shape) != data.size()) {
      throw ShapeError("tensor: shape " + shape_str(shape) + " does not match " + std::to_string(data.size()) +
                       " values");
    }
    node_->shape = std::move(shape);
    node_->value = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static BasicTensor zeros(Shape shape, bool requires_grad = false) {
    auto n = numel_of(shape);
    return BasicTensor(std::move(shape), Buffer<T>(n, T(0)), requires_grad);
  }
  static BasicTensor full(Shape shape, T v) {
    auto n = numel_of(shape);
    return BasicTensor(std::move(shape), Buffer<T>(n, v));
  }
  static BasicTensor scalar(T v, bool requires_grad = false) { return BasicTensor(Shape{}, {v}, requires_grad); }
  static BasicTensor vector(std::vector<T> v, bool requires_grad = false) {
    Shape s{v.size()};
    return BasicTensor(std::move(s), std::move(v), requires_grad);
  }

  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }
  std::span<const T> data() const { return node_->value; }
  T operator[](std::size_t i) const { return node_->value[i]; }
  T item() const {
    if (numel() != 1) throw ShapeError("item: tensor " + shape_str(shape()) + " is not a scalar");
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->is_leaf; }
  const char* op() const { return node_->op; }

  // Gradient accumulated by backward(); empty span if none reached this tensor.
  std::span<const T> grad() const { return node_->grad; }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  void zero_grad() { node_->grad.clear(); }

  // Leaf-only in-place update, used by optimizers between backward passes.
  std::span<T> mutable_data() {
    if (!node_->is_leaf) throw std::logic_error("mutable_data: only leaf tensors may be modified in place");
    return node_->value;
  }

  BasicTensor detach() const { return BasicTensor(node_->shape, node_->value, false); }

  // Seeds d(this)/d(this) = 1 and propagates to every reachable node once,
  // in reverse topological order. Leaf gradients accumulate across calls until
  // zero_grad(); interior gradients are recomputed on every call.
  void backward() const;

  const NodePtr& node() const { return node_; }
  explicit BasicTensor(NodePtr node) : node_(std::move(node)) {}

 private:
  NodePtr node_;
};

using Tensor = BasicTensor<double>;
using TensorF = BasicTensor<float>;

namespace detail {

template <class T>
void check_finite(const char* op, const Buffer<T>& v) {
  if (!strict_finite()) return;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      throw NonFiniteError(std::string(op) + ": non-finite value at flat index " + std::to_string(i));
    }
  }
}

// Builds the result node; attaches inputs and the backward rule only when an
// input tracks gradients and graph construction is enabled.
template <class T>
BasicTensor<T> make_result(const char* op, Shape shape, Buffer<T> value,
                           std::vector<std::shared_ptr<Node<T>>> inputs, std::function<void(Node<T>&)> backward) {
  check_finite(op, value);
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  bool track = grad_enabled() && std::any_of(inputs.begin(), inputs.end(), [](const auto& n) {
                 return n->requires_grad;
               });
  if (track) {
    node->requires_grad = true;
    node->is_leaf = false;
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
  }
  return BasicTensor<T>(std::move(node));
}

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapC = Eigen::Map<const RowMat<T>>;
template <class T>
using Map = Eigen::Map<RowMat<T>>;

inline Shape broadcast_shape(const char* op, const Shape& a, const Shape& b) {
  std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1) shape_fail(op, a, b);
    out[i] = std::max(da, db);
  }
  return out;
}

// Strides of `in` viewed against `out` with trailing alignment; broadcast axes get stride 0.
inline std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<std::size_t> strides(out.size(), 0);
  std::size_t offset = out.size() - in.size();
  std::size_t s = 1;
  for (std::size_t i = in.size(); i-- > 0;) {
    strides[i + offset] = in[i] == 1 ? 0 : s;
    s *= in[i];
  }
  return strides;
}

// Calls fn(out_index, a_index, b_index) for every output element in row-major order.
template <class Fn>
void for_each_broadcast(const Shape& a, const Shape& b, const Shape& out, Fn&& fn) {
  std::size_t n = numel_of(out);
  if (a == out && b == out) {
    for (std::size_t i = 0; i < n; ++i) fn(i, i, i);
    return;
  }
  std::size_t nb = numel_of(b);
  std::size_t na = numel_of(a);
  if (a == out && nb == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i, i, std::size_t{0});
    return;
  }
  if (a == out && b.size() <= a.size() && std::equal(b.begin(), b.end(), a.end() - b.size())) {
    for (std::size_t i = 0; i < n; ++i) fn(i, i, i % nb);
    return;
  }
  if (b == out && na == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i, std::size_t{0}, i);
    return;
  }
  auto sa = broadcast_strides(a, out);
  auto sb = broadcast_strides(b, out);
  std::vector<std::size_t> idx(out.size(), 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t i = 0; i < n; ++i) {
    fn(i, ia, ib);
    for (std::size_t ax = out.size(); ax-- > 0;) {
      ++idx[ax];
      ia += sa[ax];
      ib += sb[ax];
      if (idx[ax] < out[ax]) break;
      ia -= sa[ax] * out[ax];
      ib -= sb[ax] * out[ax];
      idx[ax] = 0;
    }
  }
}

template <class T, class Fwd, class DA, class DB>
BasicTensor<T> binary_broadcast(const char* op, const BasicTensor<T>& a, const BasicTensor<T>& b, Fwd fwd, DA da,
                                DB db) {
  Shape out = broadcast_shape(op, a.shape(), b.shape());
  Buffer<T> v(numel_of(out));
  const auto& av = a.node()->value;
  const auto& bv = b.node()->value;
  for_each_broadcast(a.shape(), b.shape(), out, [&](std::size_t i, std::size_t ia, std::size_t ib) {
    v[i] = fwd(av[ia], bv[ib]);
  });
  return make_result<T>(op, out, std::move(v), {a.node(), b.node()}, [da, db](Node<T>& self) {
    auto& na = *self.inputs[0];
    auto& nb = *self.inputs[1];
    Buffer<T>* ga = na.requires_grad ? &na.grad_buffer() : nullptr;
    Buffer<T>* gb = nb.requires_grad ? &nb.grad_buffer() : nullptr;
    for_each_broadcast(na.shape, nb.shape, self.shape, [&](std::size_t i, std::size_t ia, std::size_t ib) {
      T g = self.grad[i];
      if (ga) (*ga)[ia] += da(g, na.value[ia], nb.value[ib]);
      if (gb) (*gb)[ib] += db(g, na.value[ia], nb.value[ib]);
    });
  });
}

template <class T, class Fwd, class Deriv>
BasicTensor<T> unary(const char* op, const BasicTensor<T>& a, Fwd fwd, Deriv deriv) {
  const auto& av = a.node()->value;
  Buffer<T> v(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) v[i] = fwd(av[i]);
  return make_result<T>(op, a.shape(), std::move(v), {a.node()}, [deriv](Node<T>& self) {
    auto& in = *self.inputs[0];
    auto& g = in.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * deriv(in.value[i], self.value[i]);
  });
}

}  // namespace detail

template <class T>
void BasicTensor<T>::backward() const {
  if (numel() != 1) throw ShapeError("backward: loss must be a scalar, got " + shape_str(shape()));
  if (!node_->requires_grad) return;

  // Iterative post-order DFS; unrolled simulations are too deep for recursion.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      Node<T>* child = n->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.push_back({child, 0});
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  for (Node<T>* n : order) {
    if (!n->is_leaf) n->grad.assign(n->value.size(), T(0));
  }
  node_->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (!n->is_leaf && n->backward) n->backward(*n);
  }
}

// ---------------------------------------------------------------------------
// Primitive ops

template <class T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) detail::shape_fail("matmul", a.shape(), b.shape());
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Buffer<T> v(m * n);
  detail::Map<T>(v.data(), m, n).noalias() =
      detail::MapC<T>(a.node()->value.data(), m, k) * detail::MapC<T>(b.node()->value.data(), k, n);
  return detail::make_result<T>("matmul", Shape{m, n}, std::move(v), {a.node(), b.node()}, [m, k, n](Node<T>& self) {
    auto& na = *self.inputs[0];
    auto& nb = *self.inputs[1];
    detail::MapC<T> g(self.grad.data(), m, n);
    if (na.requires_grad) {
      detail::Map<T>(na.grad_buffer().data(), m, k).noalias() += g * detail::MapC<T>(nb.value.data(), k, n).transpose();
    }
    if (nb.requires_grad) {
      detail::Map<T>(nb.grad_buffer().data(), k, n).noalias() += detail::MapC<T>(na.value.data(), m, k).transpose() * g;
    }
  });
}

// Affine map x W^T + b for x [B,in], W [out,in], b [out]; one fused node.
template <class T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b) {
  if (x.rank() != 2 || w.rank() != 2 || b.rank() != 1 || x.dim(1) != w.dim(1) || b.dim(0) != w.dim(0)) {
    throw ShapeError("linear: incompatible shapes x" + shape_str(x.shape()) + " W" + shape_str(w.shape()) + " b" +
                     shape_str(b.shape()));
  }
  const std::size_t rows = x.dim(0), in = x.dim(1), out = w.dim(0);
  Buffer<T> v(rows * out);
  detail::Map<T> y(v.data(), rows, out);
  y.noalias() = detail::MapC<T>(x.node()->value.data(), rows, in) *
                detail::MapC<T>(w.node()->value.data(), out, in).transpose();
  y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(b.node()->value.data(), out);
  return detail::make_result<T>(
      "linear", Shape{rows, out}, std::move(v), {x.node(), w.node(), b.node()}, [rows, in, out](Node<T>& self) {
        auto& nx = *self.inputs[0];
        auto& nw = *self.inputs[1];
        auto& nb = *self.inputs[2];
        detail::MapC<T> g(self.grad.data(), rows, out);
        if (nx.requires_grad) {
          detail::Map<T>(nx.grad_buffer().data(), rows, in).noalias() += g * detail::MapC<T>(nw.value.data(), out, in);
        }
        if (nw.requires_grad) {
          detail::Map<T>(nw.grad_buffer().data(), out, in).noalias() +=
              g.transpose() * detail::MapC<T>(nx.value.data(), rows, in);
        }
        if (nb.requires_grad) {
          Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(nb.grad_buffer().data(), out) += g.colwise().sum();
        }
      });
}

template <class T>
BasicTensor<T> transpose(const BasicTensor<T>& a) {
  if (a.rank() != 2) throw ShapeError("transpose: expected rank 2, got " + shape_str(a.shape()));
  const std::size_t r = a.dim(0), c = a.dim(1);
  Buffer<T> v(r * c);
  detail::Map<T>(v.data(), c, r) = detail::MapC<T>(a.node()->value.data(), r, c).transpose();
  return detail::make_result<T>("transpose", Shape{c, r}, std::move(v), {a.node()}, [r, c](Node<T>& self) {
    auto& in = *self.inputs[0];
    detail::Map<T>(in.grad_buffer().data(), r, c) += detail::MapC<T>(self.grad.data(), c, r).transpose();
  });
}

template <class T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return detail::binary_broadcast(
      "add", a, b, [](T x, T y) { return x + y; }, [](T g, T, T) { return g; }, [](T g, T, T) { return g; });
}

template <class T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return detail::binary_broadcast(
      "sub", a, b, [](T x, T y) { return x - y; }, [](T g, T, T) { return g; }, [](T g, T, T) { return -g; });
}

template <class T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return detail::binary_broadcast(
      "mul", a, b, [](T x, T y) { return x * y; }, [](T g, T, T y) { return g * y; },
      [](T g, T x, T) { return g * x; });
}

template <class T>
BasicTensor<T> scale(const BasicTensor<T>& a, T s) {
  return detail::unary(
      "scale", a, [s](T x) { return s * x; }, [s](T, T) { return s; });
}

template <class T>
BasicTensor<T> relu(const BasicTensor<T>& a) {
  return detail::unary(
      "relu", a, [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <class T>
BasicTensor<T> leaky_relu(const BasicTensor<T>& a, T slope = T(0.01)) {
  return detail::unary(
      "leaky_relu", a, [slope](T x) { return x > T(0) ? x : slope * x; },
      [slope](T x, T) { return x > T(0) ? T(1) : slope; });
}

template <class T>
BasicTensor<T> square(const BasicTensor<T>& a) {
  return detail::unary(
      "square", a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

// Sum of all elements; result has shape [].
template <class T>
BasicTensor<T> sum(const BasicTensor<T>& a) {
  T s = T(0);
  for (T x : a.data()) s += x;
  return detail::make_result<T>("sum", Shape{}, {s}, {a.node()}, [](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (auto& x : g) x += self.grad[0];
  });
}

// Sum over one axis; the axis is removed from the result shape.
template <class T>
BasicTensor<T> sum(const BasicTensor<T>& a, std::size_t axis) {
  if (axis >= a.rank()) throw ShapeError("sum: axis " + std::to_string(axis) + " out of range for " + shape_str(a.shape()));
  const auto& s = a.shape();
  std::size_t outer = 1, inner = 1, len = s[axis];
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  Shape out_shape;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (i != axis) out_shape.push_back(s[i]);
  Buffer<T> v(outer * inner, T(0));
  const auto& av = a.node()->value;
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t l = 0; l < len; ++l)
      for (std::size_t i = 0; i < inner; ++i) v[o * inner + i] += av[(o * len + l) * inner + i];
  return detail::make_result<T>("sum_axis", out_shape, std::move(v), {a.node()}, [outer, len, inner](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t l = 0; l < len; ++l)
        for (std::size_t i = 0; i < inner; ++i) g[(o * len + l) * inner + i] += self.grad[o * inner + i];
  });
}

template <class T>
BasicTensor<T> mean(const BasicTensor<T>& a) {
  if (a.numel() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <class T>
BasicTensor<T> mean(const BasicTensor<T>& a, std::size_t axis) {
  if (axis >= a.rank() || a.dim(axis) == 0) throw ShapeError("mean: bad axis for " + shape_str(a.shape()));
  return scale(sum(a, axis), T(1) / static_cast<T>(a.dim(axis)));
}

// Concatenation along the last axis; all other dimensions must agree.
template <class T>
BasicTensor<T> concat(const std::vector<BasicTensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Shape base = parts[0].shape();
  if (base.empty()) throw ShapeError("concat: scalar inputs");
  std::size_t rows = numel_of(base) / base.back();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    if (s.size() != base.size() || !std::equal(s.begin(), s.end() - 1, base.begin())) {
      detail::shape_fail("concat", base, s);
    }
    widths.push_back(s.back());
    total += s.back();
  }
  Buffer<T> v(rows * total);
  std::size_t off = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto& pv = parts[p].node()->value;
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(pv.begin() + r * widths[p], widths[p], v.begin() + r * total + off);
    off += widths[p];
  }
  Shape out = base;
  out.back() = total;
  std::vector<std::shared_ptr<Node<T>>> inputs;
  for (const auto& p : parts) inputs.push_back(p.node());
  return detail::make_result<T>("concat", out, std::move(v), std::move(inputs),
                                [rows, total, widths](Node<T>& self) {
                                  std::size_t o = 0;
                                  for (std::size_t p = 0; p < widths.size(); ++p) {
                                    auto& in = *self.inputs[p];
                                    if (in.requires_grad) {
                                      auto& g = in.grad_buffer();
                                      for (std::size_t r = 0; r < rows; ++r)
                                        for (std::size_t c = 0; c < widths[p]; ++c)
                                          g[r * widths[p] + c] += self.grad[r * total + o + c];
                                    }
                                    o += widths[p];
                                  }
                                });
}

// Elements [begin, end) along `axis`.
template <class T>
BasicTensor<T> slice(const BasicTensor<T>& a, std::size_t axis, std::size_t begin, std::size_t end) {
  if (axis >= a.rank() || begin > end || end > a.dim(axis)) {
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) + ") on axis " +
                     std::to_string(axis) + " invalid for " + shape_str(a.shape()));
  }
  const auto& s = a.shape();
  std::size_t outer = 1, inner = 1, len = s[axis], w = end - begin;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  Shape out = s;
  out[axis] = w;
  Buffer<T> v(outer * w * inner);
  const auto& av = a.node()->value;
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(av.begin() + (o * len + begin) * inner, w * inner, v.begin() + o * w * inner);
  return detail::make_result<T>("slice", out, std::move(v), {a.node()}, [outer, len, inner, begin, w](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t j = 0; j < w * inner; ++j) g[(o * len + begin) * inner + j] += self.grad[o * w * inner + j];
  });
}

template <class T>
BasicTensor<T> reshape(const BasicTensor<T>& a, Shape shape) {
  if (numel_of(shape) != a.numel()) detail::shape_fail("reshape", a.shape(), shape);
  return detail::make_result<T>("reshape", std::move(shape), a.node()->value, {a.node()}, [](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

template <class T>
BasicTensor<T> operator+(const BasicTensor<T>& a, const BasicTensor<T>& b) { return add(a, b); }
template <class T>
BasicTensor<T> operator-(const BasicTensor<T>& a, const BasicTensor<T>& b) { return sub(a, b); }
template <class T>
BasicTensor<T> operator*(const BasicTensor<T>& a, const BasicTensor<T>& b) { return mul(a, b); }
template <class T>
BasicTensor<T> operator*(T s, const BasicTensor<T>& a) { return scale(a, s); }

// Row-wise squared Euclidean norm of a [B,D] tensor, shape [B].
template <class T>
BasicTensor<T> row_sq_norm(const BasicTensor<T>& a) {
  return sum(square(a), a.rank() - 1);
}

// ---------------------------------------------------------------------------
// Finite-difference checking

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  bool finite = true;
};

namespace detail {
inline void record(GradCheckResult& r, std::size_t i, double analytic, double numeric) {
  if (!std::isfinite(analytic) || !std::isfinite(numeric)) {
    r.finite = false;
    r.max_rel_error = std::numeric_limits<double>::infinity();
    r.worst_index = i;
    return;
  }
  double e = std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric));
  if (e > r.max_rel_error) {
    r.max_rel_error = e;
    r.worst_index = i;
  }
}
}  // namespace detail

// max_i |analytic_i - central_i| / max(1, |central_i|) for a scalar function of one tensor.
template <class T, class Fn>
GradCheckResult grad_check(Fn&& fn, const BasicTensor<T>& point, T step) {
  BasicTensor<T> x(point.shape(), std::vector<T>(point.data().begin(), point.data().end()), true);
  fn(x).backward();
  std::vector<T> analytic = x.has_grad() ? std::vector<T>(x.grad().begin(), x.grad().end())
                                         : std::vector<T>(x.numel(), T(0));
  GradCheckResult r;
  NoGradGuard ng;
  std::vector<T> base(point.data().begin(), point.data().end());
  for (std::size_t i = 0; i < base.size(); ++i) {
    auto plus = base, minus = base;
    plus[i] += step;
    minus[i] -= step;
    T fp = fn(BasicTensor<T>(point.shape(), plus)).item();
    T fm = fn(BasicTensor<T>(point.shape(), minus)).item();
    detail::record(r, i, analytic[i], (fp - fm) / (T(2) * step));
  }
  return r;
}

// Same check over a set of leaf parameters perturbed in place. `loss` rebuilds
// the graph on each call. Returns the max error over all checked coordinates;
// `max_coords_per_leaf` bounds the work on wide layers (0 = all).
template <class T, class Fn>
GradCheckResult grad_check_leaves(Fn&& loss, std::vector<BasicTensor<T>> leaves, T step,
                                  std::size_t max_coords_per_leaf = 0) {
  for (auto& l : leaves) l.zero_grad();
  loss().backward();
  std::vector<std::vector<T>> analytic;
  for (auto& l : leaves) {
    analytic.push_back(l.has_grad() ? std::vector<T>(l.grad().begin(), l.grad().end())
                                    : std::vector<T>(l.numel(), T(0)));
  }
  GradCheckResult r;
  NoGradGuard ng;
  std::size_t flat = 0;
  for (std::size_t k = 0; k < leaves.size(); ++k) {
    auto data = leaves[k].mutable_data();
    std::size_t n = data.size();
    std::size_t stride = (max_coords_per_leaf == 0 || n <= max_coords_per_leaf) ? 1 : n / max_coords_per_leaf;
    for (std::size_t i = 0; i < n; i += stride) {
      T orig = data[i];
      data[i] = orig + step;
      T fp = loss().item();
      data[i] = orig - step;
      T fm = loss().item();
      data[i] = orig;
      detail::record(r, flat + i, analytic[k][i], (fp - fm) / (T(2) * step));
    }
    flat += n;
  }
  for (auto& l : leaves) l.zero_grad();
  return r;
}

}  // namespace enot::ad
