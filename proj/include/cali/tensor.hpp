#pragma once
// Reverse-mode automatic differentiation over dense row-major tensors.
//
// The engine is a dynamic tape: every operation allocates a node holding its
// output buffer, its parents and a backprop closure.  Calling backward() on a
// scalar loss walks the graph in reverse topological order and accumulates
// gradients into every node that requires them.  Training runs in float;
// the same code instantiates with double for finite-difference checks.
//
// All loops are single-threaded and iteration orders are fixed, so identical
// inputs produce bitwise-identical outputs.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include "cali/common.hpp"

namespace cali {

inline int64_t shape_numel(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw DimensionError("tensor shape has non-positive dim " + std::to_string(d));
    n *= d;
  }
  return n;
}

inline std::string shape_str(const std::vector<int>& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace detail {

template <typename T>
struct TensorNode {
  std::vector<int> shape;
  std::vector<T> data;
  std::vector<T> grad;  // same length as data once touched by backward
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void()> backprop;  // reads this->grad, accumulates into parents
  const char* op = "leaf";

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }
};

}  // namespace detail

template <typename T>
class TensorT {
 public:
  using Scalar = T;
  using Node = detail::TensorNode<T>;

  TensorT() = default;

  static TensorT zeros(std::vector<int> shape, bool requires_grad = false) {
    return full(std::move(shape), T(0), requires_grad);
  }

  static TensorT full(std::vector<int> shape, T value, bool requires_grad = false) {
    auto node = std::make_shared<Node>();
    node->data.assign(static_cast<size_t>(shape_numel(shape)), value);
    node->shape = std::move(shape);
    node->requires_grad = requires_grad;
    return TensorT(std::move(node));
  }

  static TensorT scalar(T value, bool requires_grad = false) {
    return full({1}, value, requires_grad);
  }

  static TensorT from_data(std::vector<int> shape, std::vector<T> data, bool requires_grad = false) {
    if (static_cast<int64_t>(data.size()) != shape_numel(shape))
      throw DimensionError("from_data: " + std::to_string(data.size()) + " values for shape " +
                           shape_str(shape));
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    return TensorT(std::move(node));
  }

  // Fresh interior node; callers attach node()->backprop afterwards.
  static TensorT make_op(std::vector<int> shape, std::vector<TensorT> parents, const char* op) {
    auto node = std::make_shared<Node>();
    node->data.assign(static_cast<size_t>(shape_numel(shape)), T(0));
    node->shape = std::move(shape);
    node->op = op;
    for (const TensorT& p : parents) {
      if (!p.defined()) throw UsageError(std::string(op) + ": undefined operand");
      node->parents.push_back(p.node_);
      node->requires_grad = node->requires_grad || p.requires_grad();
    }
    return TensorT(std::move(node));
  }

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const { return check().shape; }
  int rank() const { return static_cast<int>(check().shape.size()); }
  int dim(int axis) const { return check().shape.at(static_cast<size_t>(axis)); }
  int64_t size() const { return static_cast<int64_t>(check().data.size()); }

  std::vector<T>& data() { return check().data; }
  const std::vector<T>& data() const { return check().data; }

  std::vector<T>& grad() {
    check().ensure_grad();
    return node_->grad;
  }
  const std::vector<T>& grad() const {
    check().ensure_grad();
    return node_->grad;
  }

  bool requires_grad() const { return check().requires_grad; }
  void set_requires_grad(bool v) { check().requires_grad = v; }
  void zero_grad() {
    check().ensure_grad();
    std::fill(node_->grad.begin(), node_->grad.end(), T(0));
  }

  T item() const {
    if (size() != 1) throw UsageError("item: tensor has " + std::to_string(size()) + " elements");
    return check().data[0];
  }

  const char* op_name() const { return check().op; }
  std::shared_ptr<Node> node() const { return node_; }
  bool same_storage(const TensorT& other) const { return node_ == other.node_; }

  // Reverse accumulation from a scalar.  Repeated calls without zero_grad()
  // accumulate into leaf gradients.
  void backward() const {
    if (size() != 1) throw UsageError("backward: loss must be scalar, got " + shape_str(shape()));
    if (!requires_grad()) return;

    // Post-order DFS (iterative) to get a topological order of the subgraph
    // that requires gradients.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [node, idx] = stack.back();
      if (idx < node->parents.size()) {
        Node* parent = node->parents[idx++].get();
        if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }

    for (Node* n : order) n->ensure_grad();
    node_->grad[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      if ((*it)->backprop) (*it)->backprop();
    }
  }

 private:
  explicit TensorT(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  Node& check() const {
    if (!node_) throw UsageError("operation on undefined tensor");
    return *node_;
  }

  std::shared_ptr<Node> node_;
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

// ---------------------------------------------------------------------------
// Elementwise operations
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
void require_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

}  // namespace detail

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
  detail::require_same_shape(a, b, "add");
  TensorT<T> out = TensorT<T>::make_op(a.shape(), {a, b}, "add");
  auto* o = out.node().get();
  auto* na = a.node().get();
  auto* nb = b.node().get();
  for (size_t i = 0; i < o->data.size(); ++i) o->data[i] = na->data[i] + nb->data[i];
  if (out.requires_grad()) {
    out.node()->backprop = [o, na, nb]() {
      if (na->requires_grad) {
        na->ensure_grad();
        for (size_t i = 0; i < o->grad.size(); ++i) na->grad[i] += o->grad[i];
      }
      if (nb->requires_grad) {
        nb->ensure_grad();
        for (size_t i = 0; i < o->grad.size(); ++i) nb->grad[i] += o->grad[i];
      }
    };
  }
  return out;
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
  detail::require_same_shape(a, b, "sub");
  TensorT<T> out = TensorT<T>::make_op(a.shape(), {a, b}, "sub");
  auto* o = out.node().get();
  auto* na = a.node().get();
  auto* nb = b.node().get();
  for (size_t i = 0; i < o->data.size(); ++i) o->data[i] = na->data[i] - nb->data[i];
  if (out.requires_grad()) {
    out.node()->backprop = [o, na, nb]() {
      if (na->requires_grad) {
        na->ensure_grad();
        for (size_t i = 0; i < o->grad.size(); ++i) na->grad[i] += o->grad[i];
      }
      if (nb->requires_grad) {
        nb->ensure_grad();
        for (size_t i = 0; i < o->grad.size(); ++i) nb->grad[i] -= o->grad[i];
      }
    };
  }
  return out;
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
  detail::require_same_shape(a, b, "mul");
  TensorT<T> out = TensorT<T>::make_op(a.shape(), {a, b}, "mul");
  auto* o = out.node().get();
  auto* na = a.node().get();
  auto* nb = b.node().get();
  for (size_t i = 0; i < o->data.size(); ++i) o->data[i] = na->data[i] * nb->data[i];
  if (out.requires_grad()) {
    out.node()->backprop = [o, na, nb]() {
      if (na->requires_grad) {
        na->ensure_grad();
        for (size_t i = 0; i < o->grad.size(); ++i) na->grad[i] += o->grad[i] * nb->data[i];
      }
      if (nb->requires_grad) {
        nb->ensure_grad();
        for (size_t i = 0; i < o->grad.size(); ++i) nb->grad[i] += o->grad[i] * na->data[i];
      }
    };
  }
  return out;
}

template <typename T>
TensorT<T> div(const TensorT<T>& a, const TensorT<T>& b) {
  detail::require_same_shape(a, b, "div");
  TensorT<T> out = TensorT<T>::make_op(a.shape(), {a, b}, "div");
  auto* o = out.node().get();
  auto* na = a.node().get();
  auto* nb = b.node().get();
  for (size_t i = 0; i < o->data.size(); ++i) o->data[i] = na->data[i] / nb->data[i];
  if (out.requires_grad()) {
    out.node()->backprop = [o, na, nb]() {
      if (na->requires_grad) {
        na->ensure_grad();
        for (size_t i = 0; i < o->grad.size(); ++i) na->grad[i] += o->grad[i] / nb->data[i];
      }
      if (nb->requires_grad) {
        nb->ensure_grad();
        for (size_t i = 0; i < o->grad.size(); ++i)
          nb->grad[i] -= o->grad[i] * na->data[i] / (nb->data[i] * nb->data[i]);
      }
    };
  }
  return out;
}

// a*x + b applied elementwise (covers negation and label flips like 1-x).
template <typename T>
TensorT<T> scale_add(const TensorT<T>& x, T a, T b) {
  TensorT<T> out = TensorT<T>::make_op(x.shape(), {x}, "scale_add");
  auto* o = out.node().get();
  auto* nx = x.node().get();
  for (size_t i = 0; i < o->data.size(); ++i) o->data[i] = a * nx->data[i] + b;
  if (out.requires_grad()) {
    out.node()->backprop = [o, nx, a]() {
      nx->ensure_grad();
      for (size_t i = 0; i < o->grad.size(); ++i) nx->grad[i] += a * o->grad[i];
    };
  }
  return out;
}

template <typename T>
TensorT<T> neg(const TensorT<T>& x) {
  return scale_add(x, T(-1), T(0));
}

template <typename T>
TensorT<T> abs_of(const TensorT<T>& x) {
  TensorT<T> out = TensorT<T>::make_op(x.shape(), {x}, "abs");
  auto* o = out.node().get();
  auto* nx = x.node().get();
  for (size_t i = 0; i < o->data.size(); ++i) o->data[i] = std::abs(nx->data[i]);
  if (out.requires_grad()) {
    out.node()->backprop = [o, nx]() {
      nx->ensure_grad();
      for (size_t i = 0; i < o->grad.size(); ++i) {
        T x = nx->data[i];
        // subgradient 0 at the kink
        T s = (x > T(0)) ? T(1) : (x < T(0) ? T(-1) : T(0));
        nx->grad[i] += s * o->grad[i];
      }
    };
  }
  return out;
}

template <typename T>
TensorT<T> sqrt_of(const TensorT<T>& x) {
  TensorT<T> out = TensorT<T>::make_op(x.shape(), {x}, "sqrt");
  auto* o = out.node().get();
  auto* nx = x.node().get();
  for (size_t i = 0; i < o->data.size(); ++i) {
    if (nx->data[i] < T(0)) throw UsageError("sqrt: negative input");
    o->data[i] = std::sqrt(nx->data[i]);
  }
  if (out.requires_grad()) {
    out.node()->backprop = [o, nx]() {
      nx->ensure_grad();
      for (size_t i = 0; i < o->grad.size(); ++i) {
        T y = o->data[i];
        if (y > T(0)) nx->grad[i] += o->grad[i] / (T(2) * y);
      }
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> leaky_relu(const TensorT<T>& x, T slope) {
  TensorT<T> out = TensorT<T>::make_op(x.shape(), {x}, "leaky_relu");
  auto* o = out.node().get();
  auto* nx = x.node().get();
  for (size_t i = 0; i < o->data.size(); ++i) {
    T v = nx->data[i];
    o->data[i] = v >= T(0) ? v : slope * v;
  }
  if (out.requires_grad()) {
    out.node()->backprop = [o, nx, slope]() {
      nx->ensure_grad();
      for (size_t i = 0; i < o->grad.size(); ++i)
        nx->grad[i] += o->grad[i] * (nx->data[i] >= T(0) ? T(1) : slope);
    };
  }
  return out;
}

// Numerically stable logistic; outputs clamped to [1e-7, 1-1e-7] so downstream
// logs of d and 1-d stay finite.
template <typename T>
TensorT<T> sigmoid(const TensorT<T>& x) {
  constexpr T kLo = T(1e-7);
  const T kHi = T(1) - T(1e-7);
  TensorT<T> out = TensorT<T>::make_op(x.shape(), {x}, "sigmoid");
  auto* o = out.node().get();
  auto* nx = x.node().get();
  for (size_t i = 0; i < o->data.size(); ++i) {
    T v = nx->data[i];
    T y;
    if (v >= T(0)) {
      y = T(1) / (T(1) + std::exp(-v));
    } else {
      T e = std::exp(v);
      y = e / (T(1) + e);
    }
    o->data[i] = std::min(kHi, std::max(kLo, y));
  }
  if (out.requires_grad()) {
    out.node()->backprop = [o, nx]() {
      nx->ensure_grad();
      for (size_t i = 0; i < o->grad.size(); ++i) {
        T y = o->data[i];
        nx->grad[i] += o->grad[i] * y * (T(1) - y);
      }
    };
  }
  return out;
}

// log(max(x, eps)); the clamp keeps losses finite when probabilities underflow.
template <typename T>
TensorT<T> log_clamped(const TensorT<T>& x, T eps = T(1e-7)) {
  if (eps <= T(0)) throw ConfigError("log_clamped: eps must be positive");
  TensorT<T> out = TensorT<T>::make_op(x.shape(), {x}, "log_clamped");
  auto* o = out.node().get();
  auto* nx = x.node().get();
  for (size_t i = 0; i < o->data.size(); ++i) o->data[i] = std::log(std::max(nx->data[i], eps));
  if (out.requires_grad()) {
    out.node()->backprop = [o, nx, eps]() {
      nx->ensure_grad();
      for (size_t i = 0; i < o->grad.size(); ++i)
        if (nx->data[i] >= eps) nx->grad[i] += o->grad[i] / nx->data[i];
    };
  }
  return out;
}

// Softmax along one axis with max-subtraction for stability.
template <typename T>
TensorT<T> softmax(const TensorT<T>& x, int axis) {
  const auto& shape = x.shape();
  if (axis < 0 || axis >= static_cast<int>(shape.size()))
    throw DimensionError("softmax: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(shape));
  int64_t axis_len = shape[static_cast<size_t>(axis)];
  int64_t inner = 1;
  for (size_t i = static_cast<size_t>(axis) + 1; i < shape.size(); ++i) inner *= shape[i];
  int64_t outer = x.size() / (axis_len * inner);

  TensorT<T> out = TensorT<T>::make_op(shape, {x}, "softmax");
  auto* o = out.node().get();
  auto* nx = x.node().get();
  for (int64_t ou = 0; ou < outer; ++ou) {
    for (int64_t in = 0; in < inner; ++in) {
      int64_t base = ou * axis_len * inner + in;
      T m = nx->data[static_cast<size_t>(base)];
      for (int64_t a = 1; a < axis_len; ++a)
        m = std::max(m, nx->data[static_cast<size_t>(base + a * inner)]);
      T total = T(0);
      for (int64_t a = 0; a < axis_len; ++a) {
        T e = std::exp(nx->data[static_cast<size_t>(base + a * inner)] - m);
        o->data[static_cast<size_t>(base + a * inner)] = e;
        total += e;
      }
      for (int64_t a = 0; a < axis_len; ++a) o->data[static_cast<size_t>(base + a * inner)] /= total;
    }
  }
  if (out.requires_grad()) {
    out.node()->backprop = [o, nx, outer, inner, axis_len]() {
      nx->ensure_grad();
      for (int64_t ou = 0; ou < outer; ++ou) {
        for (int64_t in = 0; in < inner; ++in) {
          int64_t base = ou * axis_len * inner + in;
          T dot = T(0);
          for (int64_t a = 0; a < axis_len; ++a) {
            size_t idx = static_cast<size_t>(base + a * inner);
            dot += o->grad[idx] * o->data[idx];
          }
          for (int64_t a = 0; a < axis_len; ++a) {
            size_t idx = static_cast<size_t>(base + a * inner);
            nx->grad[idx] += o->data[idx] * (o->grad[idx] - dot);
          }
        }
      }
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> sum_all(const TensorT<T>& x) {
  TensorT<T> out = TensorT<T>::make_op({1}, {x}, "sum");
  auto* o = out.node().get();
  auto* nx = x.node().get();
  T acc = T(0);
  for (T v : nx->data) acc += v;
  o->data[0] = acc;
  if (out.requires_grad()) {
    out.node()->backprop = [o, nx]() {
      nx->ensure_grad();
      T g = o->grad[0];
      for (size_t i = 0; i < nx->grad.size(); ++i) nx->grad[i] += g;
    };
  }
  return out;
}

template <typename T>
TensorT<T> mean_all(const TensorT<T>& x) {
  T inv = T(1) / static_cast<T>(x.size());
  return scale_add(sum_all(x), inv, T(0));
}

// ---------------------------------------------------------------------------
// Spatial operations
// ---------------------------------------------------------------------------

// 2-D convolution with square kernel, symmetric stride/zero-padding.
// input: [C_in,H,W] or [N,C_in,H,W]; kernel: [C_out,C_in,k,k]; bias: [C_out].
template <typename T>
TensorT<T> conv2d(const TensorT<T>& input, const TensorT<T>& kernel, const TensorT<T>& bias,
                  int stride, int pad) {
  if (kernel.rank() != 4) throw DimensionError("conv2d: kernel must be rank 4, got " + shape_str(kernel.shape()));
  bool batched = input.rank() == 4;
  if (!batched && input.rank() != 3)
    throw DimensionError("conv2d: input must be rank 3 or 4, got " + shape_str(input.shape()));
  int n = batched ? input.dim(0) : 1;
  int c_in = input.dim(batched ? 1 : 0);
  int h = input.dim(batched ? 2 : 1);
  int w = input.dim(batched ? 3 : 2);
  int c_out = kernel.dim(0);
  int k = kernel.dim(2);
  if (kernel.dim(1) != c_in)
    throw DimensionError("conv2d: kernel expects " + std::to_string(kernel.dim(1)) +
                         " input channels, input has " + std::to_string(c_in));
  if (kernel.dim(3) != k) throw DimensionError("conv2d: kernel must be square, got " + shape_str(kernel.shape()));
  if (bias.rank() != 1 || bias.dim(0) != c_out)
    throw DimensionError("conv2d: bias must be [" + std::to_string(c_out) + "], got " +
                         shape_str(bias.shape()));
  if (stride < 1) throw ConfigError("conv2d: stride must be >= 1");
  if (pad < 0) throw ConfigError("conv2d: pad must be >= 0");
  int oh = (h + 2 * pad - k) / stride + 1;
  int ow = (w + 2 * pad - k) / stride + 1;
  if (h + 2 * pad < k || w + 2 * pad < k || oh < 1 || ow < 1)
    throw ConfigError("conv2d: non-positive output size for input " + shape_str(input.shape()) +
                      " kernel " + std::to_string(k) + " stride " + std::to_string(stride) +
                      " pad " + std::to_string(pad));

  std::vector<int> out_shape = batched ? std::vector<int>{n, c_out, oh, ow}
                                       : std::vector<int>{c_out, oh, ow};
  TensorT<T> out = TensorT<T>::make_op(out_shape, {input, kernel, bias}, "conv2d");
  auto* o = out.node().get();
  auto* ni = input.node().get();
  auto* nk = kernel.node().get();
  auto* nb = bias.node().get();

  const int64_t in_plane = static_cast<int64_t>(h) * w;
  const int64_t in_sample = static_cast<int64_t>(c_in) * in_plane;
  const int64_t out_plane = static_cast<int64_t>(oh) * ow;
  const int64_t out_sample = static_cast<int64_t>(c_out) * out_plane;
  const int64_t ker_plane = static_cast<int64_t>(k) * k;
  const int64_t ker_filter = static_cast<int64_t>(c_in) * ker_plane;

  for (int b = 0; b < n; ++b) {
    for (int co = 0; co < c_out; ++co) {
      T bias_v = nb->data[static_cast<size_t>(co)];
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          T acc = bias_v;
          int iy0 = oy * stride - pad;
          int ix0 = ox * stride - pad;
          for (int ci = 0; ci < c_in; ++ci) {
            const T* in_p = ni->data.data() + b * in_sample + ci * in_plane;
            const T* k_p = nk->data.data() + co * ker_filter + ci * ker_plane;
            for (int ky = 0; ky < k; ++ky) {
              int iy = iy0 + ky;
              if (iy < 0 || iy >= h) continue;
              for (int kx = 0; kx < k; ++kx) {
                int ix = ix0 + kx;
                if (ix < 0 || ix >= w) continue;
                acc += in_p[iy * w + ix] * k_p[ky * k + kx];
              }
            }
          }
          o->data[static_cast<size_t>(b * out_sample + co * out_plane + oy * ow + ox)] = acc;
        }
      }
    }
  }

  if (out.requires_grad()) {
    out.node()->backprop = [=]() {
      bool gi = ni->requires_grad;
      bool gk = nk->requires_grad;
      bool gb = nb->requires_grad;
      if (gi) ni->ensure_grad();
      if (gk) nk->ensure_grad();
      if (gb) nb->ensure_grad();
      for (int b = 0; b < n; ++b) {
        for (int co = 0; co < c_out; ++co) {
          for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
              T g = o->grad[static_cast<size_t>(b * out_sample + co * out_plane + oy * ow + ox)];
              if (g == T(0)) continue;
              if (gb) nb->grad[static_cast<size_t>(co)] += g;
              int iy0 = oy * stride - pad;
              int ix0 = ox * stride - pad;
              for (int ci = 0; ci < c_in; ++ci) {
                const int64_t in_off = b * in_sample + ci * in_plane;
                const int64_t k_off = co * ker_filter + ci * ker_plane;
                for (int ky = 0; ky < k; ++ky) {
                  int iy = iy0 + ky;
                  if (iy < 0 || iy >= h) continue;
                  for (int kx = 0; kx < k; ++kx) {
                    int ix = ix0 + kx;
                    if (ix < 0 || ix >= w) continue;
                    if (gi)
                      ni->grad[static_cast<size_t>(in_off + iy * w + ix)] +=
                          g * nk->data[static_cast<size_t>(k_off + ky * k + kx)];
                    if (gk)
                      nk->grad[static_cast<size_t>(k_off + ky * k + kx)] +=
                          g * ni->data[static_cast<size_t>(in_off + iy * w + ix)];
                  }
                }
              }
            }
          }
        }
      }
    };
  }
  return out;
}

// Nearest-neighbour upsampling by an integer factor on [C,H,W].
template <typename T>
TensorT<T> upsample_nearest(const TensorT<T>& x, int factor) {
  if (factor < 1) throw ConfigError("upsample_nearest: factor must be >= 1");
  if (x.rank() != 3) throw DimensionError("upsample_nearest: input must be rank 3, got " + shape_str(x.shape()));
  int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  int oh = h * factor, ow = w * factor;
  TensorT<T> out = TensorT<T>::make_op({c, oh, ow}, {x}, "upsample_nearest");
  auto* o = out.node().get();
  auto* nx = x.node().get();
  for (int ci = 0; ci < c; ++ci) {
    for (int oy = 0; oy < oh; ++oy) {
      int iy = oy / factor;
      const T* src = nx->data.data() + (static_cast<int64_t>(ci) * h + iy) * w;
      T* dst = o->data.data() + (static_cast<int64_t>(ci) * oh + oy) * ow;
      for (int ox = 0; ox < ow; ++ox) dst[ox] = src[ox / factor];
    }
  }
  if (out.requires_grad()) {
    out.node()->backprop = [o, nx, c, h, w, factor, oh, ow]() {
      nx->ensure_grad();
      for (int ci = 0; ci < c; ++ci) {
        for (int oy = 0; oy < oh; ++oy) {
          int iy = oy / factor;
          const T* g = o->grad.data() + (static_cast<int64_t>(ci) * oh + oy) * ow;
          T* dst = nx->grad.data() + (static_cast<int64_t>(ci) * h + iy) * w;
          for (int ox = 0; ox < ow; ++ox) dst[ox / factor] += g[ox];
        }
      }
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// Non-differentiable helpers
// ---------------------------------------------------------------------------

template <typename T>
bool all_finite(const TensorT<T>& x) {
  for (T v : x.data())
    if (!std::isfinite(v)) return false;
  return true;
}

// Per-pixel argmax over the channel axis of a [K,H,W] map.
template <typename T>
ClassMap argmax_channel(const TensorT<T>& probs) {
  if (probs.rank() != 3) throw DimensionError("argmax_channel: expected rank 3, got " + shape_str(probs.shape()));
  int k = probs.dim(0), h = probs.dim(1), w = probs.dim(2);
  ClassMap out(h, w);
  const auto& d = probs.data();
  int64_t plane = static_cast<int64_t>(h) * w;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      int64_t px = static_cast<int64_t>(y) * w + x;
      int best = 0;
      T best_v = d[static_cast<size_t>(px)];
      for (int c = 1; c < k; ++c) {
        T v = d[static_cast<size_t>(c * plane + px)];
        if (v > best_v) {
          best_v = v;
          best = c;
        }
      }
      out.at(y, x) = static_cast<uint8_t>(best);
    }
  }
  return out;
}

}  // namespace cali
