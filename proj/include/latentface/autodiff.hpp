#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "latentface/common.hpp"
#include "latentface/tensor.hpp"

// Tape-based reverse-mode autodiff over dense tensors, templated on the
// scalar type so the float training path and the double finite-difference
// path share one implementation. Single-threaded; GEMM-bound ops go through
// Eigen.
namespace lf::ad {

template <class T>
struct Node;

template <class T>
using NodePtr = std::shared_ptr<Node<T>>;

template <class T>
struct Node {
  TensorT<T> value;
  TensorT<T> grad;
  bool requires_grad = false;
  std::vector<NodePtr<T>> parents;
  std::function<void(Node<T>&)> backward_fn;
  int64_t id = 0;

  void ensure_grad() {
    if (grad.numel() == 0) grad = TensorT<T>(value.shape);
  }
};

namespace detail {
inline int64_t next_node_id() {
  static int64_t counter = 0;
  return ++counter;
}
}  // namespace detail

template <class T>
class Var {
 public:
  Var() = default;
  explicit Var(NodePtr<T> n) : node_(std::move(n)) {}

  static Var constant(TensorT<T> value) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->id = detail::next_node_id();
    return Var(std::move(n));
  }

  static Var param(TensorT<T> value) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = true;
    n->id = detail::next_node_id();
    return Var(std::move(n));
  }

  bool defined() const { return static_cast<bool>(node_); }
  const TensorT<T>& value() const { return node_->value; }
  TensorT<T>& value() { return node_->value; }
  const TensorT<T>& grad() const { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool b) { node_->requires_grad = b; }
  const NodePtr<T>& node() const { return node_; }

  void zero_grad() {
    if (node_->grad.numel()) std::fill(node_->grad.data.begin(), node_->grad.data.end(), T(0));
  }

 private:
  NodePtr<T> node_;
};

template <class T>
Var<T> make_op(TensorT<T> value, std::vector<NodePtr<T>> parents,
               std::function<void(Node<T>&)> backward) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  for (auto& p : parents)
    if (p->requires_grad) n->requires_grad = true;
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backward_fn = std::move(backward);
  }
  n->id = detail::next_node_id();
  return Var<T>(std::move(n));
}

// Run reverse-mode accumulation from `root` (seeded with ones).
template <class T>
void backward(const Var<T>& root) {
  NodePtr<T> r = root.node();
  if (!r->requires_grad) throw InvalidInputError("backward on a graph with no trainable inputs");
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<Node<T>*> stack{r.get()};
  seen.insert(r.get());
  while (!stack.empty()) {
    Node<T>* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (auto& p : n->parents)
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
  }
  std::sort(order.begin(), order.end(), [](Node<T>* a, Node<T>* b) { return a->id > b->id; });
  r->ensure_grad();
  std::fill(r->grad.data.begin(), r->grad.data.end(), T(1));
  for (Node<T>* n : order)
    if (n->backward_fn) n->backward_fn(*n);
}

// ---- elementwise ----

namespace detail {

template <class T>
void accum(NodePtr<T>& p, const TensorT<T>& g) {
  if (!p->requires_grad) return;
  p->ensure_grad();
  for (int64_t i = 0; i < g.numel(); ++i) p->grad[i] += g[i];
}

// dfn(x, y) is the local derivative given the input and output values
template <class T, class F, class D>
Var<T> unary_op(const Var<T>& x, F&& fwd, D&& dfn) {
  TensorT<T> out(x.value().shape);
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = fwd(x.value()[i]);
  auto xp = x.node();
  return make_op<T>(std::move(out), {xp}, [xp, dfn = std::forward<D>(dfn)](Node<T>& self) mutable {
    if (!xp->requires_grad) return;
    xp->ensure_grad();
    for (int64_t i = 0; i < self.grad.numel(); ++i)
      xp->grad[i] += self.grad[i] * dfn(xp->value[i], self.value[i]);
  });
}

template <class T>
void check_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (!a.value().same_shape(b.value()))
    throw InvalidInputError(std::string(op) + ": shape mismatch");
}

}  // namespace detail

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::check_same_shape(a, b, "add");
  TensorT<T> out(a.value().shape);
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] + b.value()[i];
  auto ap = a.node(), bp = b.node();
  return make_op<T>(std::move(out), {ap, bp}, [ap, bp](Node<T>& self) mutable {
    detail::accum(ap, self.grad);
    detail::accum(bp, self.grad);
  });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  detail::check_same_shape(a, b, "sub");
  TensorT<T> out(a.value().shape);
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] - b.value()[i];
  auto ap = a.node(), bp = b.node();
  return make_op<T>(std::move(out), {ap, bp}, [ap, bp](Node<T>& self) mutable {
    detail::accum(ap, self.grad);
    if (bp->requires_grad) {
      bp->ensure_grad();
      for (int64_t i = 0; i < self.grad.numel(); ++i) bp->grad[i] -= self.grad[i];
    }
  });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  detail::check_same_shape(a, b, "mul");
  TensorT<T> out(a.value().shape);
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * b.value()[i];
  auto ap = a.node(), bp = b.node();
  return make_op<T>(std::move(out), {ap, bp}, [ap, bp](Node<T>& self) mutable {
    if (ap->requires_grad) {
      ap->ensure_grad();
      for (int64_t i = 0; i < self.grad.numel(); ++i) ap->grad[i] += self.grad[i] * bp->value[i];
    }
    if (bp->requires_grad) {
      bp->ensure_grad();
      for (int64_t i = 0; i < self.grad.numel(); ++i) bp->grad[i] += self.grad[i] * ap->value[i];
    }
  });
}

template <class T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
  detail::check_same_shape(a, b, "div");
  TensorT<T> out(a.value().shape);
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] / b.value()[i];
  auto ap = a.node(), bp = b.node();
  return make_op<T>(std::move(out), {ap, bp}, [ap, bp](Node<T>& self) mutable {
    if (ap->requires_grad) {
      ap->ensure_grad();
      for (int64_t i = 0; i < self.grad.numel(); ++i) ap->grad[i] += self.grad[i] / bp->value[i];
    }
    if (bp->requires_grad) {
      bp->ensure_grad();
      for (int64_t i = 0; i < self.grad.numel(); ++i)
        bp->grad[i] -= self.grad[i] * ap->value[i] / (bp->value[i] * bp->value[i]);
    }
  });
}

template <class T>
Var<T> scale(const Var<T>& x, T s) {
  return detail::unary_op(
      x, [s](T v) { return v * s; }, [s](T, T) { return s; });
}

template <class T>
Var<T> add_scalar(const Var<T>& x, T s) {
  return detail::unary_op(
      x, [s](T v) { return v + s; }, [](T, T) { return T(1); });
}

template <class T>
Var<T> abs(const Var<T>& x) {
  return detail::unary_op(
      x, [](T v) { return std::abs(v); },
      [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <class T>
Var<T> log(const Var<T>& x) {
  return detail::unary_op(
      x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <class T>
Var<T> relu(const Var<T>& x) {
  return detail::unary_op(
      x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <class T>
Var<T> leaky_relu(const Var<T>& x, T slope) {
  return detail::unary_op(
      x, [slope](T v) { return v > T(0) ? v : slope * v; },
      [slope](T v, T) { return v > T(0) ? T(1) : slope; });
}

template <class T>
Var<T> tanh(const Var<T>& x) {
  return detail::unary_op(
      x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <class T>
Var<T> sigmoid(const Var<T>& x) {
  return detail::unary_op(
      x, [](T v) { return T(1) / (T(1) + std::exp(-v)); }, [](T, T y) { return y * (T(1) - y); });
}

// x * sigmoid(x)
template <class T>
Var<T> swish(const Var<T>& x) {
  return detail::unary_op(
      x, [](T v) { return v / (T(1) + std::exp(-v)); },
      [](T v, T) {
        T s = T(1) / (T(1) + std::exp(-v));
        return s * (T(1) + v * (T(1) - s));
      });
}

// log(1 + exp(x)) with the usual linear tail for numerical range
template <class T>
Var<T> softplus(const Var<T>& x, T threshold = T(20)) {
  return detail::unary_op(
      x, [threshold](T v) { return v > threshold ? v : std::log1p(std::exp(v)); },
      [threshold](T v, T) { return v > threshold ? T(1) : T(1) / (T(1) + std::exp(-v)); });
}

// ---- reductions / reshaping ----

template <class T>
Var<T> sum(const Var<T>& x) {
  T s = 0;
  for (int64_t i = 0; i < x.value().numel(); ++i) s += x.value()[i];
  TensorT<T> out({1});
  out[0] = s;
  auto xp = x.node();
  return make_op<T>(std::move(out), {xp}, [xp](Node<T>& self) mutable {
    if (!xp->requires_grad) return;
    xp->ensure_grad();
    T g = self.grad[0];
    for (int64_t i = 0; i < xp->grad.numel(); ++i) xp->grad[i] += g;
  });
}

template <class T>
Var<T> mean(const Var<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.value().numel()));
}

// [N,C,H,W] -> [N,1,H,W], average over channels
template <class T>
Var<T> mean_channels(const Var<T>& x) {
  const auto& v = x.value();
  if (v.rank() != 4) throw InvalidInputError("mean_channels expects N x C x H x W");
  int64_t n = v.dim(0), c = v.dim(1), h = v.dim(2), w = v.dim(3);
  TensorT<T> out({n, 1, h, w});
  T inv = T(1) / static_cast<T>(c);
  for (int64_t b = 0; b < n; ++b)
    for (int64_t i = 0; i < h * w; ++i) {
      T s = 0;
      for (int64_t k = 0; k < c; ++k) s += v[(b * c + k) * h * w + i];
      out[b * h * w + i] = s * inv;
    }
  auto xp = x.node();
  return make_op<T>(std::move(out), {xp}, [xp, n, c, h, w, inv](Node<T>& self) mutable {
    if (!xp->requires_grad) return;
    xp->ensure_grad();
    for (int64_t b = 0; b < n; ++b)
      for (int64_t i = 0; i < h * w; ++i) {
        T g = self.grad[b * h * w + i] * inv;
        for (int64_t k = 0; k < c; ++k) xp->grad[(b * c + k) * h * w + i] += g;
      }
  });
}

template <class T>
Var<T> reshape(const Var<T>& x, std::vector<int64_t> shape) {
  TensorT<T> out = x.value().reshaped(shape);
  auto xp = x.node();
  return make_op<T>(std::move(out), {xp}, [xp](Node<T>& self) mutable {
    detail::accum(xp, self.grad);
  });
}

// flip the last axis (width) of [N,C,H,W]
template <class T>
Var<T> hflip4(const Var<T>& x) {
  const auto& v = x.value();
  if (v.rank() != 4) throw InvalidInputError("hflip4 expects N x C x H x W");
  int64_t w = v.dim(3), rows = v.numel() / w;
  TensorT<T> out(v.shape);
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t j = 0; j < w; ++j) out[r * w + j] = v[r * w + (w - 1 - j)];
  auto xp = x.node();
  return make_op<T>(std::move(out), {xp}, [xp, rows, w](Node<T>& self) mutable {
    if (!xp->requires_grad) return;
    xp->ensure_grad();
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t j = 0; j < w; ++j) xp->grad[r * w + (w - 1 - j)] += self.grad[r * w + j];
  });
}

// concatenate two [N,Fa] and [N,Fb] along axis 1
template <class T>
Var<T> concat_cols(const Var<T>& a, const Var<T>& b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(0) != bv.dim(0))
    throw InvalidInputError("concat_cols expects two N x F tensors");
  int64_t n = av.dim(0), fa = av.dim(1), fb = bv.dim(1);
  TensorT<T> out({n, fa + fb});
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = 0; j < fa; ++j) out.at2(i, j) = av.at2(i, j);
    for (int64_t j = 0; j < fb; ++j) out.at2(i, fa + j) = bv.at2(i, j);
  }
  auto ap = a.node(), bp = b.node();
  return make_op<T>(std::move(out), {ap, bp}, [ap, bp, n, fa, fb](Node<T>& self) mutable {
    if (ap->requires_grad) {
      ap->ensure_grad();
      for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < fa; ++j) ap->grad.at2(i, j) += self.grad.at2(i, j);
    }
    if (bp->requires_grad) {
      bp->ensure_grad();
      for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < fb; ++j) bp->grad.at2(i, j) += self.grad.at2(i, fa + j);
    }
  });
}

// channels [start, start+count) of [N,C,H,W]
template <class T>
Var<T> slice_channels(const Var<T>& x, int64_t start, int64_t count) {
  const auto& v = x.value();
  if (v.rank() != 4) throw InvalidInputError("slice_channels expects N x C x H x W");
  int64_t n = v.dim(0), c = v.dim(1), hw = v.dim(2) * v.dim(3);
  if (start < 0 || start + count > c) throw InvalidInputError("slice_channels out of range");
  TensorT<T> out({n, count, v.dim(2), v.dim(3)});
  for (int64_t b = 0; b < n; ++b)
    for (int64_t k = 0; k < count; ++k)
      std::copy_n(v.data.data() + ((b * c + start + k) * hw), hw,
                  out.data.data() + ((b * count + k) * hw));
  auto xp = x.node();
  return make_op<T>(std::move(out), {xp}, [xp, n, c, hw, start, count](Node<T>& self) mutable {
    if (!xp->requires_grad) return;
    xp->ensure_grad();
    for (int64_t b = 0; b < n; ++b)
      for (int64_t k = 0; k < count; ++k) {
        const T* g = self.grad.data.data() + ((b * count + k) * hw);
        T* dst = xp->grad.data.data() + ((b * c + start + k) * hw);
        for (int64_t i = 0; i < hw; ++i) dst[i] += g[i];
      }
  });
}

// ---- dense / conv layers ----

namespace detail {
template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using ColMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <class T>
using RowMap = Eigen::Map<RowMat<T>>;
template <class T>
using CRowMap = Eigen::Map<const RowMat<T>>;

// x: [C,H,W] -> cols [C*k*k, Ho*Wo] for a square kernel
template <class T>
void im2col(const T* x, int64_t C, int64_t H, int64_t W, int k, int s, int p, ColMat<T>& cols) {
  int64_t Ho = (H + 2 * p - k) / s + 1;
  int64_t Wo = (W + 2 * p - k) / s + 1;
  cols.setZero(C * k * k, Ho * Wo);
  for (int64_t c = 0; c < C; ++c)
    for (int ki = 0; ki < k; ++ki)
      for (int kj = 0; kj < k; ++kj) {
        int64_t row = (c * k + ki) * k + kj;
        for (int64_t oi = 0; oi < Ho; ++oi) {
          int64_t ii = oi * s - p + ki;
          if (ii < 0 || ii >= H) continue;
          for (int64_t oj = 0; oj < Wo; ++oj) {
            int64_t jj = oj * s - p + kj;
            if (jj < 0 || jj >= W) continue;
            cols(row, oi * Wo + oj) = x[(c * H + ii) * W + jj];
          }
        }
      }
}

// adjoint of im2col: scatter-add cols back into x
template <class T>
void col2im_add(const ColMat<T>& cols, T* x, int64_t C, int64_t H, int64_t W, int k, int s, int p) {
  int64_t Ho = (H + 2 * p - k) / s + 1;
  int64_t Wo = (W + 2 * p - k) / s + 1;
  for (int64_t c = 0; c < C; ++c)
    for (int ki = 0; ki < k; ++ki)
      for (int kj = 0; kj < k; ++kj) {
        int64_t row = (c * k + ki) * k + kj;
        for (int64_t oi = 0; oi < Ho; ++oi) {
          int64_t ii = oi * s - p + ki;
          if (ii < 0 || ii >= H) continue;
          for (int64_t oj = 0; oj < Wo; ++oj) {
            int64_t jj = oj * s - p + kj;
            if (jj < 0 || jj >= W) continue;
            x[(c * H + ii) * W + jj] += cols(row, oi * Wo + oj);
          }
        }
      }
}
}  // namespace detail

// y = x W^T + b; x [N,Fi], w [Fo,Fi], b [Fo]
template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  const auto& xv = x.value();
  const auto& wv = w.value();
  const auto& bv = b.value();
  if (xv.rank() != 2 || wv.rank() != 2 || xv.dim(1) != wv.dim(1) || bv.dim(0) != wv.dim(0))
    throw InvalidInputError("linear: shape mismatch");
  int64_t n = xv.dim(0), fi = xv.dim(1), fo = wv.dim(0);
  TensorT<T> out({n, fo});
  {
    detail::CRowMap<T> X(xv.data.data(), n, fi), W(wv.data.data(), fo, fi);
    detail::RowMap<T> Y(out.data.data(), n, fo);
    Y.noalias() = X * W.transpose();
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> B(bv.data.data(), fo);
    Y.rowwise() += B;
  }
  auto xp = x.node(), wp = w.node(), bp = b.node();
  return make_op<T>(std::move(out), {xp, wp, bp}, [xp, wp, bp, n, fi, fo](Node<T>& self) mutable {
    detail::CRowMap<T> dY(self.grad.data.data(), n, fo);
    if (xp->requires_grad) {
      xp->ensure_grad();
      detail::CRowMap<T> W(wp->value.data.data(), fo, fi);
      detail::RowMap<T>(xp->grad.data.data(), n, fi).noalias() += dY * W;
    }
    if (wp->requires_grad) {
      wp->ensure_grad();
      detail::CRowMap<T> X(xp->value.data.data(), n, fi);
      detail::RowMap<T>(wp->grad.data.data(), fo, fi).noalias() += dY.transpose() * X;
    }
    if (bp->requires_grad) {
      bp->ensure_grad();
      Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(bp->grad.data.data(), fo) +=
          dY.colwise().sum();
    }
  });
}

// x [N,Ci,H,W], w [Co,Ci,k,k], b [Co]
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride, int pad) {
  const auto& xv = x.value();
  const auto& wv = w.value();
  if (xv.rank() != 4 || wv.rank() != 4 || xv.dim(1) != wv.dim(1) || wv.dim(2) != wv.dim(3))
    throw InvalidInputError("conv2d: shape mismatch");
  int64_t n = xv.dim(0), ci = xv.dim(1), h = xv.dim(2), wd = xv.dim(3);
  int64_t co = wv.dim(0);
  int k = static_cast<int>(wv.dim(2));
  int64_t ho = (h + 2 * pad - k) / stride + 1;
  int64_t wo = (wd + 2 * pad - k) / stride + 1;
  if (ho <= 0 || wo <= 0) throw InvalidInputError("conv2d: empty output");

  TensorT<T> out({n, co, ho, wo});
  {
    detail::ColMat<T> cols;
    detail::CRowMap<T> W(wv.data.data(), co, ci * k * k);
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> B(b.value().data.data(), co);
    for (int64_t s = 0; s < n; ++s) {
      detail::im2col(xv.data.data() + s * ci * h * wd, ci, h, wd, k, stride, pad, cols);
      detail::RowMap<T> Y(out.data.data() + s * co * ho * wo, co, ho * wo);
      Y.noalias() = W * cols;
      Y.colwise() += B;
    }
  }
  auto xp = x.node(), wp = w.node(), bp = b.node();
  int64_t hd = h, wdd = wd;
  return make_op<T>(std::move(out), {xp, wp, bp},
                    [xp, wp, bp, n, ci, hd, wdd, co, k, stride, pad, ho, wo](Node<T>& self) mutable {
    detail::ColMat<T> cols;
    detail::CRowMap<T> W(wp->value.data.data(), co, ci * k * k);
    if (xp->requires_grad) xp->ensure_grad();
    if (wp->requires_grad) wp->ensure_grad();
    if (bp->requires_grad) bp->ensure_grad();
    for (int64_t s = 0; s < n; ++s) {
      detail::CRowMap<T> dY(self.grad.data.data() + s * co * ho * wo, co, ho * wo);
      if (xp->requires_grad) {
        detail::ColMat<T> dcols = W.transpose() * dY;
        detail::col2im_add(dcols, xp->grad.data.data() + s * ci * hd * wdd, ci, hd, wdd, k, stride,
                           pad);
      }
      if (wp->requires_grad) {
        detail::im2col(xp->value.data.data() + s * ci * hd * wdd, ci, hd, wdd, k, stride, pad,
                       cols);
        detail::RowMap<T>(wp->grad.data.data(), co, ci * k * k).noalias() += dY * cols.transpose();
      }
      if (bp->requires_grad) {
        Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> dB(bp->grad.data.data(), co);
        dB += dY.rowwise().sum();
      }
    }
  });
}

// x [N,Ci,H,W], w [Ci,Co,k,k], b [Co]; out [N,Co,(H-1)s-2p+k,(W-1)s-2p+k]
template <class T>
Var<T> conv_transpose2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride, int pad) {
  const auto& xv = x.value();
  const auto& wv = w.value();
  if (xv.rank() != 4 || wv.rank() != 4 || xv.dim(1) != wv.dim(0) || wv.dim(2) != wv.dim(3))
    throw InvalidInputError("conv_transpose2d: shape mismatch");
  int64_t n = xv.dim(0), ci = xv.dim(1), h = xv.dim(2), wd = xv.dim(3);
  int64_t co = wv.dim(1);
  int k = static_cast<int>(wv.dim(2));
  int64_t ho = (h - 1) * stride - 2 * pad + k;
  int64_t wo = (wd - 1) * stride - 2 * pad + k;
  if (ho <= 0 || wo <= 0) throw InvalidInputError("conv_transpose2d: empty output");

  TensorT<T> out({n, co, ho, wo});
  {
    detail::CRowMap<T> W(wv.data.data(), ci, co * k * k);
    for (int64_t s = 0; s < n; ++s) {
      detail::CRowMap<T> X(xv.data.data() + s * ci * h * wd, ci, h * wd);
      detail::ColMat<T> cols = W.transpose() * X;  // [Co*k*k, H*W]
      T* optr = out.data.data() + s * co * ho * wo;
      detail::col2im_add(cols, optr, co, ho, wo, k, stride, pad);
      for (int64_t c = 0; c < co; ++c) {
        T bc = b.value()[c];
        for (int64_t i = 0; i < ho * wo; ++i) optr[c * ho * wo + i] += bc;
      }
    }
  }
  auto xp = x.node(), wp = w.node(), bp = b.node();
  return make_op<T>(std::move(out), {xp, wp, bp},
                    [xp, wp, bp, n, ci, h, wd, co, k, stride, pad, ho, wo](Node<T>& self) mutable {
    detail::ColMat<T> cols;
    if (xp->requires_grad) xp->ensure_grad();
    if (wp->requires_grad) wp->ensure_grad();
    if (bp->requires_grad) bp->ensure_grad();
    detail::CRowMap<T> W(wp->value.data.data(), ci, co * k * k);
    for (int64_t s = 0; s < n; ++s) {
      const T* dy = self.grad.data.data() + s * co * ho * wo;
      detail::im2col(dy, co, ho, wo, k, stride, pad, cols);  // [Co*k*k, H*W]
      if (xp->requires_grad) {
        detail::RowMap<T> dX(xp->grad.data.data() + s * ci * h * wd, ci, h * wd);
        dX.noalias() += W * cols;
      }
      if (wp->requires_grad) {
        detail::CRowMap<T> X(xp->value.data.data() + s * ci * h * wd, ci, h * wd);
        detail::RowMap<T>(wp->grad.data.data(), ci, co * k * k).noalias() += X * cols.transpose();
      }
      if (bp->requires_grad)
        for (int64_t c = 0; c < co; ++c) {
          T s2 = 0;
          for (int64_t i = 0; i < ho * wo; ++i) s2 += dy[c * ho * wo + i];
          bp->grad[c] += s2;
        }
    }
  });
}

// GroupNorm over [N,C,H,W]; gamma/beta are per-channel
template <class T>
Var<T> group_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, int64_t groups,
                  T eps = T(1e-5)) {
  const auto& xv = x.value();
  if (xv.rank() != 4) throw InvalidInputError("group_norm expects N x C x H x W");
  int64_t n = xv.dim(0), c = xv.dim(1), hw = xv.dim(2) * xv.dim(3);
  if (c % groups != 0) throw InvalidInputError("group_norm: channels not divisible by groups");
  int64_t cg = c / groups, m = cg * hw;

  TensorT<T> out(xv.shape);
  TensorT<T> xhat(xv.shape);
  TensorT<T> inv_std({n, groups});
  for (int64_t b = 0; b < n; ++b)
    for (int64_t g = 0; g < groups; ++g) {
      const T* xs = xv.data.data() + (b * c + g * cg) * hw;
      T mu = 0;
      for (int64_t i = 0; i < m; ++i) mu += xs[i];
      mu /= static_cast<T>(m);
      T var = 0;
      for (int64_t i = 0; i < m; ++i) {
        T d = xs[i] - mu;
        var += d * d;
      }
      var /= static_cast<T>(m);
      T istd = T(1) / std::sqrt(var + eps);
      inv_std.at2(b, g) = istd;
      T* xh = xhat.data.data() + (b * c + g * cg) * hw;
      T* o = out.data.data() + (b * c + g * cg) * hw;
      for (int64_t k = 0; k < cg; ++k) {
        T ga = gamma.value()[g * cg + k], be = beta.value()[g * cg + k];
        for (int64_t i = 0; i < hw; ++i) {
          T v = (xs[k * hw + i] - mu) * istd;
          xh[k * hw + i] = v;
          o[k * hw + i] = ga * v + be;
        }
      }
    }

  auto xp = x.node(), gp = gamma.node(), bp = beta.node();
  auto xhat_s = std::make_shared<TensorT<T>>(std::move(xhat));
  auto istd_s = std::make_shared<TensorT<T>>(std::move(inv_std));
  return make_op<T>(std::move(out), {xp, gp, bp},
                    [xp, gp, bp, xhat_s, istd_s, n, c, hw, groups, cg, m](Node<T>& self) mutable {
    if (gp->requires_grad) gp->ensure_grad();
    if (bp->requires_grad) bp->ensure_grad();
    if (xp->requires_grad) xp->ensure_grad();
    for (int64_t b = 0; b < n; ++b)
      for (int64_t g = 0; g < groups; ++g) {
        const T* dy = self.grad.data.data() + (b * c + g * cg) * hw;
        const T* xh = xhat_s->data.data() + (b * c + g * cg) * hw;
        if (gp->requires_grad || bp->requires_grad)
          for (int64_t k = 0; k < cg; ++k)
            for (int64_t i = 0; i < hw; ++i) {
              gp->grad[g * cg + k] += dy[k * hw + i] * xh[k * hw + i];
              bp->grad[g * cg + k] += dy[k * hw + i];
            }
        if (xp->requires_grad) {
          T s1 = 0, s2 = 0;
          for (int64_t k = 0; k < cg; ++k) {
            T ga = gp->value[g * cg + k];
            for (int64_t i = 0; i < hw; ++i) {
              T dxh = dy[k * hw + i] * ga;
              s1 += dxh;
              s2 += dxh * xh[k * hw + i];
            }
          }
          s1 /= static_cast<T>(m);
          s2 /= static_cast<T>(m);
          T istd = istd_s->at2(b, g);
          T* dx = xp->grad.data.data() + (b * c + g * cg) * hw;
          for (int64_t k = 0; k < cg; ++k) {
            T ga = gp->value[g * cg + k];
            for (int64_t i = 0; i < hw; ++i) {
              T dxh = dy[k * hw + i] * ga;
              dx[k * hw + i] += istd * (dxh - s1 - xh[k * hw + i] * s2);
            }
          }
        }
      }
  });
}

// BatchNorm over [N,F]. Running stats are owned by the caller; training mode
// normalizes with batch statistics and updates them, eval mode reads them.
template <class T>
struct BnStats {
  TensorT<T> mean;
  TensorT<T> var;
  void init(int64_t f) {
    mean = TensorT<T>({f});
    var = TensorT<T>::full({f}, T(1));
  }
};

template <class T>
Var<T> batch_norm1d(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, BnStats<T>& stats,
                    bool training, T momentum = T(0.1), T eps = T(1e-5)) {
  const auto& xv = x.value();
  if (xv.rank() != 2) throw InvalidInputError("batch_norm1d expects N x F");
  int64_t n = xv.dim(0), f = xv.dim(1);
  if (stats.mean.numel() != f) throw InvalidInputError("batch_norm1d: stats not initialized");

  TensorT<T> mu({f}), var({f});
  if (training) {
    if (n < 2) throw InvalidInputError("batch_norm1d: batch too small for training mode");
    for (int64_t j = 0; j < f; ++j) {
      T m = 0;
      for (int64_t i = 0; i < n; ++i) m += xv.at2(i, j);
      m /= static_cast<T>(n);
      T v = 0;
      for (int64_t i = 0; i < n; ++i) {
        T d = xv.at2(i, j) - m;
        v += d * d;
      }
      mu[j] = m;
      var[j] = v / static_cast<T>(n);
      stats.mean[j] = (T(1) - momentum) * stats.mean[j] + momentum * m;
      stats.var[j] = (T(1) - momentum) * stats.var[j] + momentum * (v / static_cast<T>(n - 1));
    }
  } else {
    mu = stats.mean;
    var = stats.var;
  }

  TensorT<T> out({n, f});
  TensorT<T> xhat({n, f});
  TensorT<T> istd({f});
  for (int64_t j = 0; j < f; ++j) istd[j] = T(1) / std::sqrt(var[j] + eps);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < f; ++j) {
      T v = (xv.at2(i, j) - mu[j]) * istd[j];
      xhat.at2(i, j) = v;
      out.at2(i, j) = gamma.value()[j] * v + beta.value()[j];
    }

  auto xp = x.node(), gp = gamma.node(), bp = beta.node();
  auto xhat_s = std::make_shared<TensorT<T>>(std::move(xhat));
  auto istd_s = std::make_shared<TensorT<T>>(std::move(istd));
  return make_op<T>(std::move(out), {xp, gp, bp},
                    [xp, gp, bp, xhat_s, istd_s, n, f, training](Node<T>& self) mutable {
    if (gp->requires_grad) gp->ensure_grad();
    if (bp->requires_grad) bp->ensure_grad();
    if (xp->requires_grad) xp->ensure_grad();
    for (int64_t j = 0; j < f; ++j) {
      T dg = 0, db = 0;
      for (int64_t i = 0; i < n; ++i) {
        dg += self.grad.at2(i, j) * xhat_s->at2(i, j);
        db += self.grad.at2(i, j);
      }
      if (gp->requires_grad) gp->grad[j] += dg;
      if (bp->requires_grad) bp->grad[j] += db;
      if (xp->requires_grad) {
        T ga = gp->value[j], istd = (*istd_s)[j];
        if (training) {
          T s1 = db / static_cast<T>(n), s2 = dg / static_cast<T>(n);
          for (int64_t i = 0; i < n; ++i)
            xp->grad.at2(i, j) +=
                ga * istd * (self.grad.at2(i, j) - s1 - xhat_s->at2(i, j) * s2);
        } else {
          for (int64_t i = 0; i < n; ++i) xp->grad.at2(i, j) += ga * istd * self.grad.at2(i, j);
        }
      }
    }
  });
}

// ---- classification ----

// row-wise log softmax of [N,C]
template <class T>
Var<T> log_softmax(const Var<T>& x) {
  const auto& xv = x.value();
  if (xv.rank() != 2) throw InvalidInputError("log_softmax expects N x C");
  int64_t n = xv.dim(0), c = xv.dim(1);
  TensorT<T> out({n, c});
  for (int64_t i = 0; i < n; ++i) {
    T mx = xv.at2(i, 0);
    for (int64_t j = 1; j < c; ++j) mx = std::max(mx, xv.at2(i, j));
    T lse = 0;
    for (int64_t j = 0; j < c; ++j) lse += std::exp(xv.at2(i, j) - mx);
    lse = mx + std::log(lse);
    for (int64_t j = 0; j < c; ++j) out.at2(i, j) = xv.at2(i, j) - lse;
  }
  auto xp = x.node();
  return make_op<T>(std::move(out), {xp}, [xp, n, c](Node<T>& self) mutable {
    if (!xp->requires_grad) return;
    xp->ensure_grad();
    for (int64_t i = 0; i < n; ++i) {
      T gsum = 0;
      for (int64_t j = 0; j < c; ++j) gsum += self.grad.at2(i, j);
      for (int64_t j = 0; j < c; ++j)
        xp->grad.at2(i, j) += self.grad.at2(i, j) - std::exp(self.value.at2(i, j)) * gsum;
    }
  });
}

// mean negative log-likelihood of integer labels under [N,C] log-probs
template <class T>
Var<T> nll_loss(const Var<T>& logp, const std::vector<int>& labels) {
  const auto& lv = logp.value();
  int64_t n = lv.dim(0), c = lv.dim(1);
  if (static_cast<int64_t>(labels.size()) != n) throw InvalidInputError("nll_loss: label count");
  T acc = 0;
  for (int64_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || labels[i] >= c) throw InvalidInputError("nll_loss: label out of range");
    acc -= lv.at2(i, labels[i]);
  }
  TensorT<T> out({1});
  out[0] = acc / static_cast<T>(n);
  auto lp = logp.node();
  auto labels_s = std::make_shared<std::vector<int>>(labels);
  return make_op<T>(std::move(out), {lp}, [lp, labels_s, n](Node<T>& self) mutable {
    if (!lp->requires_grad) return;
    lp->ensure_grad();
    T g = self.grad[0] / static_cast<T>(n);
    for (int64_t i = 0; i < n; ++i) lp->grad.at2(i, (*labels_s)[i]) -= g;
  });
}

// ---- parameters / optimizer ----

template <class T>
class ParamStore {
 public:
  Var<T>& add(const std::string& name, TensorT<T> value) {
    for (auto& [n, v] : params_)
      if (n == name) throw InvalidInputError("duplicate parameter: " + name);
    params_.emplace_back(name, Var<T>::param(std::move(value)));
    return params_.back().second;
  }

  Var<T>& get(const std::string& name) {
    for (auto& [n, v] : params_)
      if (n == name) return v;
    throw InvalidInputError("unknown parameter: " + name);
  }

  bool has(const std::string& name) const {
    for (auto& [n, v] : params_)
      if (n == name) return true;
    return false;
  }

  std::vector<std::pair<std::string, Var<T>>>& items() { return params_; }
  const std::vector<std::pair<std::string, Var<T>>>& items() const { return params_; }
  size_t size() const { return params_.size(); }

  void zero_grad() {
    for (auto& [n, v] : params_) v.zero_grad();
  }

  int64_t count_scalars() const {
    int64_t s = 0;
    for (auto& [n, v] : params_) s += v.value().numel();
    return s;
  }

 private:
  std::vector<std::pair<std::string, Var<T>>> params_;
};

template <class T>
class Adam {
 public:
  Adam(ParamStore<T>& store, T lr, T beta1 = T(0.9), T beta2 = T(0.999), T eps = T(1e-8))
      : store_(store), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (auto& [name, p] : store.items()) {
      m_.emplace_back(TensorT<T>(p.value().shape));
      v_.emplace_back(TensorT<T>(p.value().shape));
    }
  }

  void step() {
    ++t_;
    T bc1 = T(1) - std::pow(beta1_, static_cast<T>(t_));
    T bc2 = T(1) - std::pow(beta2_, static_cast<T>(t_));
    size_t idx = 0;
    for (auto& [name, p] : store_.items()) {
      auto& m = m_[idx];
      auto& v = v_[idx];
      ++idx;
      if (p.grad().numel() == 0) continue;
      auto& val = p.value();
      const auto& g = p.grad();
      for (int64_t i = 0; i < val.numel(); ++i) {
        m[i] = beta1_ * m[i] + (T(1) - beta1_) * g[i];
        v[i] = beta2_ * v[i] + (T(1) - beta2_) * g[i] * g[i];
        val[i] -= lr_ * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
      }
    }
  }

  int64_t steps() const { return t_; }

 private:
  ParamStore<T>& store_;
  T lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::vector<TensorT<T>> m_, v_;
};

}  // namespace lf::ad
