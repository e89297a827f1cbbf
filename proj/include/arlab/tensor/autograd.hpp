// SPDX-License-Identifier: Apache-2.0
//
// Tape-based reverse-mode automatic differentiation over BasicTensor.
//
// A Tape owns every intermediate value produced during one forward pass.
// Operations are free functions taking Var handles; each records a node
// holding its output, its parents and a closure that pushes the output
// gradient back to the parents. Nodes are appended in evaluation order, so
// the tape is acyclic and a single reverse sweep computes all gradients.
#pragma once

#include <Eigen/Core>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "arlab/tensor/tensor.hpp"

namespace arlab {

enum class OpKind {
  Leaf,
  MatMul,
  Add,
  Sub,
  Mul,
  Scale,
  Transpose,
  Reshape,
  Slice,
  Concat,
  Softmax,
  LayerNorm,
  Gelu,
  Silu,
  Embedding,
  Mean,
  Sum,
  Mse,
  L1,
};

inline const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::Leaf: return "leaf";
    case OpKind::MatMul: return "matmul";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Scale: return "scale";
    case OpKind::Transpose: return "transpose";
    case OpKind::Reshape: return "reshape";
    case OpKind::Slice: return "slice";
    case OpKind::Concat: return "concat";
    case OpKind::Softmax: return "softmax";
    case OpKind::LayerNorm: return "layer_norm";
    case OpKind::Gelu: return "gelu";
    case OpKind::Silu: return "silu";
    case OpKind::Embedding: return "embedding";
    case OpKind::Mean: return "mean";
    case OpKind::Sum: return "sum";
    case OpKind::Mse: return "mse";
    case OpKind::L1: return "l1";
  }
  return "?";
}

template <class T>
using GradientMap = std::map<std::string, BasicTensor<T>>;

template <class T>
class Tape;

template <class T>
struct Var {
  Tape<T>* tape = nullptr;
  int id = -1;

  const BasicTensor<T>& value() const { return tape->value(*this); }
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const { return tape->requires_grad(*this); }
};

template <class T>
struct TapeNode {
  OpKind kind = OpKind::Leaf;
  std::vector<int> parents;
  BasicTensor<T> value;
  BasicTensor<T> grad;
  bool has_grad = false;
  bool requires_grad = false;
  std::string param_name;
  std::function<void(Tape<T>&, int)> backward_fn;
};

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// C (m x n) (+)= op(A) * op(B); op(A) is m x k.
template <class T>
void gemm(const T* a, const T* b, T* c, std::int64_t m, std::int64_t k, std::int64_t n, bool trans_a,
          bool trans_b, bool accumulate) {
  using Map = Eigen::Map<const RowMat<T>>;
  Eigen::Map<RowMat<T>> cm(c, m, n);
  const Map am(a, trans_a ? k : m, trans_a ? m : k);
  const Map bm(b, trans_b ? n : k, trans_b ? k : n);
  if (!accumulate) cm.setZero();
  if (!trans_a && !trans_b)
    cm.noalias() += am * bm;
  else if (trans_a && !trans_b)
    cm.noalias() += am.transpose() * bm;
  else if (!trans_a && trans_b)
    cm.noalias() += am * bm.transpose();
  else
    cm.noalias() += am.transpose() * bm.transpose();
}

inline std::vector<std::int64_t> strides_of(const Shape& s) {
  std::vector<std::int64_t> st(s.size(), 1);
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * s[i + 1];
  return st;
}

/// Source index for every element of `in` with axes d0/d1 swapped.
inline std::vector<std::int64_t> transpose_map(const Shape& in, int d0, int d1) {
  Shape out = in;
  std::swap(out[d0], out[d1]);
  const auto in_st = strides_of(in);
  std::vector<std::int64_t> src_st = in_st;
  std::swap(src_st[d0], src_st[d1]);
  const std::int64_t n = shape_numel(out);
  std::vector<std::int64_t> map(static_cast<std::size_t>(n));
  std::vector<std::int64_t> idx(out.size(), 0);
  std::int64_t src = 0;
  for (std::int64_t o = 0; o < n; ++o) {
    map[o] = src;
    for (int ax = static_cast<int>(out.size()) - 1; ax >= 0; --ax) {
      if (++idx[ax] < out[ax]) {
        src += src_st[ax];
        break;
      }
      src -= src_st[ax] * (out[ax] - 1);
      idx[ax] = 0;
    }
  }
  return map;
}

template <class T>
T erf_t(T x) {
  return static_cast<T>(std::erf(static_cast<double>(x)));
}

}  // namespace detail

template <class T>
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(BasicTensor<T> value) { return leaf(std::move(value), false); }

  Var<T> leaf(BasicTensor<T> value, bool requires_grad, std::string name = {}) {
    if (!value.all_finite()) throw NumericError("non-finite value in leaf tensor " + name);
    TapeNode<T> n;
    n.kind = OpKind::Leaf;
    n.value = std::move(value);
    n.requires_grad = requires_grad && grad_enabled_;
    n.param_name = std::move(name);
    nodes_.push_back(std::move(n));
    return Var<T>{this, static_cast<int>(nodes_.size()) - 1};
  }

  /// Named trainable leaf; its gradient is reported under `name` by backward().
  Var<T> param(const std::string& name, const BasicTensor<T>& value) { return leaf(value, true, name); }

  Var<T> record(OpKind kind, std::vector<int> parents, BasicTensor<T> value,
                std::function<void(Tape&, int)> backward_fn) {
    if (!value.all_finite()) throw NumericError(std::string("non-finite output from ") + op_name(kind));
    TapeNode<T> n;
    n.kind = kind;
    n.value = std::move(value);
    for (int p : parents) n.requires_grad = n.requires_grad || nodes_.at(p).requires_grad;
    n.parents = std::move(parents);
    if (n.requires_grad) n.backward_fn = std::move(backward_fn);
    nodes_.push_back(std::move(n));
    return Var<T>{this, static_cast<int>(nodes_.size()) - 1};
  }

  const BasicTensor<T>& value(Var<T> v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var<T> v) const { return nodes_.at(v.id).requires_grad; }
  const TapeNode<T>& node(int id) const { return nodes_.at(id); }
  std::size_t size() const { return nodes_.size(); }
  bool grad_enabled() const { return grad_enabled_; }

  /// Gradient buffer of node `id`, zero-initialized on first access.
  BasicTensor<T>& grad_buffer(int id) {
    auto& n = nodes_.at(id);
    if (!n.has_grad) {
      n.grad = BasicTensor<T>(n.value.shape());
      n.has_grad = true;
    }
    return n.grad;
  }

  bool wants_grad(int id) const { return nodes_.at(id).requires_grad; }

  /// Gradient w.r.t. `v` after backward(); zeros if nothing reached it.
  BasicTensor<T> grad(Var<T> v) const {
    const auto& n = nodes_.at(v.id);
    return n.has_grad ? n.grad : BasicTensor<T>(n.value.shape());
  }

  /// Reverse sweep from a scalar loss. Returns gradients of every named
  /// parameter leaf (summed when a name was bound more than once).
  GradientMap<T> backward(Var<T> loss) {
    ARLAB_REQUIRE(loss.tape == this, "loss belongs to another tape");
    const auto& ln = nodes_.at(loss.id);
    ARLAB_REQUIRE(ln.value.size() == 1, "backward needs a scalar loss, got shape " + shape_str(ln.value.shape()));
    grad_buffer(loss.id)[0] = T{1};
    for (int i = loss.id; i >= 0; --i) {
      auto& n = nodes_[i];
      if (n.has_grad && n.backward_fn) n.backward_fn(*this, i);
    }
    GradientMap<T> out;
    for (auto& n : nodes_) {
      if (n.kind != OpKind::Leaf || n.param_name.empty() || !n.requires_grad) continue;
      auto g = n.has_grad ? n.grad : BasicTensor<T>(n.value.shape());
      auto it = out.find(n.param_name);
      if (it == out.end()) {
        out.emplace(n.param_name, std::move(g));
      } else {
        for (std::size_t j = 0; j < g.size(); ++j) it->second[j] += g[j];
      }
    }
    return out;
  }

 private:
  std::vector<TapeNode<T>> nodes_;
  bool grad_enabled_;
};

// ---------------------------------------------------------------------------
// Primitive operations
// ---------------------------------------------------------------------------

namespace detail {
template <class T>
void same_tape(Var<T> a, Var<T> b) {
  ARLAB_REQUIRE(a.tape != nullptr && a.tape == b.tape, "operands live on different tapes");
}
}  // namespace detail

/// [M,K]x[K,N] or batched [G,M,K]x[G,K,N].
template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
  detail::same_tape(a, b);
  const auto& A = a.value();
  const auto& B = b.value();
  ARLAB_REQUIRE(A.rank() == B.rank() && (A.rank() == 2 || A.rank() == 3),
                "matmul expects two rank-2 or two rank-3 tensors, got " + shape_str(A.shape()) + " x " +
                    shape_str(B.shape()));
  const bool batched = A.rank() == 3;
  const std::int64_t g = batched ? A.dim(0) : 1;
  const std::int64_t m = A.dim(-2), k = A.dim(-1), n = B.dim(-1);
  ARLAB_REQUIRE(B.dim(-2) == k && (!batched || B.dim(0) == g),
                "matmul shape mismatch " + shape_str(A.shape()) + " x " + shape_str(B.shape()));
  Shape os = batched ? Shape{g, m, n} : Shape{m, n};
  BasicTensor<T> out(os);
  for (std::int64_t i = 0; i < g; ++i)
    detail::gemm(A.data().data() + i * m * k, B.data().data() + i * k * n, out.data().data() + i * m * n, m, k, n,
                 false, false, false);
  return a.tape->record(OpKind::MatMul, {a.id, b.id}, std::move(out), [=](Tape<T>& tp, int self) {
    const auto& gout = tp.node(self).grad;
    const auto& Av = tp.node(a.id).value;
    const auto& Bv = tp.node(b.id).value;
    if (tp.wants_grad(a.id)) {
      auto& ga = tp.grad_buffer(a.id);
      for (std::int64_t i = 0; i < g; ++i)
        detail::gemm(gout.data().data() + i * m * n, Bv.data().data() + i * k * n, ga.data().data() + i * m * k, m,
                     n, k, false, true, true);
    }
    if (tp.wants_grad(b.id)) {
      auto& gb = tp.grad_buffer(b.id);
      for (std::int64_t i = 0; i < g; ++i)
        detail::gemm(Av.data().data() + i * m * k, gout.data().data() + i * m * n, gb.data().data() + i * k * n, k,
                     m, n, true, false, true);
    }
  });
}

/// Elementwise sum. `b` may also be a rank-1 bias matching a's last dimension.
template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::same_tape(a, b);
  const auto& A = a.value();
  const auto& B = b.value();
  const bool bias = A.shape() != B.shape();
  if (bias)
    ARLAB_REQUIRE(B.rank() == 1 && B.dim(0) == A.dim(-1),
                  "add shape mismatch " + shape_str(A.shape()) + " + " + shape_str(B.shape()));
  BasicTensor<T> out = A;
  const std::size_t w = bias ? B.size() : out.size();
  const std::size_t rows = w ? out.size() / w : 0;
  for (std::size_t r = 0; r < rows; ++r) {
    T* o = out.data().data() + r * w;
    const T* bb = B.data().data();
    for (std::size_t j = 0; j < w; ++j) o[j] += bb[j];
  }
  return a.tape->record(OpKind::Add, {a.id, b.id}, std::move(out), [=](Tape<T>& tp, int self) {
    const auto& gout = tp.node(self).grad;
    if (tp.wants_grad(a.id)) {
      auto& ga = tp.grad_buffer(a.id);
      for (std::size_t i = 0; i < gout.size(); ++i) ga[i] += gout[i];
    }
    if (tp.wants_grad(b.id)) {
      T* gb = tp.grad_buffer(b.id).data().data();
      for (std::size_t r = 0; r < rows; ++r) {
        const T* g = gout.data().data() + r * w;
        for (std::size_t j = 0; j < w; ++j) gb[j] += g[j];
      }
    }
  });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  detail::same_tape(a, b);
  const auto& A = a.value();
  const auto& B = b.value();
  ARLAB_REQUIRE(A.shape() == B.shape(), "sub shape mismatch " + shape_str(A.shape()) + " - " + shape_str(B.shape()));
  BasicTensor<T> out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= B[i];
  return a.tape->record(OpKind::Sub, {a.id, b.id}, std::move(out), [=](Tape<T>& tp, int self) {
    const auto& gout = tp.node(self).grad;
    if (tp.wants_grad(a.id)) {
      auto& ga = tp.grad_buffer(a.id);
      for (std::size_t i = 0; i < gout.size(); ++i) ga[i] += gout[i];
    }
    if (tp.wants_grad(b.id)) {
      auto& gb = tp.grad_buffer(b.id);
      for (std::size_t i = 0; i < gout.size(); ++i) gb[i] -= gout[i];
    }
  });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  detail::same_tape(a, b);
  const auto& A = a.value();
  const auto& B = b.value();
  ARLAB_REQUIRE(A.shape() == B.shape(), "mul shape mismatch " + shape_str(A.shape()) + " * " + shape_str(B.shape()));
  BasicTensor<T> out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
  return a.tape->record(OpKind::Mul, {a.id, b.id}, std::move(out), [=](Tape<T>& tp, int self) {
    const auto& gout = tp.node(self).grad;
    const auto& Av = tp.node(a.id).value;
    const auto& Bv = tp.node(b.id).value;
    if (tp.wants_grad(a.id)) {
      auto& ga = tp.grad_buffer(a.id);
      for (std::size_t i = 0; i < gout.size(); ++i) ga[i] += gout[i] * Bv[i];
    }
    if (tp.wants_grad(b.id)) {
      auto& gb = tp.grad_buffer(b.id);
      for (std::size_t i = 0; i < gout.size(); ++i) gb[i] += gout[i] * Av[i];
    }
  });
}

template <class T>
Var<T> scale(Var<T> a, T s) {
  BasicTensor<T> out = a.value();
  for (auto& v : out.storage()) v *= s;
  return a.tape->record(OpKind::Scale, {a.id}, std::move(out), [=](Tape<T>& tp, int self) {
    const auto& gout = tp.node(self).grad;
    auto& ga = tp.grad_buffer(a.id);
    for (std::size_t i = 0; i < gout.size(); ++i) ga[i] += gout[i] * s;
  });
}

/// Swap axes d0 and d1.
template <class T>
Var<T> transpose(Var<T> a, int d0, int d1) {
  const auto& A = a.value();
  const int r = A.rank();
  if (d0 < 0) d0 += r;
  if (d1 < 0) d1 += r;
  ARLAB_REQUIRE(d0 >= 0 && d1 >= 0 && d0 < r && d1 < r, "transpose axis out of range");
  Shape os = A.shape();
  std::swap(os[d0], os[d1]);
  auto map = std::make_shared<std::vector<std::int64_t>>(detail::transpose_map(A.shape(), d0, d1));
  BasicTensor<T> out(os);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[(*map)[i]];
  return a.tape->record(OpKind::Transpose, {a.id}, std::move(out), [=](Tape<T>& tp, int self) {
    const auto& gout = tp.node(self).grad;
    auto& ga = tp.grad_buffer(a.id);
    for (std::size_t i = 0; i < gout.size(); ++i) ga[(*map)[i]] += gout[i];
  });
}

template <class T>
Var<T> reshape(Var<T> a, Shape shape) {
  BasicTensor<T> out = a.value().reshaped(std::move(shape));
  return a.tape->record(OpKind::Reshape, {a.id}, std::move(out), [=](Tape<T>& tp, int self) {
    const auto& gout = tp.node(self).grad;
    auto& ga = tp.grad_buffer(a.id);
    for (std::size_t i = 0; i < gout.size(); ++i) ga[i] += gout[i];
  });
}

/// Elements [start, start+len) along `dim`.
template <class T>
Var<T> slice(Var<T> a, int dim, std::int64_t start, std::int64_t len) {
  const auto& A = a.value();
  if (dim < 0) dim += A.rank();
  ARLAB_REQUIRE(dim >= 0 && dim < A.rank(), "slice axis out of range");
  ARLAB_REQUIRE(start >= 0 && len > 0 && start + len <= A.dim(dim), "slice range out of bounds");
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < dim; ++i) outer *= A.dim(i);
  for (int i = dim + 1; i < A.rank(); ++i) inner *= A.dim(i);
  const std::int64_t full = A.dim(dim);
  Shape os = A.shape();
  os[dim] = len;
  BasicTensor<T> out(os);
  for (std::int64_t o = 0; o < outer; ++o)
    std::copy_n(A.data().begin() + (o * full + start) * inner, len * inner, out.data().begin() + o * len * inner);
  return a.tape->record(OpKind::Slice, {a.id}, std::move(out), [=](Tape<T>& tp, int self) {
    const auto& gout = tp.node(self).grad;
    auto& ga = tp.grad_buffer(a.id);
    for (std::int64_t o = 0; o < outer; ++o)
      for (std::int64_t j = 0; j < len * inner; ++j) ga[(o * full + start) * inner + j] += gout[o * len * inner + j];
  });
}

template <class T>
Var<T> concat(const std::vector<Var<T>>& parts, int dim) {
  ARLAB_REQUIRE(!parts.empty(), "concat of zero tensors");
  const auto& first = parts.front().value();
  if (dim < 0) dim += first.rank();
  ARLAB_REQUIRE(dim >= 0 && dim < first.rank(), "concat axis out of range");
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < dim; ++i) outer *= first.dim(i);
  for (int i = dim + 1; i < first.rank(); ++i) inner *= first.dim(i);
  std::vector<std::int64_t> lens;
  std::vector<int> ids;
  std::int64_t total = 0;
  for (const auto& p : parts) {
    detail::same_tape(parts.front(), p);
    const auto& v = p.value();
    ARLAB_REQUIRE(v.rank() == first.rank(), "concat rank mismatch");
    for (int i = 0; i < v.rank(); ++i)
      if (i != dim) ARLAB_REQUIRE(v.dim(i) == first.dim(i), "concat shape mismatch off the concat axis");
    lens.push_back(v.dim(dim));
    ids.push_back(p.id);
    total += v.dim(dim);
  }
  Shape os = first.shape();
  os[dim] = total;
  BasicTensor<T> out(os);
  std::int64_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& v = parts[k].value();
    for (std::int64_t o = 0; o < outer; ++o)
      std::copy_n(v.data().begin() + o * lens[k] * inner, lens[k] * inner,
                  out.data().begin() + (o * total + off) * inner);
    off += lens[k];
  }
  return parts.front().tape->record(OpKind::Concat, ids, std::move(out), [=](Tape<T>& tp, int self) {
    const auto& gout = tp.node(self).grad;
    std::int64_t o2 = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (tp.wants_grad(ids[k])) {
        auto& g = tp.grad_buffer(ids[k]);
        for (std::int64_t o = 0; o < outer; ++o)
          for (std::int64_t j = 0; j < lens[k] * inner; ++j) g[o * lens[k] * inner + j] += gout[(o * total + o2) * inner + j];
      }
      o2 += lens[k];
    }
  });
}

enum class AttnMask { none, causal };

/// Softmax over the last axis. With AttnMask::causal the last two axes form
/// a square score matrix and entries above the diagonal are forced to zero.
template <class T>
Var<T> softmax(Var<T> a, AttnMask mask = AttnMask::none) {
  const auto& A = a.value();
  const std::int64_t L = A.dim(-1);
  const std::int64_t rows = static_cast<std::int64_t>(A.size()) / L;
  const bool causal = mask == AttnMask::causal;
  if (causal) ARLAB_REQUIRE(A.rank() >= 2 && A.dim(-2) == L, "causal softmax needs square trailing axes");
  BasicTensor<T> out(A.shape());
  for (std::int64_t r = 0; r < rows; ++r) {
    const std::int64_t lim = causal ? (r % L) + 1 : L;
    auto x = A.row(r);
    auto y = out.row(r);
    T mx = x[0];
    for (std::int64_t j = 1; j < lim; ++j) mx = std::max(mx, x[j]);
    T s{0};
    for (std::int64_t j = 0; j < lim; ++j) s += (y[j] = std::exp(x[j] - mx));
    for (std::int64_t j = 0; j < lim; ++j) y[j] /= s;
  }
  return a.tape->record(OpKind::Softmax, {a.id}, std::move(out), [=](Tape<T>& tp, int self) {
    const auto& gout = tp.node(self).grad;
    const auto& y = tp.node(self).value;
    auto& ga = tp.grad_buffer(a.id);
    for (std::int64_t r = 0; r < rows; ++r) {
      const std::int64_t lim = causal ? (r % L) + 1 : L;
      T dot{0};
      for (std::int64_t j = 0; j < lim; ++j) dot += gout[r * L + j] * y[r * L + j];
      for (std::int64_t j = 0; j < lim; ++j) ga[r * L + j] += y[r * L + j] * (gout[r * L + j] - dot);
    }
  });
}

inline constexpr double kLayerNormEps = 1e-6;

namespace detail {
template <class T>
Var<T> layer_norm_impl(Var<T> x, const Var<T>* gamma, const Var<T>* beta, double eps) {
  const auto& X = x.value();
  const std::int64_t w = X.dim(-1);
  const std::int64_t rows = static_cast<std::int64_t>(X.size()) / w;
  if (gamma) {
    ARLAB_REQUIRE(gamma->value().size() == static_cast<std::size_t>(w) && beta->value().size() == static_cast<std::size_t>(w),
                  "layer_norm affine parameters must match the last dimension");
  }
  auto xhat = std::make_shared<BasicTensor<T>>(X.shape());
  auto rstd = std::make_shared<std::vector<T>>(static_cast<std::size_t>(rows));
  BasicTensor<T> out(X.shape());
  for (std::int64_t r = 0; r < rows; ++r) {
    auto xr = X.row(r);
    T mu{0};
    for (auto v : xr) mu += v;
    mu /= static_cast<T>(w);
    T var{0};
    for (auto v : xr) var += (v - mu) * (v - mu);
    var /= static_cast<T>(w);
    const T rs = T{1} / std::sqrt(var + static_cast<T>(eps));
    (*rstd)[r] = rs;
    for (std::int64_t j = 0; j < w; ++j) {
      const T h = (xr[j] - mu) * rs;
      xhat->at(r, j) = h;
      out.at(r, j) = gamma ? h * gamma->value()[j] + beta->value()[j] : h;
    }
  }
  std::vector<int> parents{x.id};
  const int gid = gamma ? gamma->id : -1;
  const int bid = beta ? beta->id : -1;
  if (gamma) {
    parents.push_back(gid);
    parents.push_back(bid);
  }
  return x.tape->record(OpKind::LayerNorm, parents, std::move(out), [=](Tape<T>& tp, int self) {
    const auto& gout = tp.node(self).grad;
    std::vector<T> gh(static_cast<std::size_t>(w));
    const BasicTensor<T>* gv = gid >= 0 ? &tp.node(gid).value : nullptr;
    for (std::int64_t r = 0; r < rows; ++r) {
      T mean_g{0}, mean_gx{0};
      for (std::int64_t j = 0; j < w; ++j) {
        gh[j] = gv ? gout.at(r, j) * (*gv)[j] : gout.at(r, j);
        mean_g += gh[j];
        mean_gx += gh[j] * xhat->at(r, j);
      }
      mean_g /= static_cast<T>(w);
      mean_gx /= static_cast<T>(w);
      if (tp.wants_grad(x.id)) {
        auto& gx = tp.grad_buffer(x.id);
        for (std::int64_t j = 0; j < w; ++j) gx.at(r, j) += (*rstd)[r] * (gh[j] - mean_g - xhat->at(r, j) * mean_gx);
      }
    }
    if (gid >= 0 && tp.wants_grad(gid)) {
      auto& gg = tp.grad_buffer(gid);
      for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t j = 0; j < w; ++j) gg[j] += gout.at(r, j) * xhat->at(r, j);
    }
    if (bid >= 0 && tp.wants_grad(bid)) {
      auto& gb = tp.grad_buffer(bid);
      for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t j = 0; j < w; ++j) gb[j] += gout.at(r, j);
    }
  });
}
}  // namespace detail

/// Normalizes each row over the last axis (no affine).
template <class T>
Var<T> layer_norm(Var<T> x, double eps = kLayerNormEps) {
  return detail::layer_norm_impl<T>(x, nullptr, nullptr, eps);
}

template <class T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, double eps = kLayerNormEps) {
  return detail::layer_norm_impl<T>(x, &gamma, &beta, eps);
}

template <class T>
Var<T> gelu(Var<T> a) {
  BasicTensor<T> out = a.value();
  for (auto& v : out.storage()) v = T(0.5) * v * (T(1) + detail::erf_t(v * T(M_SQRT1_2)));
  return a.tape->record(OpKind::Gelu, {a.id}, std::move(out), [=](Tape<T>& tp, int self) {
    const auto& gout = tp.node(self).grad;
    const auto& x = tp.node(a.id).value;
    auto& ga = tp.grad_buffer(a.id);
    const T inv_sqrt_2pi = T(0.3989422804014327);
    for (std::size_t i = 0; i < gout.size(); ++i) {
      const T v = x[i];
      const T d = T(0.5) * (T(1) + detail::erf_t(v * T(M_SQRT1_2))) + v * inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
      ga[i] += gout[i] * d;
    }
  });
}

template <class T>
Var<T> silu(Var<T> a) {
  BasicTensor<T> out = a.value();
  for (auto& v : out.storage()) v = v / (T(1) + std::exp(-v));
  return a.tape->record(OpKind::Silu, {a.id}, std::move(out), [=](Tape<T>& tp, int self) {
    const auto& gout = tp.node(self).grad;
    const auto& x = tp.node(a.id).value;
    auto& ga = tp.grad_buffer(a.id);
    for (std::size_t i = 0; i < gout.size(); ++i) {
      const T s = T(1) / (T(1) + std::exp(-x[i]));
      ga[i] += gout[i] * s * (T(1) + x[i] * (T(1) - s));
    }
  });
}

/// Row gather: out[i] = table[indices[i]]. Serves as embedding lookup and as
/// a general row selection/reordering primitive.
template <class T>
Var<T> embedding(Var<T> table, std::vector<std::int64_t> indices) {
  const auto& Tb = table.value();
  ARLAB_REQUIRE(Tb.rank() == 2, "embedding table must be rank 2");
  ARLAB_REQUIRE(!indices.empty(), "embedding lookup with no indices");
  const std::int64_t V = Tb.dim(0), D = Tb.dim(1);
  for (auto ix : indices) ARLAB_REQUIRE(ix >= 0 && ix < V, "embedding index out of range");
  BasicTensor<T> out(Shape{static_cast<std::int64_t>(indices.size()), D});
  for (std::size_t i = 0; i < indices.size(); ++i) std::copy_n(Tb.row(indices[i]).begin(), D, out.row(i).begin());
  auto idx = std::make_shared<std::vector<std::int64_t>>(std::move(indices));
  return table.tape->record(OpKind::Embedding, {table.id}, std::move(out), [=](Tape<T>& tp, int self) {
    const auto& gout = tp.node(self).grad;
    auto& gt = tp.grad_buffer(table.id);
    for (std::size_t i = 0; i < idx->size(); ++i) {
      auto src = gout.row(static_cast<std::int64_t>(i));
      auto dst = gt.row((*idx)[i]);
      for (std::int64_t j = 0; j < D; ++j) dst[j] += src[j];
    }
  });
}

template <class T>
Var<T> sum(Var<T> a) {
  T s{0};
  for (auto v : a.value().data()) s += v;
  return a.tape->record(OpKind::Sum, {a.id}, BasicTensor<T>::scalar(s), [=](Tape<T>& tp, int self) {
    const T g = tp.node(self).grad[0];
    auto& ga = tp.grad_buffer(a.id);
    for (auto& v : ga.storage()) v += g;
  });
}

template <class T>
Var<T> mean(Var<T> a) {
  const T n = static_cast<T>(a.value().size());
  T s{0};
  for (auto v : a.value().data()) s += v;
  return a.tape->record(OpKind::Mean, {a.id}, BasicTensor<T>::scalar(s / n), [=](Tape<T>& tp, int self) {
    const T g = tp.node(self).grad[0] / n;
    auto& ga = tp.grad_buffer(a.id);
    for (auto& v : ga.storage()) v += g;
  });
}

/// Mean of squared differences over all elements.
template <class T>
Var<T> mse(Var<T> a, Var<T> b) {
  detail::same_tape(a, b);
  const auto& A = a.value();
  const auto& B = b.value();
  ARLAB_REQUIRE(A.shape() == B.shape(), "mse shape mismatch " + shape_str(A.shape()) + " vs " + shape_str(B.shape()));
  const T n = static_cast<T>(A.size());
  T s{0};
  for (std::size_t i = 0; i < A.size(); ++i) s += (A[i] - B[i]) * (A[i] - B[i]);
  return a.tape->record(OpKind::Mse, {a.id, b.id}, BasicTensor<T>::scalar(s / n), [=](Tape<T>& tp, int self) {
    const T g = tp.node(self).grad[0] * T(2) / n;
    const auto& Av = tp.node(a.id).value;
    const auto& Bv = tp.node(b.id).value;
    if (tp.wants_grad(a.id)) {
      auto& ga = tp.grad_buffer(a.id);
      for (std::size_t i = 0; i < Av.size(); ++i) ga[i] += g * (Av[i] - Bv[i]);
    }
    if (tp.wants_grad(b.id)) {
      auto& gb = tp.grad_buffer(b.id);
      for (std::size_t i = 0; i < Av.size(); ++i) gb[i] -= g * (Av[i] - Bv[i]);
    }
  });
}

/// Mean absolute difference over all elements.
template <class T>
Var<T> l1(Var<T> a, Var<T> b) {
  detail::same_tape(a, b);
  const auto& A = a.value();
  const auto& B = b.value();
  ARLAB_REQUIRE(A.shape() == B.shape(), "l1 shape mismatch " + shape_str(A.shape()) + " vs " + shape_str(B.shape()));
  const T n = static_cast<T>(A.size());
  T s{0};
  for (std::size_t i = 0; i < A.size(); ++i) s += std::abs(A[i] - B[i]);
  return a.tape->record(OpKind::L1, {a.id, b.id}, BasicTensor<T>::scalar(s / n), [=](Tape<T>& tp, int self) {
    const T g = tp.node(self).grad[0] / n;
    const auto& Av = tp.node(a.id).value;
    const auto& Bv = tp.node(b.id).value;
    auto sgn = [](T v) { return v > 0 ? T(1) : (v < 0 ? T(-1) : T(0)); };
    if (tp.wants_grad(a.id)) {
      auto& ga = tp.grad_buffer(a.id);
      for (std::size_t i = 0; i < Av.size(); ++i) ga[i] += g * sgn(Av[i] - Bv[i]);
    }
    if (tp.wants_grad(b.id)) {
      auto& gb = tp.grad_buffer(b.id);
      for (std::size_t i = 0; i < Av.size(); ++i) gb[i] -= g * sgn(Av[i] - Bv[i]);
    }
  });
}

}  // namespace arlab
