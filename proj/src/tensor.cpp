// Copyright 2026 The Phantom Authors
// SPDX-License-Identifier: Apache-2.0

#include "phantom/tensor.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "parallel.hpp"

namespace phantom {

using detail::ImplPtr;
using detail::TensorImpl;

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

namespace {

[[noreturn]] void dim_error(const std::string& op, const Shape& a, const Shape& b) {
  throw Error(ErrorCode::kDimension, op + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

[[noreturn]] void dim_error(const std::string& op, const std::string& detail) {
  throw Error(ErrorCode::kDimension, op + ": " + detail);
}

std::size_t normalize_axis(int axis, std::size_t ndim, const char* op) {
  const int nd = static_cast<int>(ndim);
  const int a = axis < 0 ? axis + nd : axis;
  if (a < 0 || a >= nd) dim_error(op, "axis " + std::to_string(axis) + " out of range for rank " + std::to_string(ndim));
  return static_cast<std::size_t>(a);
}

Tensor make_tensor(Shape shape, std::vector<double> data) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  return Tensor(std::move(impl));
}

bool any_requires_grad(std::initializer_list<const Tensor*> inputs) {
  if (!grad_enabled()) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
}

// Records `out` on the active tape when any input requires grad.
void attach(Tensor& out, std::initializer_list<const Tensor*> inputs, Tape::BackwardFn fn) {
  if (!any_requires_grad(inputs)) return;
  std::vector<ImplPtr> ins;
  ins.reserve(inputs.size());
  for (const Tensor* t : inputs) ins.push_back(t->impl_ptr());
  out.impl_ptr()->requires_grad = true;
  Tape::active().record(out, std::move(ins), std::move(fn));
}

// Gradient buffer of an input, or nullptr when it does not take gradient.
double* grad_of(const ImplPtr& p) { return p->requires_grad ? p->ensure_grad().data() : nullptr; }

std::vector<std::size_t> contiguous_strides(const Shape& shape) {
  std::vector<std::size_t> strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
  return strides;
}

struct BroadcastPlan {
  Shape out;
  std::vector<std::size_t> stride_a;
  std::vector<std::size_t> stride_b;
};

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  const std::size_t nd = std::max(a.size(), b.size());
  BroadcastPlan plan;
  plan.out.assign(nd, 1);
  plan.stride_a.assign(nd, 0);
  plan.stride_b.assign(nd, 0);
  const auto sa = contiguous_strides(a);
  const auto sb = contiguous_strides(b);
  for (std::size_t i = 0; i < nd; ++i) {
    const bool has_a = i >= nd - a.size();
    const bool has_b = i >= nd - b.size();
    const std::size_t da = has_a ? a[i - (nd - a.size())] : 1;
    const std::size_t db = has_b ? b[i - (nd - b.size())] : 1;
    if (da != db && da != 1 && db != 1) dim_error(op, a, b);
    plan.out[i] = da == 1 ? db : da;
    if (da != 1) plan.stride_a[i] = sa[i - (nd - a.size())];
    if (db != 1) plan.stride_b[i] = sb[i - (nd - b.size())];
  }
  return plan;
}

template <class Fn>
void for_each_broadcast(const BroadcastPlan& plan, Fn&& fn) {
  const std::size_t n = shape_numel(plan.out);
  const std::size_t nd = plan.out.size();
  std::vector<std::size_t> idx(nd, 0);
  std::size_t ia = 0;
  std::size_t ib = 0;
  for (std::size_t o = 0; o < n; ++o) {
    fn(o, ia, ib);
    for (std::size_t d = nd; d-- > 0;) {
      ++idx[d];
      ia += plan.stride_a[d];
      ib += plan.stride_b[d];
      if (idx[d] < plan.out[d]) break;
      ia -= plan.stride_a[d] * plan.out[d];
      ib -= plan.stride_b[d] * plan.out[d];
      idx[d] = 0;
    }
  }
}

// Elementwise binary op with broadcasting. `da`/`db` return partial
// derivatives given (x, y, result).
template <class Fwd, class DA, class DB>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, DA da, DB db) {
  if (a.shape() == b.shape()) {
    const auto x = a.data();
    const auto y = b.data();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(x[i], y[i]);
    Tensor result = make_tensor(a.shape(), std::move(out));
    attach(result, {&a, &b}, [pa = a.impl_ptr(), pb = b.impl_ptr(), da, db](TensorImpl& o) {
      double* ga = grad_of(pa);
      double* gb = grad_of(pb);
      for (std::size_t i = 0; i < o.data.size(); ++i) {
        const double g = o.grad[i];
        if (ga) ga[i] += g * da(pa->data[i], pb->data[i], o.data[i]);
        if (gb) gb[i] += g * db(pa->data[i], pb->data[i], o.data[i]);
      }
    });
    return result;
  }
  BroadcastPlan plan = plan_broadcast(a.shape(), b.shape(), name);
  std::vector<double> out(shape_numel(plan.out));
  const auto x = a.data();
  const auto y = b.data();
  for_each_broadcast(plan, [&](std::size_t o, std::size_t ia, std::size_t ib) { out[o] = fwd(x[ia], y[ib]); });
  Tensor result = make_tensor(plan.out, std::move(out));
  attach(result, {&a, &b}, [pa = a.impl_ptr(), pb = b.impl_ptr(), plan, da, db](TensorImpl& o) {
    double* ga = grad_of(pa);
    double* gb = grad_of(pb);
    for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
      const double g = o.grad[i];
      if (ga) ga[ia] += g * da(pa->data[ia], pb->data[ib], o.data[i]);
      if (gb) gb[ib] += g * db(pa->data[ia], pb->data[ib], o.data[i]);
    });
  });
  return result;
}

// Elementwise unary op; `deriv` takes (x, result).
template <class Fwd, class Deriv>
Tensor unary_op(const Tensor& x, Fwd fwd, Deriv deriv) {
  const auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(in[i]);
  Tensor result = make_tensor(x.shape(), std::move(out));
  attach(result, {&x}, [px = x.impl_ptr(), deriv](TensorImpl& o) {
    double* gx = grad_of(px);
    if (!gx) return;
    for (std::size_t i = 0; i < o.data.size(); ++i) gx[i] += o.grad[i] * deriv(px->data[i], o.data[i]);
  });
  return result;
}

// C[m,n] += A[m,k] B[k,n]
void gemm_nn(const double* A, const double* B, double* C, std::size_t m, std::size_t k, std::size_t n) {
  if (m >= 4 || n < 256) {
    detail::parallel_for(m, k * n, [&](std::size_t r0, std::size_t r1) {
      for (std::size_t i = r0; i < r1; ++i) {
        double* c = C + i * n;
        const double* a = A + i * k;
        for (std::size_t p = 0; p < k; ++p) {
          const double av = a[p];
          const double* b = B + p * n;
          for (std::size_t j = 0; j < n; ++j) c[j] += av * b[j];
        }
      }
    });
    return;
  }
  // Few rows: split columns instead.
  detail::parallel_for(n, m * k, [&](std::size_t c0, std::size_t c1) {
    for (std::size_t i = 0; i < m; ++i) {
      double* c = C + i * n;
      const double* a = A + i * k;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = a[p];
        const double* b = B + p * n;
        for (std::size_t j = c0; j < c1; ++j) c[j] += av * b[j];
      }
    }
  });
}

// dA[m,k] += G[m,n] B[k,n]^T
void gemm_nt(const double* G, const double* B, double* dA, std::size_t m, std::size_t n, std::size_t k) {
  detail::parallel_for(m, k * n, [&](std::size_t r0, std::size_t r1) {
    for (std::size_t i = r0; i < r1; ++i) {
      const double* g = G + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        const double* b = B + p * n;
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += g[j] * b[j];
        dA[i * k + p] += acc;
      }
    }
  });
}

// dB[k,n] += A[m,k]^T G[m,n]
void gemm_tn(const double* A, const double* G, double* dB, std::size_t m, std::size_t k, std::size_t n) {
  detail::parallel_for(k, m * n, [&](std::size_t p0, std::size_t p1) {
    for (std::size_t i = 0; i < m; ++i) {
      const double* g = G + i * n;
      for (std::size_t p = p0; p < p1; ++p) {
        const double av = A[i * k + p];
        if (av == 0.0) continue;
        double* d = dB + p * n;
        for (std::size_t j = 0; j < n; ++j) d[j] += av * g[j];
      }
    }
  });
}

// Maps each output element of a gather to its source offset.
Tensor gather_op(const Tensor& x, Shape out_shape, std::vector<std::size_t> source) {
  const auto in = x.data();
  std::vector<double> out(source.size());
  for (std::size_t i = 0; i < source.size(); ++i) out[i] = in[source[i]];
  Tensor result = make_tensor(std::move(out_shape), std::move(out));
  attach(result, {&x}, [px = x.impl_ptr(), src = std::move(source)](TensorImpl& o) {
    double* gx = grad_of(px);
    if (!gx) return;
    for (std::size_t i = 0; i < src.size(); ++i) gx[src[i]] += o.grad[i];
  });
  return result;
}

thread_local bool g_grad_enabled = true;

}  // namespace

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  Tensor t = make_tensor(std::move(shape), std::vector<double>(n, value));
  t.impl().requires_grad = requires_grad;
  return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    dim_error("from_data", "shape " + shape_str(shape) + " holds " + std::to_string(shape_numel(shape)) +
                               " values, got " + std::to_string(data.size()));
  }
  Tensor t = make_tensor(std::move(shape), std::move(data));
  t.impl().requires_grad = requires_grad;
  return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) { return full({}, value, requires_grad); }

detail::TensorImpl& Tensor::impl() const {
  if (!impl_) throw Error(ErrorCode::kState, "use of undefined tensor");
  return *impl_;
}

std::size_t Tensor::size(int axis) const { return shape()[normalize_axis(axis, ndim(), "size")]; }

double Tensor::item() const {
  if (numel() != 1) dim_error("item", "tensor of shape " + shape_str(shape()) + " is not a scalar");
  return impl().data[0];
}

Tensor& Tensor::set_requires_grad(bool value) {
  impl().requires_grad = value;
  return *this;
}

Tensor Tensor::detach() const { return make_tensor(impl().shape, impl().data); }

// ---------------------------------------------------------------------------
// Tape

Tape& Tape::active() {
  thread_local Tape tape;
  return tape;
}

void Tape::record(const Tensor& output, std::vector<ImplPtr> inputs, BackwardFn fn) {
  if (consumed_) throw Error(ErrorCode::kState, "tape already consumed by backward(); call reset() first");
  entries_.push_back(Entry{output.impl_ptr(), std::move(inputs), std::move(fn)});
}

void Tape::backward(const Tensor& root) {
  if (root.numel() != 1 || root.ndim() > 1) {
    throw Error(ErrorCode::kDimension, "backward: root must be a scalar, got shape " + shape_str(root.shape()));
  }
  if (consumed_) throw Error(ErrorCode::kState, "backward called twice without reset");
  if (entries_.empty()) throw Error(ErrorCode::kState, "backward: tape is empty");
  consumed_ = true;
  auto& seed = root.impl_ptr()->ensure_grad();
  seed[0] = 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    for (const auto& in : it->inputs) {
      if (in->requires_grad) in->ensure_grad();
    }
    if (it->output->grad.empty()) {
      it->output->ensure_grad();
      continue;
    }
    it->fn(*it->output);
  }
}

void Tape::reset() {
  entries_.clear();
  consumed_ = false;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void backward(const Tensor& root) { Tape::active().backward(root); }

// ---------------------------------------------------------------------------
// Linear algebra and layout

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() < 2 || b.ndim() < 2) dim_error("matmul", a.shape(), b.shape());
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  const std::size_t m = sa[sa.size() - 2];
  const std::size_t k = sa.back();
  const std::size_t n = sb.back();
  if (sb[sb.size() - 2] != k) dim_error("matmul", sa, sb);
  const Shape batch_a(sa.begin(), sa.end() - 2);
  const Shape batch_b(sb.begin(), sb.end() - 2);
  BroadcastPlan plan = plan_broadcast(batch_a, batch_b, "matmul");

  std::vector<std::array<std::size_t, 3>> pairs;
  pairs.reserve(shape_numel(plan.out));
  for_each_broadcast(plan, [&](std::size_t o, std::size_t ia, std::size_t ib) { pairs.push_back({o, ia, ib}); });

  Shape out_shape = plan.out;
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<double> out(shape_numel(out_shape), 0.0);
  const double* A = a.data().data();
  const double* B = b.data().data();
  for (const auto& [o, ia, ib] : pairs) gemm_nn(A + ia * m * k, B + ib * k * n, out.data() + o * m * n, m, k, n);

  Tensor result = make_tensor(std::move(out_shape), std::move(out));
  attach(result, {&a, &b}, [pa = a.impl_ptr(), pb = b.impl_ptr(), pairs = std::move(pairs), m, k, n](TensorImpl& o) {
    double* ga = grad_of(pa);
    double* gb = grad_of(pb);
    for (const auto& [oi, ia, ib] : pairs) {
      const double* G = o.grad.data() + oi * m * n;
      if (ga) gemm_nt(G, pb->data.data() + ib * k * n, ga + ia * m * k, m, n, k);
      if (gb) gemm_tn(pa->data.data() + ia * m * k, G, gb + ib * k * n, m, k, n);
    }
  });
  return result;
}

Tensor permute(const Tensor& x, std::span<const std::size_t> order) {
  const Shape& in = x.shape();
  if (order.size() != in.size()) dim_error("permute", "order rank mismatch for shape " + shape_str(in));
  std::vector<bool> seen(in.size(), false);
  for (std::size_t o : order) {
    if (o >= in.size() || seen[o]) dim_error("permute", "invalid axis order");
    seen[o] = true;
  }
  const auto in_strides = contiguous_strides(in);
  Shape out_shape(in.size());
  std::vector<std::size_t> strides(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) {
    out_shape[i] = in[order[i]];
    strides[i] = in_strides[order[i]];
  }
  const std::size_t n = x.numel();
  std::vector<std::size_t> source(n);
  std::vector<std::size_t> idx(in.size(), 0);
  std::size_t off = 0;
  for (std::size_t i = 0; i < n; ++i) {
    source[i] = off;
    for (std::size_t d = in.size(); d-- > 0;) {
      ++idx[d];
      off += strides[d];
      if (idx[d] < out_shape[d]) break;
      off -= strides[d] * out_shape[d];
      idx[d] = 0;
    }
  }
  return gather_op(x, std::move(out_shape), std::move(source));
}

Tensor transpose_last2(const Tensor& x) {
  if (x.ndim() < 2) dim_error("transpose_last2", "rank < 2");
  std::vector<std::size_t> order(x.ndim());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::swap(order[order.size() - 1], order[order.size() - 2]);
  return permute(x, order);
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) dim_error("reshape", x.shape(), shape);
  std::vector<double> data(x.data().begin(), x.data().end());
  Tensor result = make_tensor(std::move(shape), std::move(data));
  attach(result, {&x}, [px = x.impl_ptr()](TensorImpl& o) {
    double* gx = grad_of(px);
    if (!gx) return;
    for (std::size_t i = 0; i < o.grad.size(); ++i) gx[i] += o.grad[i];
  });
  return result;
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y, double) { return y; },
      [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "div", [](double x, double y) { return x / y; }, [](double, double y, double) { return 1.0 / y; },
      [](double x, double y, double) { return -x / (y * y); });
}

Tensor scale(const Tensor& x, double factor) {
  return unary_op(x, [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double value) {
  return unary_op(x, [value](double v) { return v + value; }, [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor exp(const Tensor& x) {
  return unary_op(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary_op(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor gelu(const Tensor& x) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  return unary_op(
      x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); },
      [](double v, double) { return 0.5 * (1.0 + std::erf(v * kInvSqrt2)) + v * kInvSqrt2Pi * std::exp(-0.5 * v * v); });
}

namespace {
double stable_sigmoid(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}
}  // namespace

Tensor sigmoid(const Tensor& x) {
  return unary_op(x, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Tensor log_sigmoid(const Tensor& x) {
  return unary_op(
      x, [](double v) { return std::min(v, 0.0) - std::log1p(std::exp(-std::abs(v))); },
      [](double v, double) { return stable_sigmoid(-v); });
}

// ---------------------------------------------------------------------------
// Softmax

Tensor softmax_lastdim(const Tensor& x, const Tensor& mask) {
  if (x.ndim() == 0) dim_error("softmax_lastdim", "scalar input");
  Tensor logits = x;
  if (mask.defined()) {
    if (mask.requires_grad()) throw Error(ErrorCode::kInvalidArgument, "softmax_lastdim: mask must not require grad");
    logits = add(x, mask);
  }
  const std::size_t cols = logits.shape().back();
  if (cols == 0) dim_error("softmax_lastdim", "empty last axis");
  const std::size_t rows = logits.numel() / cols;
  const auto in = logits.data();
  std::vector<double> out(in.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* src = in.data() + r * cols;
    double* dst = out.data() + r * cols;
    const double mx = *std::max_element(src, src + cols);
    if (mx <= 0.5 * kMaskValue) throw Error(ErrorCode::kInvalidArgument, "fully masked attention row");
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      dst[c] = std::exp(src[c] - mx);
      total += dst[c];
    }
    const double inv = 1.0 / total;
    for (std::size_t c = 0; c < cols; ++c) dst[c] *= inv;
  }
  Tensor result = make_tensor(logits.shape(), std::move(out));
  attach(result, {&logits}, [px = logits.impl_ptr(), rows, cols](TensorImpl& o) {
    double* gx = grad_of(px);
    if (!gx) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = o.data.data() + r * cols;
      const double* g = o.grad.data() + r * cols;
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += g[c] * y[c];
      for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += y[c] * (g[c] - dot);
    }
  });
  return result;
}

// ---------------------------------------------------------------------------
// Concatenation and selection

Tensor concat(const Tensor& a, const Tensor& b, int axis) {
  if (a.ndim() != b.ndim()) dim_error("concat", a.shape(), b.shape());
  const std::size_t ax = normalize_axis(axis, a.ndim(), "concat");
  for (std::size_t i = 0; i < a.ndim(); ++i) {
    if (i != ax && a.shape()[i] != b.shape()[i]) dim_error("concat", a.shape(), b.shape());
  }
  const Shape& sa = a.shape();
  std::size_t outer = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= sa[i];
  std::size_t inner = 1;
  for (std::size_t i = ax + 1; i < sa.size(); ++i) inner *= sa[i];
  const std::size_t block_a = sa[ax] * inner;
  const std::size_t block_b = b.shape()[ax] * inner;
  Shape out_shape = sa;
  out_shape[ax] += b.shape()[ax];
  std::vector<double> out(shape_numel(out_shape));
  const auto da = a.data();
  const auto db = b.data();
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(da.data() + o * block_a, block_a, out.data() + o * (block_a + block_b));
    std::copy_n(db.data() + o * block_b, block_b, out.data() + o * (block_a + block_b) + block_a);
  }
  Tensor result = make_tensor(std::move(out_shape), std::move(out));
  attach(result, {&a, &b}, [pa = a.impl_ptr(), pb = b.impl_ptr(), outer, block_a, block_b](TensorImpl& o) {
    double* ga = grad_of(pa);
    double* gb = grad_of(pb);
    for (std::size_t r = 0; r < outer; ++r) {
      const double* g = o.grad.data() + r * (block_a + block_b);
      if (ga)
        for (std::size_t i = 0; i < block_a; ++i) ga[r * block_a + i] += g[i];
      if (gb)
        for (std::size_t i = 0; i < block_b; ++i) gb[r * block_b + i] += g[block_a + i];
    }
  });
  return result;
}

Tensor concat_lastdim(const Tensor& a, const Tensor& b) { return concat(a, b, -1); }

Tensor index_select(const Tensor& x, int axis, std::span<const std::size_t> indices) {
  const std::size_t ax = normalize_axis(axis, x.ndim(), "index_select");
  const Shape& s = x.shape();
  for (std::size_t i : indices) {
    if (i >= s[ax]) dim_error("index_select", "index " + std::to_string(i) + " out of range for axis size " + std::to_string(s[ax]));
  }
  std::size_t outer = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= s[i];
  std::size_t inner = 1;
  for (std::size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
  Shape out_shape = s;
  out_shape[ax] = indices.size();
  std::vector<std::size_t> source;
  source.reserve(outer * indices.size() * inner);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i : indices) {
      const std::size_t base = (o * s[ax] + i) * inner;
      for (std::size_t j = 0; j < inner; ++j) source.push_back(base + j);
    }
  }
  return gather_op(x, std::move(out_shape), std::move(source));
}

Tensor slice(const Tensor& x, int axis, std::size_t start, std::size_t length) {
  const std::size_t ax = normalize_axis(axis, x.ndim(), "slice");
  if (start + length > x.shape()[ax]) {
    dim_error("slice", "range [" + std::to_string(start) + ", " + std::to_string(start + length) + ") exceeds axis of size " +
                           std::to_string(x.shape()[ax]));
  }
  std::vector<std::size_t> idx(length);
  std::iota(idx.begin(), idx.end(), start);
  return index_select(x, axis, idx);
}

std::pair<Tensor, Tensor> split_lastdim_half(const Tensor& x) {
  if (x.ndim() == 0) dim_error("split_lastdim_half", "scalar input");
  const std::size_t last = x.shape().back();
  if (last % 2 != 0) dim_error("split_lastdim_half", "odd last dimension " + std::to_string(last));
  return {slice(x, -1, 0, last / 2), slice(x, -1, last / 2, last / 2)};
}

Tensor repeat_interleave(const Tensor& x, int axis, std::size_t repeats) {
  const std::size_t ax = normalize_axis(axis, x.ndim(), "repeat_interleave");
  if (repeats == 1) return x;
  std::vector<std::size_t> idx;
  idx.reserve(x.shape()[ax] * repeats);
  for (std::size_t i = 0; i < x.shape()[ax]; ++i)
    for (std::size_t r = 0; r < repeats; ++r) idx.push_back(i);
  return index_select(x, axis, idx);
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  Tensor result = make_tensor({}, {total});
  attach(result, {&x}, [px = x.impl_ptr()](TensorImpl& o) {
    double* gx = grad_of(px);
    if (!gx) return;
    for (std::size_t i = 0; i < px->data.size(); ++i) gx[i] += o.grad[0];
  });
  return result;
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) dim_error("mean", "empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor sum_lastdim(const Tensor& x) {
  if (x.ndim() == 0) dim_error("sum_lastdim", "scalar input");
  const std::size_t cols = x.shape().back();
  const std::size_t rows = cols ? x.numel() / cols : 0;
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  std::vector<double> out(shape_numel(out_shape), 0.0);
  const auto in = x.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r] += in[r * cols + c];
  Tensor result = make_tensor(std::move(out_shape), std::move(out));
  attach(result, {&x}, [px = x.impl_ptr(), rows, cols](TensorImpl& o) {
    double* gx = grad_of(px);
    if (!gx) return;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += o.grad[r];
  });
  return result;
}

// ---------------------------------------------------------------------------
// Normalisation, embedding, losses

Tensor rms_norm(const Tensor& x, const Tensor& gamma, double eps) {
  if (x.ndim() == 0 || gamma.ndim() != 1 || gamma.shape()[0] != x.shape().back()) dim_error("rms_norm", x.shape(), gamma.shape());
  if (!(eps > 0)) throw Error(ErrorCode::kInvalidArgument, "rms_norm: eps must be positive");
  const std::size_t cols = x.shape().back();
  const std::size_t rows = x.numel() / cols;
  const auto in = x.data();
  const auto gm = gamma.data();
  std::vector<double> out(in.size());
  std::vector<double> inv_rms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* src = in.data() + r * cols;
    double ss = 0.0;
    for (std::size_t c = 0; c < cols; ++c) ss += src[c] * src[c];
    const double inv = 1.0 / std::sqrt(ss / static_cast<double>(cols) + eps);
    inv_rms[r] = inv;
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = src[c] * inv * gm[c];
  }
  Tensor result = make_tensor(x.shape(), std::move(out));
  attach(result, {&x, &gamma},
         [px = x.impl_ptr(), pg = gamma.impl_ptr(), inv_rms = std::move(inv_rms), rows, cols](TensorImpl& o) {
           double* gx = grad_of(px);
           double* gg = grad_of(pg);
           const double* gm = pg->data.data();
           for (std::size_t r = 0; r < rows; ++r) {
             const double* xr = px->data.data() + r * cols;
             const double* g = o.grad.data() + r * cols;
             const double inv = inv_rms[r];
             if (gg)
               for (std::size_t c = 0; c < cols; ++c) gg[c] += g[c] * xr[c] * inv;
             if (gx) {
               double dot = 0.0;
               for (std::size_t c = 0; c < cols; ++c) dot += g[c] * gm[c] * xr[c];
               const double coef = inv * inv * inv * dot / static_cast<double>(cols);
               for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += inv * g[c] * gm[c] - xr[c] * coef;
             }
           }
         });
  return result;
}

Tensor embedding(const Tensor& weight, std::span<const std::int32_t> ids, Shape id_shape) {
  if (weight.ndim() != 2) dim_error("embedding", "weight must be 2-D, got " + shape_str(weight.shape()));
  if (shape_numel(id_shape) != ids.size()) dim_error("embedding", "id shape does not match id count");
  const std::size_t vocab = weight.shape()[0];
  const std::size_t dim = weight.shape()[1];
  std::vector<std::size_t> source;
  source.reserve(ids.size() * dim);
  for (std::int32_t id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw Error(ErrorCode::kInvalidArgument, "embedding: token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(vocab));
    }
    for (std::size_t j = 0; j < dim; ++j) source.push_back(static_cast<std::size_t>(id) * dim + j);
  }
  id_shape.push_back(dim);
  return gather_op(weight, std::move(id_shape), std::move(source));
}

Tensor splice_rows(const Tensor& base, const Tensor& source, std::span<const std::size_t> rows) {
  if (base.ndim() == 0 || source.ndim() == 0 || base.shape().back() != source.shape().back()) {
    dim_error("splice_rows", base.shape(), source.shape());
  }
  const std::size_t width = base.shape().back();
  const std::size_t base_rows = base.numel() / width;
  if (source.numel() / width != rows.size()) dim_error("splice_rows", "row count does not match source");
  std::vector<double> out(base.data().begin(), base.data().end());
  std::vector<std::size_t> target(base_rows, SIZE_MAX);
  const auto src = source.data();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= base_rows) dim_error("splice_rows", "row index out of range");
    target[rows[i]] = i;
    std::copy_n(src.data() + i * width, width, out.data() + rows[i] * width);
  }
  Tensor result = make_tensor(base.shape(), std::move(out));
  attach(result, {&base, &source},
         [pb = base.impl_ptr(), ps = source.impl_ptr(), target = std::move(target), width](TensorImpl& o) {
           double* gb = grad_of(pb);
           double* gs = grad_of(ps);
           for (std::size_t r = 0; r < target.size(); ++r) {
             const double* g = o.grad.data() + r * width;
             if (target[r] == SIZE_MAX) {
               if (gb)
                 for (std::size_t j = 0; j < width; ++j) gb[r * width + j] += g[j];
             } else if (gs) {
               for (std::size_t j = 0; j < width; ++j) gs[target[r] * width + j] += g[j];
             }
           }
         });
  return result;
}

Tensor token_logprobs(const Tensor& logits, std::span<const std::int32_t> targets) {
  if (logits.ndim() < 1) dim_error("token_logprobs", "scalar logits");
  const std::size_t vocab = logits.shape().back();
  const std::size_t rows = logits.numel() / vocab;
  if (targets.size() != rows) {
    dim_error("token_logprobs", "logits " + shape_str(logits.shape()) + " need " + std::to_string(rows) + " targets, got " +
                                    std::to_string(targets.size()));
  }
  const auto in = logits.data();
  std::vector<double> out(rows);
  std::vector<double> lse(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::int32_t t = targets[r];
    if (t < 0 || static_cast<std::size_t>(t) >= vocab) {
      throw Error(ErrorCode::kInvalidArgument, "target id " + std::to_string(t) + " outside [0," + std::to_string(vocab) + ")");
    }
    const double* src = in.data() + r * vocab;
    const double mx = *std::max_element(src, src + vocab);
    double total = 0.0;
    for (std::size_t c = 0; c < vocab; ++c) total += std::exp(src[c] - mx);
    lse[r] = mx + std::log(total);
    out[r] = src[t] - lse[r];
  }
  Shape out_shape(logits.shape().begin(), logits.shape().end() - 1);
  Tensor result = make_tensor(std::move(out_shape), std::move(out));
  std::vector<std::int32_t> tgt(targets.begin(), targets.end());
  attach(result, {&logits}, [px = logits.impl_ptr(), tgt = std::move(tgt), lse = std::move(lse), rows, vocab](TensorImpl& o) {
    double* gx = grad_of(px);
    if (!gx) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const double g = o.grad[r];
      if (g == 0.0) continue;
      const double* src = px->data.data() + r * vocab;
      double* dst = gx + r * vocab;
      for (std::size_t c = 0; c < vocab; ++c) dst[c] -= g * std::exp(src[c] - lse[r]);
      dst[tgt[r]] += g;
    }
  });
  return result;
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::int32_t> targets, const Tensor& loss_mask) {
  Tensor lp = token_logprobs(logits, targets);
  if (loss_mask.shape() != lp.shape()) dim_error("cross_entropy", lp.shape(), loss_mask.shape());
  double count = 0.0;
  for (double m : loss_mask.data()) count += m;
  if (count <= 0.0) throw Error(ErrorCode::kInvalidArgument, "cross_entropy: no unmasked positions");
  return scale(sum(mul(lp, loss_mask)), -1.0 / count);
}

// ---------------------------------------------------------------------------
// Gradient check

GradcheckReport gradcheck(const std::function<Tensor()>& f, std::span<const Tensor> inputs, const GradcheckOptions& options) {
  std::vector<Tensor> params(inputs.begin(), inputs.end());
  std::vector<bool> previous(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    previous[i] = params[i].requires_grad();
    params[i].set_requires_grad(true);
    params[i].zero_grad();
  }
  Tape& tape = Tape::active();
  tape.reset();
  std::vector<std::vector<double>> analytic(params.size());
  {
    Tensor out = f();
    if (out.numel() != 1) dim_error("gradcheck", "function must return a scalar");
    if (out.requires_grad()) {
      tape.backward(out);
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      analytic[i] = params[i].has_grad() ? std::vector<double>(params[i].grad().begin(), params[i].grad().end())
                                         : std::vector<double>(params[i].numel(), 0.0);
    }
  }
  tape.reset();

  GradcheckReport report;
  std::mt19937_64 rng(options.seed);
  NoGradGuard no_grad;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto data = params[i].mutable_data();
    std::vector<std::size_t> coords(data.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (options.max_coords_per_input && coords.size() > options.max_coords_per_input) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.max_coords_per_input);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t c : coords) {
      const double saved = data[c];
      data[c] = saved + options.step;
      const double plus = f().item();
      data[c] = saved - options.step;
      const double minus = f().item();
      data[c] = saved;
      const double numeric = (plus - minus) / (2.0 * options.step);
      const double err = std::abs(analytic[i][c] - numeric) / std::max(1.0, std::abs(numeric));
      ++report.coords_checked;
      if (err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_input = i;
        report.worst_coord = c;
      }
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    params[i].zero_grad();
    params[i].set_requires_grad(previous[i]);
  }
  return report;
}

}  // namespace phantom
