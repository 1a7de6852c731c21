// Copyright 2026 The Phantom Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace phantom {

enum class ErrorCode : int {
  kDimension = 1,
  kInvalidArgument = 2,
  kState = 3,
  kIo = 4,
  kFormat = 5,
  kConfig = 6,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

// Additive mask value for excluded attention entries.
inline constexpr double kMaskValue = -1e30;

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until populated
  bool requires_grad = false;

  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

using ImplPtr = std::shared_ptr<TensorImpl>;

}  // namespace detail

/// Dense row-major float64 tensor with shared handle semantics. Copies of a
/// Tensor alias the same storage; use clone() or detach() for a fresh buffer.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const { return impl().shape; }
  std::size_t ndim() const { return impl().shape.size(); }
  /// Size along `axis`; negative axes count from the end.
  std::size_t size(int axis) const;
  std::size_t numel() const { return impl().data.size(); }

  std::span<const double> data() const { return impl().data; }
  /// Direct write access. Writes are not recorded on the tape.
  std::span<double> mutable_data() { return impl().data; }
  double item() const;

  bool requires_grad() const { return impl().requires_grad; }
  Tensor& set_requires_grad(bool value);
  bool has_grad() const { return !impl().grad.empty(); }
  std::span<const double> grad() const { return impl().grad; }
  void zero_grad() { impl().grad.clear(); }

  Tensor detach() const;
  Tensor clone() const { return detach(); }
  bool same(const Tensor& other) const noexcept { return impl_ == other.impl_; }

  const detail::ImplPtr& impl_ptr() const { return impl_; }
  explicit Tensor(detail::ImplPtr impl) : impl_(std::move(impl)) {}

 private:
  detail::TensorImpl& impl() const;

  detail::ImplPtr impl_;
};

/// Ordered record of differentiable operations for the current thread.
/// Entries are appended in execution order, which is a topological order.
class Tape {
 public:
  using BackwardFn = std::function<void(detail::TensorImpl& output)>;

  static Tape& active();

  void record(const Tensor& output, std::vector<detail::ImplPtr> inputs, BackwardFn fn);
  /// Seeds d(root)/d(root)=1 and replays entries in reverse. Gradients of
  /// leaves accumulate across tapes until zero_grad().
  void backward(const Tensor& root);
  void reset();
  std::size_t size() const { return entries_.size(); }
  bool consumed() const { return consumed_; }

 private:
  struct Entry {
    detail::ImplPtr output;
    std::vector<detail::ImplPtr> inputs;
    BackwardFn fn;
  };
  std::vector<Entry> entries_;
  bool consumed_ = false;
};

bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

void backward(const Tensor& root);

// ---------------------------------------------------------------------------
// Operations. Binary elementwise ops broadcast with numpy rules.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose_last2(const Tensor& x);
Tensor permute(const Tensor& x, std::span<const std::size_t> order);
Tensor reshape(const Tensor& x, Shape shape);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);
Tensor neg(const Tensor& x);

Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
/// Exact Gaussian-CDF GELU: x * Phi(x).
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor log_sigmoid(const Tensor& x);

/// Softmax over the last axis. `mask`, when defined, is added before the
/// normalisation and never receives gradient.
Tensor softmax_lastdim(const Tensor& x, const Tensor& mask = {});

Tensor concat(const Tensor& a, const Tensor& b, int axis);
Tensor concat_lastdim(const Tensor& a, const Tensor& b);
Tensor slice(const Tensor& x, int axis, std::size_t start, std::size_t length);
std::pair<Tensor, Tensor> split_lastdim_half(const Tensor& x);
Tensor index_select(const Tensor& x, int axis, std::span<const std::size_t> indices);
/// Each slice along `axis` is repeated `repeats` times consecutively.
Tensor repeat_interleave(const Tensor& x, int axis, std::size_t repeats);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Sums over the last axis and drops it.
Tensor sum_lastdim(const Tensor& x);

/// x / sqrt(mean(x^2, last axis) + eps) * gamma
Tensor rms_norm(const Tensor& x, const Tensor& gamma, double eps = 1e-6);

/// Rows of `weight` [V, d] gathered by ids; result shape is id_shape + [d].
Tensor embedding(const Tensor& weight, std::span<const std::int32_t> ids, Shape id_shape);
/// Replaces rows of `base` (viewed as [rows, last]) at `rows` with the rows of `source`.
Tensor splice_rows(const Tensor& base, const Tensor& source, std::span<const std::size_t> rows);

/// log softmax(logits)[target] for each position; logits [..., V], targets
/// flattened over the leading axes. Result drops the last axis.
Tensor token_logprobs(const Tensor& logits, std::span<const std::int32_t> targets);
/// Mean negative log-likelihood over positions where loss_mask is 1.
Tensor cross_entropy(const Tensor& logits, std::span<const std::int32_t> targets, const Tensor& loss_mask);

// ---------------------------------------------------------------------------
// Finite-difference gradient oracle.

struct GradcheckOptions {
  double step = 1e-4;
  /// 0 checks every coordinate; otherwise a seeded sample per input.
  std::size_t max_coords_per_input = 0;
  std::uint64_t seed = 0;
};

struct GradcheckReport {
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  std::size_t worst_input = 0;
  std::size_t worst_coord = 0;
};

/// Compares reverse-mode gradients of scalar `f` with central differences.
/// Relative error is |analytic - numeric| / max(1, |numeric|).
GradcheckReport gradcheck(const std::function<Tensor()>& f, std::span<const Tensor> inputs,
                          const GradcheckOptions& options = {});

}  // namespace phantom
