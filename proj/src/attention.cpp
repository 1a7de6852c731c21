// Copyright 2026 The Phantom Authors
// SPDX-License-Identifier: Apache-2.0

#include "phantom/attention.hpp"

#include <array>
#include <cmath>
#include <string>

namespace phantom {

void AttentionConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::kConfig, "attention config: " + msg); };
  if (d_q == 0 || d_kv == 0 || h_q == 0 || h_kv == 0) fail("dimensions and head counts must be positive");
  if (d_q % h_q != 0) fail("d_q must be divisible by h_q");
  if (d_kv % h_kv != 0) fail("d_kv must be divisible by h_kv");
  if (d_q / h_q != d_kv / h_kv) fail("query and key/value heads must share head_dim");
  if (h_q % h_kv != 0) fail("h_q must be a multiple of h_kv");
  if (positional_mode == PositionalMode::kRotary && head_dim() % 2 != 0) fail("rotary positions need an even head_dim");
}

Qkv project_qkv(const Tensor& hidden, const QkvWeights& weights, const AttentionConfig& config) {
  if (hidden.ndim() != 3 || hidden.size(-1) != config.d_q) {
    throw Error(ErrorCode::kDimension, "project_qkv: hidden " + shape_str(hidden.shape()) + " does not end in d_q=" +
                                           std::to_string(config.d_q));
  }
  const std::size_t b = hidden.size(0);
  const std::size_t n = hidden.size(1);
  const std::size_t hd = config.head_dim();
  return Qkv{
      reshape(matmul(hidden, weights.wq), {b, n, config.h_q, hd}),
      reshape(matmul(hidden, weights.wk), {b, n, config.h_kv, hd}),
      reshape(matmul(hidden, weights.wv), {b, n, config.h_kv, hd}),
  };
}

Tensor apply_rotary(const Tensor& x, std::span<const std::size_t> positions, double base) {
  if (x.ndim() != 4) throw Error(ErrorCode::kDimension, "apply_rotary: expected [B,N,h,head_dim], got " + shape_str(x.shape()));
  const std::size_t n = x.size(1);
  const std::size_t hd = x.size(3);
  if (hd % 2 != 0) throw Error(ErrorCode::kDimension, "apply_rotary: odd head_dim " + std::to_string(hd));
  if (positions.size() != n) throw Error(ErrorCode::kDimension, "apply_rotary: one position per sequence index required");
  const std::size_t half = hd / 2;
  std::vector<double> cos_data(n * half);
  std::vector<double> sin_data(n * half);
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t i = 0; i < half; ++i) {
      const double inv_freq = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(hd));
      const double angle = static_cast<double>(positions[t]) * inv_freq;
      cos_data[t * half + i] = std::cos(angle);
      sin_data[t * half + i] = std::sin(angle);
    }
  }
  const Tensor cos_t = Tensor::from_data({1, n, 1, half}, std::move(cos_data));
  const Tensor sin_t = Tensor::from_data({1, n, 1, half}, std::move(sin_data));
  auto [x1, x2] = split_lastdim_half(x);
  Tensor r1 = sub(mul(x1, cos_t), mul(x2, sin_t));
  Tensor r2 = add(mul(x2, cos_t), mul(x1, sin_t));
  return concat_lastdim(r1, r2);
}

Tensor attention_mask(std::size_t queries, std::size_t keys, std::size_t offset, std::span<const std::size_t> key_lengths) {
  if (offset + queries > keys) throw Error(ErrorCode::kDimension, "attention_mask: queries extend past the key range");
  const std::size_t batch = key_lengths.empty() ? 1 : key_lengths.size();
  std::vector<double> data(batch * queries * keys, 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t valid = key_lengths.empty() ? keys : key_lengths[b];
    for (std::size_t i = 0; i < queries; ++i) {
      for (std::size_t j = 0; j < keys; ++j) {
        if (j > offset + i || j >= valid) data[(b * queries + i) * keys + j] = kMaskValue;
      }
    }
  }
  return Tensor::from_data({batch, 1, queries, keys}, std::move(data));
}

AttentionOutput grouped_attention(const Tensor& q, const Tensor& k, const Tensor& v, double score_scale, const Tensor& mask) {
  if (q.ndim() != 4 || k.ndim() != 4 || v.ndim() != 4) {
    throw Error(ErrorCode::kDimension, "grouped_attention: expected rank-4 q/k/v");
  }
  if (q.size(1) == 0) throw Error(ErrorCode::kDimension, "grouped_attention: empty query sequence");
  if (q.size(0) != k.size(0) || k.shape() != Shape({v.size(0), v.size(1), v.size(2), k.size(3)}) || q.size(3) != k.size(3)) {
    throw Error(ErrorCode::kDimension, "grouped_attention: shapes q" + shape_str(q.shape()) + " k" + shape_str(k.shape()) +
                                           " v" + shape_str(v.shape()) + " disagree");
  }
  const std::size_t h_q = q.size(2);
  const std::size_t h_kv = k.size(2);
  if (h_kv == 0 || h_q % h_kv != 0) throw Error(ErrorCode::kDimension, "grouped_attention: h_q must be a multiple of h_kv");
  const std::size_t group = h_q / h_kv;
  const Tensor k_full = repeat_interleave(k, 2, group);
  const Tensor v_full = repeat_interleave(v, 2, group);

  static constexpr std::array<std::size_t, 4> kHeadsFirst{0, 2, 1, 3};
  static constexpr std::array<std::size_t, 4> kKeysLast{0, 2, 3, 1};
  const Tensor qh = permute(q, kHeadsFirst);         // [B, h, N, D]
  const Tensor kt = permute(k_full, kKeysLast);      // [B, h, D, M]
  const Tensor vh = permute(v_full, kHeadsFirst);    // [B, h, M, Dv]
  const Tensor scores = scale(matmul(qh, kt), score_scale);
  Tensor probs = softmax_lastdim(scores, mask);
  Tensor out = permute(matmul(probs, vh), kHeadsFirst);  // [B, N, h, Dv]
  return AttentionOutput{std::move(out), std::move(probs)};
}

AttentionOutput causal_mhsa(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionConfig& config) {
  if (q.ndim() != 4 || q.size(1) == 0) throw Error(ErrorCode::kDimension, "causal_mhsa: empty sequence");
  const std::size_t n = q.size(1);
  const double score_scale = 1.0 / std::sqrt(static_cast<double>(config.head_dim()));
  return grouped_attention(q, k, v, score_scale, attention_mask(n, k.size(1), k.size(1) - n));
}

}  // namespace phantom
