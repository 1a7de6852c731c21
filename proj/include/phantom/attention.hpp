// Copyright 2026 The Phantom Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "phantom/tensor.hpp"

namespace phantom {

enum class PositionalMode { kRotary, kNone };

struct AttentionConfig {
  std::size_t d_q = 0;   // model hidden size
  std::size_t d_kv = 0;  // key/value projection size
  std::size_t h_q = 0;
  std::size_t h_kv = 0;
  double rotary_base = 10000.0;
  PositionalMode positional_mode = PositionalMode::kRotary;

  std::size_t head_dim() const { return h_q ? d_q / h_q : 0; }
  std::size_t group_size() const { return h_kv ? h_q / h_kv : 0; }
  /// Throws Error(kConfig) when the head layout is inconsistent.
  void validate() const;
};

// Projection weights are stored [in, out]; no bias.
struct QkvWeights {
  Tensor wq;  // [d_q, d_q]
  Tensor wk;  // [d_q, d_kv]
  Tensor wv;  // [d_q, d_kv]
};

struct Qkv {
  Tensor q;  // [B, N, h_q, head_dim]
  Tensor k;  // [B, N, h_kv, head_dim]
  Tensor v;  // [B, N, h_kv, head_dim]
};

Qkv project_qkv(const Tensor& hidden, const QkvWeights& weights, const AttentionConfig& config);

/// Rotates (x[i], x[i + head_dim/2]) pairs by position * base^(-2i/head_dim).
/// `positions` has one entry per sequence index (axis 1) and is shared across the batch.
Tensor apply_rotary(const Tensor& x, std::span<const std::size_t> positions, double base);

/// Additive mask [B or 1, 1, N, M] for N queries at absolute positions
/// offset..offset+N-1 over M keys at positions 0..M-1. Keys at or beyond
/// key_lengths[b] are excluded as padding when key_lengths is non-empty.
Tensor attention_mask(std::size_t queries, std::size_t keys, std::size_t offset,
                      std::span<const std::size_t> key_lengths = {});

struct AttentionOutput {
  Tensor output;  // [B, N, h_q, Dv]
  Tensor probs;   // [B, h_q, N, M]
};

/// softmax(scale * q k^T + mask) v with key/value heads shared across groups
/// of h_q / h_kv query heads.
AttentionOutput grouped_attention(const Tensor& q, const Tensor& k, const Tensor& v, double scale, const Tensor& mask);

/// Baseline causal attention with scale head_dim^(-1/2).
AttentionOutput causal_mhsa(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionConfig& config);

}  // namespace phantom
