// Copyright 2026 The Phantom Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>

#include "phantom/attention.hpp"
#include "phantom/tensor.hpp"

namespace phantom {

inline constexpr double kDefaultLambda = std::numbers::sqrt2;

/// Cross-attention weights for one of the Q/K/V paths. All four matrices are
/// head_dim x head_dim and shared across heads, stored [in, out].
struct MhcaPathWeights {
  Tensor query;
  Tensor key;
  Tensor value;
  Tensor output;
};

struct MhcaWeights {
  MhcaPathWeights q;
  MhcaPathWeights k;
  MhcaPathWeights v;

  static std::size_t parameter_count(std::size_t head_dim) { return head_dim * head_dim * 4 * 3; }
};

/// Gating maps f, g : head_dim -> 1 with bias, shared across heads and positions.
struct MixerWeights {
  Tensor f_weight;  // [head_dim, 1]
  Tensor f_bias;    // [1]
  Tensor g_weight;
  Tensor g_bias;
};

enum class CompressionMode { kWeightedAverage, kSum, kMean };

/// Starred features taken from a single sequence position: [B, 1, heads, head_dim].
struct StarredFeatures {
  Tensor q;
  Tensor k;
  Tensor v;
};

/// Scratch for one PD attention forward.
struct PhantomAttentionState {
  Qkv base;                  // rotated Q_l, K_l, V_l
  StarredFeatures starred;   // raw single-token starred features
  Qkv expanded;              // starred features expanded to N tokens
  Tensor output;             // O_l, [B, N, h_q, 2*head_dim]
  Tensor probs;              // [B, h_q, N, M]
  Tensor first_half;         // O-bar
  Tensor second_half;        // O-tilde
  Tensor w_bar;              // [B, N, h_q, 1]
  Tensor w_tilde;
  double lambda = kDefaultLambda;
};

/// Starred Q/K/V: the QKV projections of `hidden` at `phantom_index`.
StarredFeatures extract_phantom_qkv(const Tensor& hidden, const QkvWeights& weights, const AttentionConfig& config,
                                    std::size_t phantom_index);

/// Cross-attends every query position against the single starred token and
/// applies the output projection. With `residual`, the query is added back.
Tensor mhca_expand(const Tensor& queries, const Tensor& starred, const MhcaPathWeights& weights, bool residual = false);

/// Score coefficient lambda * (2 * head_dim)^(-1/2) of the doubled attention.
inline double phantom_score_scale(double lambda, std::size_t head_dim) {
  return lambda / std::sqrt(2.0 * static_cast<double>(head_dim));
}

/// Attention over [Q | Q*] [K | K*]^T with values [V | V*]. `keys`/`values`
/// may hold cached positions before the current queries.
AttentionOutput phantom_mhsa(const Tensor& q_cat, const Tensor& k_cat, const Tensor& v_cat, double lambda,
                             const Tensor& mask);

struct CompressedOutput {
  Tensor output;   // [B, N, h_q, head_dim]
  Tensor w_bar;    // undefined unless weighted average
  Tensor w_tilde;
  Tensor first_half;
  Tensor second_half;
};

/// Splits O into halves and mixes them. In weighted-average mode
/// w_bar = e^f(O-bar) / (e^f(O-bar) + e^g(O-tilde)); the normalized form uses
/// e^g(O-tilde) for the w_tilde numerator, the literal form e^f(O-tilde).
CompressedOutput compress_output(const Tensor& output, const MixerWeights* mixer, CompressionMode mode,
                                 bool normalized = true);

struct BlockWeights {
  Tensor attn_norm;  // [d_q]
  QkvWeights qkv;
  Tensor wo;         // [d_q, d_q]
  Tensor ffn_norm;   // [d_q]
  Tensor ffn_up;     // [d_q, ffn_hidden]
  Tensor ffn_down;   // [ffn_hidden, d_q]
  MhcaWeights mhca;
  MixerWeights mixer;
};

struct BlockOptions {
  AttentionConfig attention;
  bool pd_enabled = true;
  CompressionMode compression = CompressionMode::kWeightedAverage;
  bool normalized_mode = true;
  bool mhca_residual = false;
  double lambda = kDefaultLambda;
  std::size_t phantom_index = 0;
  double rms_eps = 1e-6;
};

/// Incremental-decoding state for one layer. Keys/values hold the attention
/// inputs after rotary and (with PD) after starred concatenation.
struct LayerCache {
  Tensor keys;    // [B, t, h_kv, D]
  Tensor values;  // [B, t, h_kv, D]
  StarredFeatures starred;  // PD cache, fixed after prefill
  bool has_starred = false;
  std::size_t length() const { return keys.defined() ? keys.size(1) : 0; }
};

/// Optional per-forward outputs for inspection.
struct BlockTrace {
  PhantomAttentionState state;
};

/// Pre-norm block: RMSNorm, QKV, PD or baseline attention, output projection,
/// residual, RMSNorm, GELU MLP, residual. `positions` lists absolute
/// positions of the N input tokens. `key_lengths` marks right padding.
Tensor phantom_block_forward(const Tensor& hidden, const BlockWeights& weights, const BlockOptions& options,
                             std::span<const std::size_t> positions, std::span<const std::size_t> key_lengths = {},
                             LayerCache* cache = nullptr, BlockTrace* trace = nullptr);

}  // namespace phantom
