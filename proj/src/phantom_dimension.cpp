// Copyright 2026 The Phantom Authors
// SPDX-License-Identifier: Apache-2.0

#include "phantom/phantom_dimension.hpp"

#include <algorithm>
#include <string>

namespace phantom {

StarredFeatures extract_phantom_qkv(const Tensor& hidden, const QkvWeights& weights, const AttentionConfig& config,
                                    std::size_t phantom_index) {
  if (hidden.ndim() != 3) throw Error(ErrorCode::kDimension, "extract_phantom_qkv: expected [B,N,d_q] hidden");
  if (phantom_index >= hidden.size(1)) {
    throw Error(ErrorCode::kInvalidArgument, "extract_phantom_qkv: phantom_index " + std::to_string(phantom_index) +
                                                 " out of range for sequence length " + std::to_string(hidden.size(1)));
  }
  Qkv row = project_qkv(slice(hidden, 1, phantom_index, 1), weights, config);
  return StarredFeatures{std::move(row.q), std::move(row.k), std::move(row.v)};
}

Tensor mhca_expand(const Tensor& queries, const Tensor& starred, const MhcaPathWeights& weights, bool residual) {
  if (queries.ndim() != 4 || starred.ndim() != 4) throw Error(ErrorCode::kDimension, "mhca_expand: expected rank-4 inputs");
  if (starred.size(1) != 1) {
    throw Error(ErrorCode::kInvalidArgument, "mhca_expand: expected exactly one starred token, got " + std::to_string(starred.size(1)));
  }
  if (queries.size(0) != starred.size(0) || queries.size(2) != starred.size(2) || queries.size(3) != starred.size(3)) {
    throw Error(ErrorCode::kDimension, "mhca_expand: head layout mismatch " + shape_str(queries.shape()) + " vs " +
                                           shape_str(starred.shape()));
  }
  const std::size_t hd = queries.size(3);
  const Tensor q = matmul(queries, weights.query);
  const Tensor k = matmul(starred, weights.key);
  const Tensor v = matmul(starred, weights.value);
  const double score_scale = 1.0 / std::sqrt(static_cast<double>(hd));
  Tensor out = matmul(grouped_attention(q, k, v, score_scale, Tensor{}).output, weights.output);
  return residual ? add(out, queries) : out;
}

AttentionOutput phantom_mhsa(const Tensor& q_cat, const Tensor& k_cat, const Tensor& v_cat, double lambda,
                             const Tensor& mask) {
  if (!q_cat.defined() || !k_cat.defined() || !v_cat.defined()) {
    throw Error(ErrorCode::kInvalidArgument, "phantom_mhsa: starred features missing");
  }
  if (q_cat.ndim() != 4 || q_cat.size(3) % 2 != 0) {
    throw Error(ErrorCode::kDimension, "phantom_mhsa: expected concatenated [B,N,h,2*head_dim] queries");
  }
  if (!(lambda > 0)) throw Error(ErrorCode::kInvalidArgument, "phantom_mhsa: lambda must be positive");
  return grouped_attention(q_cat, k_cat, v_cat, phantom_score_scale(lambda, q_cat.size(3) / 2), mask);
}

CompressedOutput compress_output(const Tensor& output, const MixerWeights* mixer, CompressionMode mode, bool normalized) {
  auto [first, second] = split_lastdim_half(output);
  CompressedOutput result;
  switch (mode) {
    case CompressionMode::kSum:
      result.output = add(first, second);
      break;
    case CompressionMode::kMean:
      result.output = scale(add(first, second), 0.5);
      break;
    case CompressionMode::kWeightedAverage: {
      if (mixer == nullptr || !mixer->f_weight.defined() || !mixer->g_weight.defined()) {
        throw Error(ErrorCode::kInvalidArgument, "compress_output: weighted average requires mixer weights");
      }
      const Tensor f_first = add(matmul(first, mixer->f_weight), mixer->f_bias);    // [B,N,h,1]
      const Tensor g_second = add(matmul(second, mixer->g_weight), mixer->g_bias);
      Tensor f_second;
      if (!normalized) f_second = add(matmul(second, mixer->f_weight), mixer->f_bias);

      // Constant shift for exp stability; cancels in every ratio below.
      std::vector<double> shift(f_first.numel());
      for (std::size_t i = 0; i < shift.size(); ++i) {
        shift[i] = std::max(f_first.data()[i], g_second.data()[i]);
        if (!normalized) shift[i] = std::max(shift[i], f_second.data()[i]);
      }
      const Tensor shift_t = Tensor::from_data(f_first.shape(), std::move(shift));
      const Tensor e_bar = exp(sub(f_first, shift_t));
      const Tensor e_g = exp(sub(g_second, shift_t));
      const Tensor denom = add(e_bar, e_g);
      result.w_bar = div(e_bar, denom);
      result.w_tilde = div(normalized ? e_g : exp(sub(f_second, shift_t)), denom);
      result.output = add(mul(result.w_bar, first), mul(result.w_tilde, second));
      break;
    }
  }
  result.first_half = std::move(first);
  result.second_half = std::move(second);
  return result;
}

Tensor phantom_block_forward(const Tensor& hidden, const BlockWeights& weights, const BlockOptions& options,
                             std::span<const std::size_t> positions, std::span<const std::size_t> key_lengths,
                             LayerCache* cache, BlockTrace* trace) {
  const AttentionConfig& att = options.attention;
  if (hidden.ndim() != 3 || hidden.size(2) != att.d_q) {
    throw Error(ErrorCode::kDimension, "phantom_block_forward: hidden " + shape_str(hidden.shape()) + " does not match d_q");
  }
  const std::size_t batch = hidden.size(0);
  const std::size_t n = hidden.size(1);
  const std::size_t hd = att.head_dim();

  const Tensor normed = rms_norm(hidden, weights.attn_norm, options.rms_eps);
  Qkv raw = project_qkv(normed, weights.qkv, att);

  StarredFeatures starred;
  if (options.pd_enabled) {
    if (cache != nullptr && cache->has_starred) {
      starred = cache->starred;
    } else {
      if (!positions.empty() && positions[0] != 0) {
        throw Error(ErrorCode::kState, "phantom_block_forward: PD cache is empty past the first chunk");
      }
      starred = extract_phantom_qkv(normed, weights.qkv, att, options.phantom_index);
      if (cache != nullptr) {
        cache->starred = starred;
        cache->has_starred = true;
      }
    }
  }

  Tensor q = raw.q;
  Tensor k = raw.k;
  if (att.positional_mode == PositionalMode::kRotary) {
    q = apply_rotary(q, positions, att.rotary_base);
    k = apply_rotary(k, positions, att.rotary_base);
  }

  Tensor q_in = q;
  Tensor k_in = k;
  Tensor v_in = raw.v;
  Qkv expanded;
  if (options.pd_enabled) {
    expanded.q = mhca_expand(q, starred.q, weights.mhca.q, options.mhca_residual);
    expanded.k = mhca_expand(k, starred.k, weights.mhca.k, options.mhca_residual);
    expanded.v = mhca_expand(raw.v, starred.v, weights.mhca.v, options.mhca_residual);
    q_in = concat_lastdim(q, expanded.q);
    k_in = concat_lastdim(k, expanded.k);
    v_in = concat_lastdim(raw.v, expanded.v);
  }

  if (cache != nullptr) {
    if (cache->keys.defined()) {
      k_in = concat(cache->keys, k_in, 1);
      v_in = concat(cache->values, v_in, 1);
    }
    cache->keys = k_in;
    cache->values = v_in;
  }
  const std::size_t keys = k_in.size(1);
  const Tensor mask = attention_mask(n, keys, keys - n, key_lengths);

  Tensor mixed;
  if (options.pd_enabled) {
    AttentionOutput attn = phantom_mhsa(q_in, k_in, v_in, options.lambda, mask);
    CompressedOutput comp = compress_output(attn.output, &weights.mixer, options.compression, options.normalized_mode);
    mixed = comp.output;
    if (trace != nullptr) {
      trace->state = PhantomAttentionState{Qkv{q, k, raw.v}, starred, expanded, attn.output, attn.probs,
                                           comp.first_half, comp.second_half, comp.w_bar, comp.w_tilde, options.lambda};
    }
  } else {
    AttentionOutput attn = grouped_attention(q_in, k_in, v_in, 1.0 / std::sqrt(static_cast<double>(hd)), mask);
    mixed = attn.output;
    if (trace != nullptr) {
      trace->state = PhantomAttentionState{};
      trace->state.base = Qkv{q, k, raw.v};
      trace->state.output = attn.output;
      trace->state.probs = attn.probs;
    }
  }

  Tensor x = add(hidden, matmul(reshape(mixed, {batch, n, att.d_q}), weights.wo));
  const Tensor ffn_in = rms_norm(x, weights.ffn_norm, options.rms_eps);
  return add(x, matmul(gelu(matmul(ffn_in, weights.ffn_up)), weights.ffn_down));
}

}  // namespace phantom
