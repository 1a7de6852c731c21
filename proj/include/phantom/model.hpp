// Copyright 2026 The Phantom Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "phantom/attention.hpp"
#include "phantom/phantom_dimension.hpp"
#include "phantom/tensor.hpp"

namespace phantom {

// Byte-level vocabulary: 256 byte values followed by four special tokens.
namespace vocab {
inline constexpr std::int32_t kSos = 256;
inline constexpr std::int32_t kEos = 257;
inline constexpr std::int32_t kImage = 258;
inline constexpr std::int32_t kPad = 259;
inline constexpr std::size_t kSize = 260;
}  // namespace vocab

/// Right-padded token ids, row-major [batch, seq].
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::vector<std::int32_t> ids;
  std::vector<std::size_t> lengths;  // real tokens per row

  std::span<const std::int32_t> row(std::size_t b) const { return {ids.data() + b * seq, seq}; }
  static TokenBatch single(std::span<const std::int32_t> tokens);
};

struct ModelConfig {
  AttentionConfig attention;
  std::size_t layers = 0;
  std::size_t vocab_size = vocab::kSize;
  std::size_t ffn_hidden = 0;
  std::size_t vision_feature_dim = 1024;
  double lambda = kDefaultLambda;
  bool pd_enabled = true;
  CompressionMode compression = CompressionMode::kWeightedAverage;
  bool normalized_mode = true;
  bool mhca_residual = false;
  std::size_t phantom_index = 0;
  double rms_eps = 1e-6;
  double init_std = 0.02;
  std::string preset_name;

  std::size_t head_dim() const { return attention.head_dim(); }
  BlockOptions block_options() const;
  void validate() const;
};

/// Named shape presets: phantom-0.5b, phantom-1.8b, phantom-3.8b, phantom-7b, tiny.
ModelConfig preset(std::string_view name);
std::vector<std::string> preset_names();

/// head_dim^2 * 4 * 3 * layers.
std::uint64_t count_mhca_params(const ModelConfig& config);

enum class ParamGroup { kBackbone, kProjector, kPhantom, kEmbedding, kLmHead };
std::string_view group_name(ParamGroup group);

/// Per-group parameter totals of a model built from `config`, computed from
/// shapes alone (no allocation).
std::map<ParamGroup, std::uint64_t> parameter_counts(const ModelConfig& config);

enum class TrainPhase { kStep1, kStep2 };
std::string_view phase_name(TrainPhase phase);

/// Groups that receive updates in `phase`: step 1 trains the projector and
/// the PD components; step 2 trains everything.
std::set<ParamGroup> freeze_mask(TrainPhase phase);

class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor tensor;
    ParamGroup group;
  };

  Tensor& add(std::string name, Tensor tensor, ParamGroup group);
  const Tensor& get(std::string_view name) const;
  bool contains(std::string_view name) const;
  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }

  /// Sets requires_grad to membership of each entry's group in `groups`.
  void set_trainable(const std::set<ParamGroup>& groups);
  void zero_grad();
  std::size_t parameter_count() const;
  std::size_t parameter_count(ParamGroup group) const;
  /// FNV-1a over the raw bytes of every tensor in `group`, in entry order.
  std::uint64_t checksum(ParamGroup group) const;

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

struct ProjectorWeights {
  Tensor fc1_weight;  // [vision_feature_dim, d_q]
  Tensor fc1_bias;    // [d_q]
  Tensor fc2_weight;  // [d_q, d_q]
  Tensor fc2_bias;    // [d_q]
};

/// linear -> GELU -> linear on [B, P, vision_feature_dim] features.
Tensor vision_project(const Tensor& features, const ProjectorWeights& weights);

class PhantomModel {
 public:
  /// Truncated-normal (std init_std, cut at 2 std) weights from `seed`;
  /// norms start at one, f/g and projector biases at zero.
  PhantomModel(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  /// Changes run-time flags (PD, compression, residual, lambda) without
  /// touching weights. Shapes must not change.
  void set_flags(const ModelConfig& flags);

  const BlockWeights& block(std::size_t layer) const { return blocks_.at(layer); }
  const ProjectorWeights& projector() const { return projector_; }
  const Tensor& embedding_weight() const { return embed_; }
  const Tensor& lm_head_weight() const { return lm_head_; }
  const Tensor& final_norm_weight() const { return final_norm_; }

 private:
  void bind();

  ModelConfig config_;
  ParamStore params_;
  std::vector<BlockWeights> blocks_;
  ProjectorWeights projector_;
  Tensor embed_;
  Tensor lm_head_;
  Tensor final_norm_;
};

/// Image features for one batch row: [P, vision_feature_dim] rows that replace
/// the P image placeholder tokens of that row, or undefined for text-only rows.
using ImageFeatures = std::vector<Tensor>;

struct ForwardOptions {
  std::vector<LayerCache>* caches = nullptr;  // incremental decoding state
  std::size_t position_offset = 0;            // absolute position of tokens.row(b)[0]
  std::vector<BlockTrace>* traces = nullptr;
};

/// Embedding, vision splice, L blocks, final RMSNorm, LM head.
/// Returns logits [B, T, vocab].
Tensor forward(const PhantomModel& model, const TokenBatch& tokens, const ImageFeatures& images = {},
               const ForwardOptions& options = {});

}  // namespace phantom
