// Copyright 2026 The Phantom Authors
// SPDX-License-Identifier: Apache-2.0

#include "phantom/model.hpp"

#include <cstring>
#include <numeric>
#include <random>

namespace phantom {

TokenBatch TokenBatch::single(std::span<const std::int32_t> tokens) {
  TokenBatch batch;
  batch.batch = 1;
  batch.seq = tokens.size();
  batch.ids.assign(tokens.begin(), tokens.end());
  batch.lengths = {tokens.size()};
  return batch;
}

BlockOptions ModelConfig::block_options() const {
  BlockOptions o;
  o.attention = attention;
  o.pd_enabled = pd_enabled;
  o.compression = compression;
  o.normalized_mode = normalized_mode;
  o.mhca_residual = mhca_residual;
  o.lambda = lambda;
  o.phantom_index = phantom_index;
  o.rms_eps = rms_eps;
  return o;
}

void ModelConfig::validate() const {
  attention.validate();
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::kConfig, "model config: " + msg); };
  if (layers == 0) fail("layers must be positive");
  if (vocab_size == 0) fail("vocab_size must be positive");
  if (ffn_hidden == 0) fail("ffn_hidden must be positive");
  if (vision_feature_dim == 0) fail("vision_feature_dim must be positive");
  if (!(lambda > 0)) fail("lambda must be positive");
  if (!(rms_eps > 0)) fail("rms_eps must be positive");
}

namespace {

ModelConfig make_preset(std::string name, std::size_t d_q, std::size_t h_q, std::size_t h_kv, std::size_t layers) {
  ModelConfig c;
  c.attention.d_q = d_q;
  c.attention.h_q = h_q;
  c.attention.h_kv = h_kv;
  c.attention.d_kv = d_q / h_q * h_kv;
  c.layers = layers;
  c.ffn_hidden = 4 * d_q;
  c.preset_name = std::move(name);
  return c;
}

}  // namespace

ModelConfig preset(std::string_view name) {
  ModelConfig c;
  if (name == "phantom-0.5b") {
    c = make_preset("phantom-0.5b", 896, 14, 2, 24);
  } else if (name == "phantom-1.8b") {
    c = make_preset("phantom-1.8b", 2048, 16, 8, 24);
  } else if (name == "phantom-3.8b") {
    c = make_preset("phantom-3.8b", 3072, 32, 32, 32);
  } else if (name == "phantom-7b") {
    c = make_preset("phantom-7b", 4096, 32, 8, 32);
  } else if (name == "tiny") {
    c = make_preset("tiny", 64, 4, 2, 2);
    c.vocab_size = 256;
  } else {
    throw Error(ErrorCode::kConfig, "unknown preset '" + std::string(name) + "'");
  }
  c.validate();
  return c;
}

std::vector<std::string> preset_names() { return {"phantom-0.5b", "phantom-1.8b", "phantom-3.8b", "phantom-7b", "tiny"}; }

std::uint64_t count_mhca_params(const ModelConfig& config) {
  return static_cast<std::uint64_t>(MhcaWeights::parameter_count(config.head_dim())) * config.layers;
}

std::map<ParamGroup, std::uint64_t> parameter_counts(const ModelConfig& config) {
  config.validate();
  const std::uint64_t d = config.attention.d_q;
  const std::uint64_t dkv = config.attention.d_kv;
  const std::uint64_t hd = config.head_dim();
  const std::uint64_t v = config.vocab_size;
  const std::uint64_t ffn = config.ffn_hidden;
  const std::uint64_t layers = config.layers;
  std::map<ParamGroup, std::uint64_t> out;
  out[ParamGroup::kEmbedding] = v * d;
  out[ParamGroup::kProjector] = config.vision_feature_dim * d + d + d * d + d;
  out[ParamGroup::kBackbone] = layers * (2 * d + 2 * d * d + 2 * d * dkv + 2 * d * ffn) + d;
  out[ParamGroup::kPhantom] = count_mhca_params(config) + layers * 2 * (hd + 1);
  out[ParamGroup::kLmHead] = d * v;
  return out;
}

std::string_view group_name(ParamGroup group) {
  switch (group) {
    case ParamGroup::kBackbone: return "backbone";
    case ParamGroup::kProjector: return "projector";
    case ParamGroup::kPhantom: return "phantom";
    case ParamGroup::kEmbedding: return "embedding";
    case ParamGroup::kLmHead: return "lm_head";
  }
  return "unknown";
}

std::string_view phase_name(TrainPhase phase) { return phase == TrainPhase::kStep1 ? "step1" : "step2"; }

std::set<ParamGroup> freeze_mask(TrainPhase phase) {
  if (phase == TrainPhase::kStep1) return {ParamGroup::kProjector, ParamGroup::kPhantom};
  return {ParamGroup::kBackbone, ParamGroup::kProjector, ParamGroup::kPhantom, ParamGroup::kEmbedding, ParamGroup::kLmHead};
}

// ---------------------------------------------------------------------------
// ParamStore

Tensor& ParamStore::add(std::string name, Tensor tensor, ParamGroup group) {
  if (index_.count(name)) throw Error(ErrorCode::kInvalidArgument, "duplicate parameter '" + name + "'");
  index_.emplace(name, entries_.size());
  entries_.push_back(Entry{std::move(name), std::move(tensor), group});
  return entries_.back().tensor;
}

const Tensor& ParamStore::get(std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error(ErrorCode::kInvalidArgument, "unknown parameter '" + std::string(name) + "'");
  return entries_[it->second].tensor;
}

bool ParamStore::contains(std::string_view name) const { return index_.find(name) != index_.end(); }

void ParamStore::set_trainable(const std::set<ParamGroup>& groups) {
  for (auto& e : entries_) e.tensor.set_requires_grad(groups.count(e.group) > 0);
}

void ParamStore::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.numel();
  return n;
}

std::size_t ParamStore::parameter_count(ParamGroup group) const {
  std::size_t n = 0;
  for (const auto& e : entries_)
    if (e.group == group) n += e.tensor.numel();
  return n;
}

std::uint64_t ParamStore::checksum(ParamGroup group) const {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& e : entries_) {
    if (e.group != group) continue;
    for (double v : e.tensor.data()) {
      unsigned char bytes[sizeof(double)];
      std::memcpy(bytes, &v, sizeof v);
      for (unsigned char b : bytes) {
        h ^= b;
        h *= 1099511628211ull;
      }
    }
  }
  return h;
}

// ---------------------------------------------------------------------------
// Model

Tensor vision_project(const Tensor& features, const ProjectorWeights& weights) {
  if (features.ndim() != 3 || features.size(2) != weights.fc1_weight.size(0)) {
    throw Error(ErrorCode::kDimension, "vision_project: features " + shape_str(features.shape()) + " do not match projector input " +
                                           shape_str(weights.fc1_weight.shape()));
  }
  const Tensor hidden = gelu(add(matmul(features, weights.fc1_weight), weights.fc1_bias));
  return add(matmul(hidden, weights.fc2_weight), weights.fc2_bias);
}

namespace {

Tensor truncated_normal(Shape shape, double std, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> data(shape_numel(shape));
  for (double& v : data) {
    double z;
    do {
      z = dist(rng);
    } while (std::abs(z) > 2.0);
    v = z * std;
  }
  return Tensor::from_data(std::move(shape), std::move(data));
}

}  // namespace

PhantomModel::PhantomModel(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  std::mt19937_64 rng(seed);
  const std::size_t d = config_.attention.d_q;
  const std::size_t dkv = config_.attention.d_kv;
  const std::size_t hd = config_.head_dim();
  const double sd = config_.init_std;
  auto normal = [&](Shape s) { return truncated_normal(std::move(s), sd, rng); };

  params_.add("embed.weight", normal({config_.vocab_size, d}), ParamGroup::kEmbedding);
  params_.add("projector.fc1.weight", normal({config_.vision_feature_dim, d}), ParamGroup::kProjector);
  params_.add("projector.fc1.bias", Tensor::zeros({d}), ParamGroup::kProjector);
  params_.add("projector.fc2.weight", normal({d, d}), ParamGroup::kProjector);
  params_.add("projector.fc2.bias", Tensor::zeros({d}), ParamGroup::kProjector);
  for (std::size_t l = 0; l < config_.layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    params_.add(p + "attn_norm.weight", Tensor::full({d}, 1.0), ParamGroup::kBackbone);
    params_.add(p + "attn.wq", normal({d, d}), ParamGroup::kBackbone);
    params_.add(p + "attn.wk", normal({d, dkv}), ParamGroup::kBackbone);
    params_.add(p + "attn.wv", normal({d, dkv}), ParamGroup::kBackbone);
    params_.add(p + "attn.wo", normal({d, d}), ParamGroup::kBackbone);
    params_.add(p + "ffn_norm.weight", Tensor::full({d}, 1.0), ParamGroup::kBackbone);
    params_.add(p + "ffn.up", normal({d, config_.ffn_hidden}), ParamGroup::kBackbone);
    params_.add(p + "ffn.down", normal({config_.ffn_hidden, d}), ParamGroup::kBackbone);
    for (const char* path : {"q", "k", "v"}) {
      for (const char* m : {"query", "key", "value", "output"}) {
        params_.add(p + "mhca." + path + "." + m, normal({hd, hd}), ParamGroup::kPhantom);
      }
    }
    params_.add(p + "mixer.f.weight", normal({hd, 1}), ParamGroup::kPhantom);
    params_.add(p + "mixer.f.bias", Tensor::zeros({1}), ParamGroup::kPhantom);
    params_.add(p + "mixer.g.weight", normal({hd, 1}), ParamGroup::kPhantom);
    params_.add(p + "mixer.g.bias", Tensor::zeros({1}), ParamGroup::kPhantom);
  }
  params_.add("final_norm.weight", Tensor::full({d}, 1.0), ParamGroup::kBackbone);
  params_.add("lm_head.weight", normal({d, config_.vocab_size}), ParamGroup::kLmHead);
  bind();
}

void PhantomModel::bind() {
  auto get = [this](const std::string& name) { return params_.get(name); };
  embed_ = get("embed.weight");
  lm_head_ = get("lm_head.weight");
  final_norm_ = get("final_norm.weight");
  projector_ = ProjectorWeights{get("projector.fc1.weight"), get("projector.fc1.bias"), get("projector.fc2.weight"),
                                get("projector.fc2.bias")};
  blocks_.clear();
  for (std::size_t l = 0; l < config_.layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    BlockWeights b;
    b.attn_norm = get(p + "attn_norm.weight");
    b.qkv = QkvWeights{get(p + "attn.wq"), get(p + "attn.wk"), get(p + "attn.wv")};
    b.wo = get(p + "attn.wo");
    b.ffn_norm = get(p + "ffn_norm.weight");
    b.ffn_up = get(p + "ffn.up");
    b.ffn_down = get(p + "ffn.down");
    auto path = [&](const std::string& x) {
      const std::string q = p + "mhca." + x + ".";
      return MhcaPathWeights{get(q + "query"), get(q + "key"), get(q + "value"), get(q + "output")};
    };
    b.mhca = MhcaWeights{path("q"), path("k"), path("v")};
    b.mixer = MixerWeights{get(p + "mixer.f.weight"), get(p + "mixer.f.bias"), get(p + "mixer.g.weight"),
                           get(p + "mixer.g.bias")};
    blocks_.push_back(std::move(b));
  }
}

void PhantomModel::set_flags(const ModelConfig& flags) {
  ModelConfig next = config_;
  next.pd_enabled = flags.pd_enabled;
  next.compression = flags.compression;
  next.normalized_mode = flags.normalized_mode;
  next.mhca_residual = flags.mhca_residual;
  next.lambda = flags.lambda;
  next.phantom_index = flags.phantom_index;
  next.attention.positional_mode = flags.attention.positional_mode;
  next.attention.rotary_base = flags.attention.rotary_base;
  next.validate();
  config_ = std::move(next);
}

Tensor forward(const PhantomModel& model, const TokenBatch& tokens, const ImageFeatures& images, const ForwardOptions& options) {
  const ModelConfig& cfg = model.config();
  if (tokens.batch == 0 || tokens.seq == 0) throw Error(ErrorCode::kInvalidArgument, "forward: empty token batch");
  if (tokens.ids.size() != tokens.batch * tokens.seq || tokens.lengths.size() != tokens.batch) {
    throw Error(ErrorCode::kDimension, "forward: malformed token batch");
  }
  if (cfg.pd_enabled && options.position_offset == 0) {
    for (std::size_t b = 0; b < tokens.batch; ++b) {
      if (tokens.row(b)[0] != vocab::kSos) {
        throw Error(ErrorCode::kInvalidArgument, "forward: row " + std::to_string(b) + " does not start with the sos token");
      }
    }
  }
  if (options.caches != nullptr && options.caches->size() != cfg.layers) {
    throw Error(ErrorCode::kState, "forward: cache/config layer mismatch");
  }

  Tensor hidden = embedding(model.embedding_weight(), tokens.ids, {tokens.batch, tokens.seq});

  if (!images.empty()) {
    if (images.size() != tokens.batch) throw Error(ErrorCode::kDimension, "forward: one image entry per batch row required");
    std::vector<std::size_t> rows;
    std::vector<double> feats;
    for (std::size_t b = 0; b < tokens.batch; ++b) {
      const auto row = tokens.row(b);
      std::size_t placeholders = 0;
      for (std::size_t t = 0; t < tokens.lengths[b]; ++t) {
        if (row[t] == vocab::kImage) {
          rows.push_back(b * tokens.seq + t);
          ++placeholders;
        }
      }
      const Tensor& img = images[b];
      const std::size_t p = img.defined() ? img.size(0) : 0;
      if (placeholders != p) {
        throw Error(ErrorCode::kDimension, "forward: row " + std::to_string(b) + " has " + std::to_string(placeholders) +
                                               " image placeholders but " + std::to_string(p) + " feature rows");
      }
      if (p == 0) continue;
      if (img.ndim() != 2 || img.size(1) != cfg.vision_feature_dim) {
        throw Error(ErrorCode::kDimension, "forward: image features " + shape_str(img.shape()) + " do not match vision_feature_dim");
      }
      feats.insert(feats.end(), img.data().begin(), img.data().end());
    }
    if (!rows.empty()) {
      const Tensor stacked = Tensor::from_data({1, rows.size(), cfg.vision_feature_dim}, std::move(feats));
      const Tensor projected = vision_project(stacked, model.projector());
      hidden = splice_rows(hidden, projected, rows);
    }
  }

  std::vector<std::size_t> positions(tokens.seq);
  std::iota(positions.begin(), positions.end(), options.position_offset);
  const bool padded = std::any_of(tokens.lengths.begin(), tokens.lengths.end(), [&](std::size_t n) { return n != tokens.seq; });
  std::vector<std::size_t> key_lengths;
  if (padded) {
    if (options.caches != nullptr) throw Error(ErrorCode::kState, "forward: padded batches cannot use decode caches");
    key_lengths = tokens.lengths;
  }

  const BlockOptions block_opts = cfg.block_options();
  if (options.traces != nullptr) options.traces->assign(cfg.layers, BlockTrace{});
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    LayerCache* cache = options.caches != nullptr ? &(*options.caches)[l] : nullptr;
    BlockTrace* trace = options.traces != nullptr ? &(*options.traces)[l] : nullptr;
    hidden = phantom_block_forward(hidden, model.block(l), block_opts, positions, key_lengths, cache, trace);
  }
  hidden = rms_norm(hidden, model.final_norm_weight(), cfg.rms_eps);
  return matmul(hidden, model.lm_head_weight());
}

}  // namespace phantom
