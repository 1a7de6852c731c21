// Copyright 2026 The Phantom Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "phantom/model.hpp"

namespace phantom {

/// Per-layer K/V caches plus the PD cache (starred features at the sos
/// position, written once during prefill).
struct DecodeCaches {
  std::vector<LayerCache> layers;

  std::size_t length() const { return layers.empty() ? 0 : layers.front().length(); }
};

struct PrefillResult {
  DecodeCaches caches;
  Tensor last_logits;  // [vocab]
};

/// Runs the prompt through the model once, filling the caches. `image` is
/// [P, vision_feature_dim] or undefined.
PrefillResult prefill(const PhantomModel& model, std::span<const std::int32_t> prompt, const Tensor& image = {});

/// Feeds one token at position caches.length(); returns logits [vocab].
Tensor decode_step(const PhantomModel& model, DecodeCaches& caches, std::int32_t token);

enum class DecodeMode { kGreedy, kBeam };

struct DecodeConfig {
  DecodeMode mode = DecodeMode::kBeam;
  std::size_t n = 3;
  std::size_t max_new_tokens = 32;
  std::int32_t eos = vocab::kEos;
  double length_alpha = 1.0;  // score = logprob / length^alpha

  void validate() const;
};

/// Incremental next-token distribution behind greedy and beam search.
class DecodeSession {
 public:
  virtual ~DecodeSession() = default;
  virtual std::unique_ptr<DecodeSession> clone() const = 0;
  /// Log-probabilities of the next token.
  virtual std::vector<double> next_logprobs() const = 0;
  virtual void advance(std::int32_t token) = 0;
};

class ModelSession final : public DecodeSession {
 public:
  ModelSession(const PhantomModel& model, std::span<const std::int32_t> prompt, const Tensor& image = {});

  std::unique_ptr<DecodeSession> clone() const override;
  std::vector<double> next_logprobs() const override;
  void advance(std::int32_t token) override;

  const DecodeCaches& caches() const { return caches_; }

 private:
  ModelSession(const PhantomModel& model, DecodeCaches caches, Tensor logits);

  const PhantomModel* model_;
  DecodeCaches caches_;
  Tensor logits_;
};

struct Hypothesis {
  std::vector<std::int32_t> tokens;  // generated tokens, eos included when finished
  double logprob = 0.0;
  bool finished = false;

  double score(double alpha) const;
};

/// Argmax decoding; ties go to the lower token id.
Hypothesis greedy_decode(const DecodeSession& start, const DecodeConfig& config);

/// Deterministic beam search. Each step keeps the n best expansions ranked by
/// length-normalised log-probability, then lower token id, then lower beam
/// index. Beams that emit eos retire; search ends when n beams have retired,
/// none remain alive, or max_new_tokens is reached.
Hypothesis beam_search(const DecodeSession& start, const DecodeConfig& config);

/// Greedy or beam decoding per config.mode.
Hypothesis generate(const PhantomModel& model, std::span<const std::int32_t> prompt, const Tensor& image,
                    const DecodeConfig& config);

struct BenchWorkload {
  std::size_t prompt_tokens = 16;
  std::size_t decode_tokens = 16;
  std::size_t warmup = 1;
  std::size_t repeats = 3;
};

struct BenchReport {
  std::string preset;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::string timestamp;
  BenchWorkload workload;
  double tps_pd_on = 0.0;
  double tps_pd_off = 0.0;
  double overhead_ratio = 0.0;  // tps_pd_off / tps_pd_on - 1
  std::vector<double> samples_on;
  std::vector<double> samples_off;
};

/// Times prefill plus `decode_tokens` forced decode steps on a random model
/// built from `config`, alternating PD on and off over identical weights.
/// Reports the median tokens per second of each side. With `self_compare`
/// both sides run with PD off.
BenchReport bench(const ModelConfig& config, std::uint64_t seed, const BenchWorkload& workload, bool self_compare = false);

std::string bench_json(const BenchReport& report);

/// Hex FNV-1a over the shape-relevant fields of `config`.
std::string config_hash(const ModelConfig& config);

}  // namespace phantom
