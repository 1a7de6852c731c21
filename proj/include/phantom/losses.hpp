// Copyright 2026 The Phantom Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "phantom/model.hpp"
#include "phantom/tensor.hpp"

namespace phantom {

inline constexpr double kDefaultBeta = 2.0;
inline constexpr double kDefaultGamma = 0.5;

/// Teacher-forced batch: targets[b, t] is the token predicted at position t;
/// loss_mask selects answer (and eos) predictions only.
struct LabeledBatch {
  TokenBatch tokens;
  std::vector<std::int32_t> targets;  // [B, T]
  Tensor loss_mask;                   // [B, T], 0/1
};

struct POBatch {
  LabeledBatch chosen;
  LabeledBatch rejected;
  ImageFeatures images;  // shared by both sequences; empty for text-only batches
};

/// Per-sequence (1/|y|) * sum of answer-token log-probabilities. Returns [B].
Tensor sequence_avg_logprob(const Tensor& logits, std::span<const std::int32_t> targets, const Tensor& answer_mask);

/// mean_b -log sigmoid(beta * chosen_b - beta * rejected_b - gamma). The
/// inputs are already length-normalised log-probabilities.
Tensor po_loss(const Tensor& chosen_logp, const Tensor& rejected_logp, double beta = kDefaultBeta,
               double gamma = kDefaultGamma);

struct LossToggles {
  bool use_sft = true;
  bool use_po = true;
  double beta = kDefaultBeta;
  double gamma = kDefaultGamma;
};

struct LossOutput {
  Tensor l_sft;    // scalar; exactly 0 when SFT is disabled
  Tensor po_term;  // scalar; exactly 0 when PO is disabled
  Tensor l_po;     // l_sft + po_term
  std::vector<double> margins;  // beta * (chosen - rejected) per triple
  double margin = 0.0;          // mean of margins
  double preference_accuracy = 0.0;
};

/// SFT on (x, y+) plus the reference-free preference term over (x, y+), (x, y-).
/// Margins are always reported; the rejected pass runs without gradient when
/// PO is disabled.
LossOutput phantom_loss(const PhantomModel& model, const POBatch& batch, const LossToggles& toggles);

}  // namespace phantom
