// Copyright 2026 The Phantom Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "phantom/data.hpp"
#include "phantom/losses.hpp"
#include "phantom/model.hpp"

namespace phantom {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

struct TrainConfig {
  bool po_in_step1 = true;
  bool po_in_step2 = false;
  double lr_start = 1e-5;
  double lr_end = 1e-6;
  std::size_t grad_accum = 4;
  std::size_t batch_size = 8;
  std::size_t epochs = 1;
  std::uint64_t seed = 0;
  double beta = kDefaultBeta;
  double gamma = kDefaultGamma;
  double clip_norm = 1.0;  // <= 0 disables clipping
  bool shuffle = true;
  AdamWConfig adamw;

  void validate() const;
};

/// lr_end + (lr_start - lr_end) * (1 + cos(pi * step / total_steps)) / 2.
double cosine_lr(std::size_t step, std::size_t total_steps, double lr_start, double lr_end);

/// Decoupled-weight-decay Adam over the entries of a ParamStore. Entries
/// without requires_grad or without a gradient are skipped for the step.
class AdamW {
 public:
  AdamW(ParamStore& params, AdamWConfig config = {});

  void step(double lr);
  std::size_t step_count() const { return t_; }

 private:
  ParamStore& params_;
  AdamWConfig config_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

/// L2 norm over the gradients of trainable entries.
double global_grad_norm(const ParamStore& params);
/// Rescales gradients so their global norm is at most `max_norm`; returns the
/// norm before clipping.
double clip_grad_norm(ParamStore& params, double max_norm);

/// Loss terms active in `phase` under `config`: SFT always, PO per phase flag.
LossToggles phase_toggles(TrainPhase phase, const TrainConfig& config);

struct StepMetrics {
  std::size_t step = 0;
  TrainPhase phase = TrainPhase::kStep1;
  double l_sft = 0.0;
  double po_term = 0.0;
  double margin = 0.0;
  double pref_acc = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;
};

std::string metrics_json(const StepMetrics& m);

/// One optimizer update: each micro-batch loss is scaled by 1/micro_batches.size()
/// and back-propagated, gradients are clipped, then AdamW steps with `lr`.
/// Metrics are triple-weighted means over the micro-batches.
StepMetrics train_step(PhantomModel& model, AdamW& optimizer, std::span<const POBatch> micro_batches,
                       const LossToggles& toggles, double lr, double clip_norm);

struct EvalMetrics {
  double l_sft = 0.0;
  double po_term = 0.0;
  double margin = 0.0;
  double pref_acc = 0.0;
  std::size_t count = 0;
};

/// Gradient-free pass over the whole dataset, triple-weighted.
EvalMetrics evaluate(const PhantomModel& model, const TripleDataset& dataset, std::size_t batch_size,
                     double beta = kDefaultBeta, double gamma = kDefaultGamma);

using StepCallback = std::function<void(const StepMetrics&)>;

/// Runs `config.epochs` epochs of `phase`, with a fresh optimizer and the
/// phase's freeze mask. Trainability flags are left set for the phase.
std::vector<StepMetrics> run_phase(PhantomModel& model, const TripleDataset& dataset, TrainPhase phase,
                                   const TrainConfig& config, const StepCallback& on_step = {});

struct TwoStepReport {
  EvalMetrics initial;
  EvalMetrics after_step1;
  EvalMetrics final;
  std::vector<StepMetrics> steps;
  std::filesystem::path step1_checkpoint;
  std::filesystem::path step2_checkpoint;
  std::filesystem::path metrics_log;
};

/// Step 1 (projector + PD groups), checkpoint, step 2 (all groups),
/// checkpoint. With an empty `out_dir` nothing is written.
TwoStepReport run_two_step(PhantomModel& model, const TripleDataset& dataset, const TrainConfig& config,
                           const std::filesystem::path& out_dir = {});

struct AblationCombo {
  bool wa = true;
  bool pd = true;
  bool po_step1 = true;
  bool po_step2 = false;

  std::string name() const;
};

/// All 2^k combinations; with include_po_step2 false the PO-step2 factor is held off.
std::vector<AblationCombo> ablation_matrix(bool include_po_step2);

struct AblationResult {
  AblationCombo combo;
  CompressionMode compression = CompressionMode::kWeightedAverage;
  EvalMetrics held_out;
  EvalMetrics train_final;
  std::filesystem::path metrics_log;
};

/// Trains a fresh `base` model (same seed) per combination and evaluates on
/// `held_out`. With WA off both sum and mean compression are trained and the
/// one with the higher held-out preference accuracy is kept.
std::vector<AblationResult> run_ablation(const ModelConfig& base, std::uint64_t model_seed, const TrainConfig& config,
                                         const TripleDataset& train, const TripleDataset& held_out,
                                         std::span<const AblationCombo> combos, const std::filesystem::path& out_dir);

}  // namespace phantom
