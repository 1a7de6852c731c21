// Copyright 2026 The Phantom Authors
// SPDX-License-Identifier: Apache-2.0

#include "phantom/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>

#include "json.hpp"
#include "phantom/checkpoint.hpp"

namespace phantom {

void TrainConfig::validate() const {
  if (!(lr_end > 0.0) || !(lr_start >= lr_end)) throw Error(ErrorCode::kConfig, "TrainConfig: need lr_start >= lr_end > 0");
  if (grad_accum < 1) throw Error(ErrorCode::kConfig, "TrainConfig: grad_accum must be >= 1");
  if (batch_size < 1) throw Error(ErrorCode::kConfig, "TrainConfig: batch_size must be >= 1");
  if (epochs < 1) throw Error(ErrorCode::kConfig, "TrainConfig: epochs must be >= 1");
}

double cosine_lr(std::size_t step, std::size_t total_steps, double lr_start, double lr_end) {
  if (total_steps < 1 || step > total_steps) {
    throw Error(ErrorCode::kInvalidArgument, "cosine_lr: need 0 <= step <= total_steps and total_steps >= 1");
  }
  const double progress = static_cast<double>(step) / static_cast<double>(total_steps);
  return lr_end + 0.5 * (lr_start - lr_end) * (1.0 + std::cos(std::numbers::pi * progress));
}

AdamW::AdamW(ParamStore& params, AdamWConfig config) : params_(params), config_(config) {
  m_.resize(params_.entries().size());
  v_.resize(params_.entries().size());
}

void AdamW::step(double lr) {
  auto& entries = params_.entries();
  if (entries.size() != m_.size()) throw Error(ErrorCode::kState, "AdamW: parameter store changed size");
  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < entries.size(); ++i) {
    Tensor& p = entries[i].tensor;
    // Like an unset gradient: entries untouched by this step's graph are skipped.
    if (!p.requires_grad() || !p.has_grad()) continue;
    auto data = p.mutable_data();
    const auto grad = p.grad();
    if (grad.size() != data.size()) {
      throw Error(ErrorCode::kDimension, "AdamW: gradient size mismatch for '" + entries[i].name + "'");
    }
    if (m_[i].empty()) {
      m_[i].assign(data.size(), 0.0);
      v_[i].assign(data.size(), 0.0);
    }
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < data.size(); ++k) {
      const double g = grad[k];
      data[k] *= 1.0 - lr * config_.weight_decay;
      m[k] = config_.beta1 * m[k] + (1.0 - config_.beta1) * g;
      v[k] = config_.beta2 * v[k] + (1.0 - config_.beta2) * g * g;
      const double m_hat = m[k] / bc1;
      const double v_hat = v[k] / bc2;
      data[k] -= lr * m_hat / (std::sqrt(v_hat) + config_.eps);
    }
  }
}

double global_grad_norm(const ParamStore& params) {
  double sq = 0.0;
  for (const auto& e : params.entries()) {
    if (!e.tensor.requires_grad()) continue;
    for (double g : e.tensor.grad()) sq += g * g;
  }
  return std::sqrt(sq);
}

double clip_grad_norm(ParamStore& params, double max_norm) {
  const double norm = global_grad_norm(params);
  if (max_norm > 0.0 && norm > max_norm) {
    const double factor = max_norm / (norm + 1e-12);
    for (auto& e : params.entries()) {
      if (!e.tensor.requires_grad()) continue;
      for (double& g : e.tensor.impl_ptr()->grad) g *= factor;
    }
  }
  return norm;
}

LossToggles phase_toggles(TrainPhase phase, const TrainConfig& config) {
  LossToggles t;
  t.use_sft = true;
  t.use_po = phase == TrainPhase::kStep1 ? config.po_in_step1 : config.po_in_step2;
  t.beta = config.beta;
  t.gamma = config.gamma;
  return t;
}

std::string metrics_json(const StepMetrics& m) {
  nlohmann::ordered_json j;
  j["step"] = m.step;
  j["phase"] = std::string(phase_name(m.phase));
  j["l_sft"] = m.l_sft;
  j["po_term"] = m.po_term;
  j["margin"] = m.margin;
  j["pref_acc"] = m.pref_acc;
  j["lr"] = m.lr;
  j["grad_norm"] = m.grad_norm;
  return j.dump();
}

StepMetrics train_step(PhantomModel& model, AdamW& optimizer, std::span<const POBatch> micro_batches,
                       const LossToggles& toggles, double lr, double clip_norm) {
  if (micro_batches.empty()) throw Error(ErrorCode::kInvalidArgument, "train_step: no micro-batches");
  model.params().zero_grad();
  StepMetrics out;
  out.lr = lr;
  const double inv = 1.0 / static_cast<double>(micro_batches.size());
  std::size_t triples = 0;
  double wins = 0.0;
  for (const auto& mb : micro_batches) {
    Tape::active().reset();
    const LossOutput loss = phantom_loss(model, mb, toggles);
    // No trainable parameter on the graph (e.g. step 1 with PD off on text rows).
    if (loss.l_po.requires_grad()) backward(scale(loss.l_po, inv));
    Tape::active().reset();
    const double n = static_cast<double>(loss.margins.size());
    out.l_sft += loss.l_sft.item() * n;
    out.po_term += loss.po_term.item() * n;
    out.margin += loss.margin * n;
    wins += loss.preference_accuracy * n;
    triples += loss.margins.size();
  }
  const double total = static_cast<double>(triples);
  out.l_sft /= total;
  out.po_term /= total;
  out.margin /= total;
  out.pref_acc = wins / total;
  out.grad_norm = clip_grad_norm(model.params(), clip_norm);
  optimizer.step(lr);
  return out;
}

EvalMetrics evaluate(const PhantomModel& model, const TripleDataset& dataset, std::size_t batch_size, double beta,
                     double gamma) {
  NoGradGuard no_grad;
  EvalMetrics out;
  LossToggles toggles;
  toggles.beta = beta;
  toggles.gamma = gamma;
  double wins = 0.0;
  for (std::size_t start = 0; start < dataset.size(); start += batch_size) {
    std::vector<std::size_t> idx(std::min(batch_size, dataset.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    const LossOutput loss = phantom_loss(model, make_po_batch(dataset, idx), toggles);
    const double n = static_cast<double>(idx.size());
    out.l_sft += loss.l_sft.item() * n;
    out.po_term += loss.po_term.item() * n;
    out.margin += loss.margin * n;
    wins += loss.preference_accuracy * n;
    out.count += idx.size();
  }
  if (out.count > 0) {
    const double total = static_cast<double>(out.count);
    out.l_sft /= total;
    out.po_term /= total;
    out.margin /= total;
    out.pref_acc = wins / total;
  }
  return out;
}

std::vector<StepMetrics> run_phase(PhantomModel& model, const TripleDataset& dataset, TrainPhase phase,
                                   const TrainConfig& config, const StepCallback& on_step) {
  config.validate();
  if (dataset.size() == 0) throw Error(ErrorCode::kInvalidArgument, "run_phase: empty dataset");
  model.params().set_trainable(freeze_mask(phase));
  AdamW optimizer(model.params(), config.adamw);
  const LossToggles toggles = phase_toggles(phase, config);

  const std::size_t micro_per_epoch = (dataset.size() + config.batch_size - 1) / config.batch_size;
  const std::size_t steps_per_epoch = (micro_per_epoch + config.grad_accum - 1) / config.grad_accum;
  const std::size_t total_steps = steps_per_epoch * config.epochs;
  const std::size_t schedule_len = std::max<std::size_t>(1, total_steps - 1);

  std::mt19937_64 rng(config.seed * 2 + (phase == TrainPhase::kStep1 ? 0 : 1));
  std::vector<StepMetrics> log;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (config.shuffle) std::shuffle(order.begin(), order.end(), rng);
    std::vector<POBatch> micro;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t len = std::min(config.batch_size, order.size() - start);
      micro.push_back(make_po_batch(dataset, std::span(order).subspan(start, len)));
      const bool last = start + len >= order.size();
      if (micro.size() == config.grad_accum || last) {
        const double lr = cosine_lr(std::min(step, schedule_len), schedule_len, config.lr_start, config.lr_end);
        StepMetrics m = train_step(model, optimizer, micro, toggles, lr, config.clip_norm);
        m.step = step++;
        m.phase = phase;
        if (on_step) on_step(m);
        log.push_back(m);
        micro.clear();
      }
    }
  }
  model.params().zero_grad();
  return log;
}

TwoStepReport run_two_step(PhantomModel& model, const TripleDataset& dataset, const TrainConfig& config,
                           const std::filesystem::path& out_dir) {
  config.validate();
  if (dataset.size() == 0) throw Error(ErrorCode::kInvalidArgument, "run_two_step: empty dataset");
  TwoStepReport report;
  std::ofstream log;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    report.metrics_log = out_dir / "metrics.jsonl";
    log.open(report.metrics_log, std::ios::trunc);
    if (!log) throw Error(ErrorCode::kIo, "cannot write '" + report.metrics_log.string() + "'");
  }
  const StepCallback write = [&](const StepMetrics& m) {
    if (log.is_open()) log << metrics_json(m) << '\n' << std::flush;
  };
  const std::size_t eval_batch = std::max<std::size_t>(config.batch_size, 8);

  report.initial = evaluate(model, dataset, eval_batch, config.beta, config.gamma);
  auto s1 = run_phase(model, dataset, TrainPhase::kStep1, config, write);
  report.after_step1 = evaluate(model, dataset, eval_batch, config.beta, config.gamma);
  if (!out_dir.empty()) {
    report.step1_checkpoint = out_dir / "step1.pckpt";
    save_checkpoint(model, report.step1_checkpoint);
  }
  auto s2 = run_phase(model, dataset, TrainPhase::kStep2, config, write);
  report.final = evaluate(model, dataset, eval_batch, config.beta, config.gamma);
  if (!out_dir.empty()) {
    report.step2_checkpoint = out_dir / "step2.pckpt";
    save_checkpoint(model, report.step2_checkpoint);
  }
  report.steps = std::move(s1);
  report.steps.insert(report.steps.end(), s2.begin(), s2.end());
  return report;
}

std::string AblationCombo::name() const {
  auto flag = [](bool b) { return b ? "on" : "off"; };
  return std::string("wa-") + flag(wa) + "_pd-" + flag(pd) + "_po1-" + flag(po_step1) + "_po2-" + flag(po_step2);
}

std::vector<AblationCombo> ablation_matrix(bool include_po_step2) {
  std::vector<AblationCombo> combos;
  const std::size_t factors = include_po_step2 ? 4 : 3;
  for (std::size_t mask = 0; mask < (std::size_t{1} << factors); ++mask) {
    AblationCombo c;
    c.wa = mask & 1;
    c.pd = mask & 2;
    c.po_step1 = mask & 4;
    c.po_step2 = include_po_step2 && (mask & 8);
    combos.push_back(c);
  }
  return combos;
}

namespace {

nlohmann::ordered_json eval_json(const EvalMetrics& e) {
  nlohmann::ordered_json j;
  j["l_sft"] = e.l_sft;
  j["po_term"] = e.po_term;
  j["margin"] = e.margin;
  j["pref_acc"] = e.pref_acc;
  j["count"] = e.count;
  return j;
}

std::string_view compression_name(CompressionMode mode) {
  switch (mode) {
    case CompressionMode::kWeightedAverage: return "wa";
    case CompressionMode::kSum: return "sum";
    case CompressionMode::kMean: return "mean";
  }
  return "?";
}

}  // namespace

std::vector<AblationResult> run_ablation(const ModelConfig& base, std::uint64_t model_seed, const TrainConfig& config,
                                         const TripleDataset& train, const TripleDataset& held_out,
                                         std::span<const AblationCombo> combos, const std::filesystem::path& out_dir) {
  std::vector<AblationResult> results;
  const std::size_t eval_batch = std::max<std::size_t>(config.batch_size, 8);
  nlohmann::ordered_json summary = nlohmann::ordered_json::array();
  for (const auto& combo : combos) {
    std::vector<CompressionMode> modes;
    if (combo.wa) {
      modes = {CompressionMode::kWeightedAverage};
    } else {
      modes = {CompressionMode::kSum, CompressionMode::kMean};
    }
    std::optional<AblationResult> best;
    for (CompressionMode mode : modes) {
      ModelConfig cfg = base;
      cfg.pd_enabled = combo.pd;
      cfg.compression = mode;
      PhantomModel model(cfg, model_seed);
      TrainConfig tc = config;
      tc.po_in_step1 = combo.po_step1;
      tc.po_in_step2 = combo.po_step2;
      const std::filesystem::path dir =
          out_dir.empty() ? std::filesystem::path{}
                          : out_dir / (combo.name() + (combo.wa ? "" : "_" + std::string(compression_name(mode))));
      TwoStepReport report = run_two_step(model, train, tc, dir);
      AblationResult r;
      r.combo = combo;
      r.compression = mode;
      r.train_final = report.final;
      r.held_out = evaluate(model, held_out, eval_batch, config.beta, config.gamma);
      r.metrics_log = report.metrics_log;
      if (!best || r.held_out.pref_acc > best->held_out.pref_acc) best = std::move(r);
    }
    nlohmann::ordered_json j;
    j["combo"] = combo.name();
    j["wa"] = combo.wa;
    j["pd"] = combo.pd;
    j["po_step1"] = combo.po_step1;
    j["po_step2"] = combo.po_step2;
    j["compression"] = std::string(compression_name(best->compression));
    j["held_out"] = eval_json(best->held_out);
    j["train_final"] = eval_json(best->train_final);
    j["metrics_log"] = best->metrics_log.string();
    summary.push_back(std::move(j));
    results.push_back(std::move(*best));
  }
  if (!out_dir.empty()) {
    std::ofstream out(out_dir / "ablation.json", std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIo, "cannot write ablation summary under '" + out_dir.string() + "'");
    out << summary.dump(2) << '\n';
  }
  return results;
}

}  // namespace phantom
