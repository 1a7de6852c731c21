// Copyright 2026 The Phantom Authors
// SPDX-License-Identifier: Apache-2.0

#include "phantom/losses.hpp"

#include <string>

namespace phantom {

Tensor sequence_avg_logprob(const Tensor& logits, std::span<const std::int32_t> targets, const Tensor& answer_mask) {
  Tensor lp = token_logprobs(logits, targets);
  if (answer_mask.shape() != lp.shape() || lp.ndim() != 2) {
    throw Error(ErrorCode::kDimension, "sequence_avg_logprob: mask " + shape_str(answer_mask.shape()) + " vs log-probs " +
                                           shape_str(lp.shape()));
  }
  const std::size_t batch = lp.size(0);
  const std::size_t seq = lp.size(1);
  std::vector<double> inv_count(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    double n = 0.0;
    for (std::size_t t = 0; t < seq; ++t) n += answer_mask.data()[b * seq + t];
    if (n <= 0.0) throw Error(ErrorCode::kInvalidArgument, "sequence_avg_logprob: empty answer mask in row " + std::to_string(b));
    inv_count[b] = 1.0 / n;
  }
  return mul(sum_lastdim(mul(lp, answer_mask)), Tensor::from_data({batch}, std::move(inv_count)));
}

Tensor po_loss(const Tensor& chosen_logp, const Tensor& rejected_logp, double beta, double gamma) {
  const Tensor z = add_scalar(scale(sub(chosen_logp, rejected_logp), beta), -gamma);
  return neg(mean(log_sigmoid(z)));
}

LossOutput phantom_loss(const PhantomModel& model, const POBatch& batch, const LossToggles& toggles) {
  if (!toggles.use_sft && !toggles.use_po) throw Error(ErrorCode::kInvalidArgument, "phantom_loss: both SFT and PO disabled");

  const Tensor chosen_logits = forward(model, batch.chosen.tokens, batch.images);
  const Tensor chosen = sequence_avg_logprob(chosen_logits, batch.chosen.targets, batch.chosen.loss_mask);

  Tensor rejected;
  if (toggles.use_po) {
    rejected = sequence_avg_logprob(forward(model, batch.rejected.tokens, batch.images), batch.rejected.targets,
                                    batch.rejected.loss_mask);
  } else {
    NoGradGuard no_grad;
    rejected = sequence_avg_logprob(forward(model, batch.rejected.tokens, batch.images), batch.rejected.targets,
                                    batch.rejected.loss_mask);
  }
  if (chosen.numel() != rejected.numel()) throw Error(ErrorCode::kDimension, "phantom_loss: chosen/rejected batch sizes differ");

  LossOutput out;
  out.l_sft = toggles.use_sft ? neg(mean(chosen)) : Tensor::scalar(0.0);
  out.po_term = toggles.use_po ? po_loss(chosen, rejected, toggles.beta, toggles.gamma) : Tensor::scalar(0.0);
  if (!toggles.use_po) {
    out.l_po = out.l_sft;
  } else if (!toggles.use_sft) {
    out.l_po = out.po_term;
  } else {
    out.l_po = add(out.l_sft, out.po_term);
  }

  const std::size_t n = chosen.numel();
  out.margins.resize(n);
  std::size_t wins = 0;
  for (std::size_t i = 0; i < n; ++i) {
    out.margins[i] = toggles.beta * (chosen.data()[i] - rejected.data()[i]);
    out.margin += out.margins[i];
    if (out.margins[i] > 0.0) ++wins;
  }
  out.margin /= static_cast<double>(n);
  out.preference_accuracy = static_cast<double>(wins) / static_cast<double>(n);
  return out;
}

}  // namespace phantom
