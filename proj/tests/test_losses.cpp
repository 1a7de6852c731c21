// Copyright 2026 The Phantom Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <numbers>
#include <vector>

#include "doctest.h"
#include "phantom/losses.hpp"
#include "test_util.hpp"

using namespace phantom;
using phantom::testing::batch_of;
using phantom::testing::byte_tiny;
using phantom::testing::random_tensor;
using phantom::testing::two_triples;

namespace {

double po(double chosen, double rejected, double beta = kDefaultBeta, double gamma = kDefaultGamma) {
  return po_loss(Tensor::from_data({1}, {chosen}), Tensor::from_data({1}, {rejected}), beta, gamma).item();
}

}  // namespace

TEST_CASE("preference term golden values") {
  CHECK(po(-1.3, -1.3) == doctest::Approx(0.974077).epsilon(1e-6));
  CHECK(std::abs(po(-1.3, -1.3) - 0.9740769841801068) < 1e-12);
  CHECK(std::abs(po(-0.2, -3.0, 0.0, 0.0) - std::numbers::ln2) < 1e-15);
}

TEST_CASE("preference term decreases strictly in the margin") {
  double previous = INFINITY;
  for (double delta = -10.0; delta <= 40.0; delta += 0.5) {
    const double v = po(delta, 0.0);
    CHECK(v < previous);
    CHECK(v > 0.0);
    previous = v;
  }
  CHECK(po(400.0, 0.0) < 1e-300);
  CHECK(std::isfinite(po(-400.0, 0.0)));
}

TEST_CASE("swapping chosen and rejected") {
  for (double delta : {-2.0, -0.3, 0.0, 0.7, 3.0}) {
    const double beta = 2.0, gamma = 0.5;
    const double swapped = po(0.0, delta, beta, gamma);
    const double direct = -std::log(1.0 / (1.0 + std::exp(beta * delta + gamma)));
    CHECK(std::abs(swapped - direct) < 1e-12);
  }
}

TEST_CASE("preference term averages over the batch") {
  const Tensor c = Tensor::from_data({3}, {-1.0, -2.0, -0.5});
  const Tensor r = Tensor::from_data({3}, {-1.5, -1.0, -4.0});
  const double mean = (po(-1.0, -1.5) + po(-2.0, -1.0) + po(-0.5, -4.0)) / 3.0;
  CHECK(std::abs(po_loss(c, r).item() - mean) < 1e-15);
}

TEST_CASE("sequence average log-probability") {
  const std::vector<std::int32_t> targets = {0, 3, 5, 1};
  const Tensor mask = Tensor::from_data({1, 4}, {0, 1, 1, 1});

  const Tensor uniform = sequence_avg_logprob(Tensor::zeros({1, 4, 256}), targets, mask);
  CHECK(std::abs(uniform.item() + std::log(256.0)) < 1e-14);
  CHECK(uniform.item() == doctest::Approx(-5.545).epsilon(1e-4));

  std::vector<double> sure(4 * 8, 0.0);
  for (std::size_t t = 0; t < 4; ++t) sure[t * 8 + static_cast<std::size_t>(targets[t])] = 1000.0;
  CHECK(sequence_avg_logprob(Tensor::from_data({1, 4, 8}, sure), targets, mask).item() == 0.0);

  const Tensor logits = random_tensor({1, 4, 8}, 1);
  const double avg = sequence_avg_logprob(logits, targets, mask).item();
  CHECK(std::abs(avg + cross_entropy(logits, targets, mask).item()) < 1e-14);

  CHECK_THROWS_WITH_AS(sequence_avg_logprob(logits, targets, Tensor::zeros({1, 4})), doctest::Contains("empty answer"),
                       Error);
}

TEST_CASE("loss toggles") {
  const PhantomModel m(byte_tiny(), 2);
  const auto ds = two_triples(16);
  const POBatch batch = batch_of(ds);

  const LossOutput full = phantom_loss(m, batch, {});
  CHECK(full.l_po.item() == full.l_sft.item() + full.po_term.item());
  CHECK(full.po_term.item() > 0.0);
  CHECK(full.margins.size() == 2);
  CHECK(full.preference_accuracy >= 0.0);
  CHECK(full.preference_accuracy <= 1.0);

  LossToggles sft_only;
  sft_only.use_po = false;
  const LossOutput s = phantom_loss(m, batch, sft_only);
  CHECK(s.l_po.item() == s.l_sft.item());
  CHECK(s.po_term.item() == 0.0);
  CHECK(s.l_sft.item() == full.l_sft.item());
  CHECK(s.margin == full.margin);

  LossToggles po_only;
  po_only.use_sft = false;
  const LossOutput p = phantom_loss(m, batch, po_only);
  CHECK(p.l_po.item() == p.po_term.item());
  CHECK(p.l_sft.item() == 0.0);
  CHECK(p.po_term.item() == full.po_term.item());

  // SFT uses the chosen answers only.
  POBatch other = batch;
  other.rejected = batch.chosen;
  CHECK(phantom_loss(m, other, sft_only).l_sft.item() == s.l_sft.item());

  LossToggles none;
  none.use_sft = false;
  none.use_po = false;
  CHECK_THROWS_AS(phantom_loss(m, batch, none), Error);
}

TEST_CASE("margins are length-normalised log-probability gaps") {
  const PhantomModel m(byte_tiny(), 3);
  const auto ds = two_triples(16);
  const POBatch batch = batch_of(ds);
  const LossOutput out = phantom_loss(m, batch, {});
  const Tensor lc = forward(m, batch.chosen.tokens, batch.images);
  const Tensor lr = forward(m, batch.rejected.tokens, batch.images);
  const Tensor pc = sequence_avg_logprob(lc, batch.chosen.targets, batch.chosen.loss_mask);
  const Tensor pr = sequence_avg_logprob(lr, batch.rejected.targets, batch.rejected.loss_mask);
  double acc = 0.0;
  for (std::size_t b = 0; b < 2; ++b) {
    const double margin = kDefaultBeta * (pc.data()[b] - pr.data()[b]);
    CHECK(std::abs(out.margins[b] - margin) < 1e-12);
    acc += margin > 0.0 ? 0.5 : 0.0;
  }
  CHECK(out.preference_accuracy == acc);
  CHECK(std::abs(out.po_term.item() - po_loss(pc, pr).item()) < 1e-14);
}

TEST_CASE("full objective passes gradcheck") {
  PhantomModel m(byte_tiny(1024), 4);
  const auto ds = two_triples(1024);
  const POBatch batch = batch_of(ds);
  std::vector<Tensor> inputs;
  for (const auto& e : m.params().entries()) inputs.push_back(e.tensor);
  GradcheckOptions opts;
  opts.max_coords_per_input = 3;
  opts.seed = 4;
  const auto rep = gradcheck([&] { return phantom_loss(m, batch, {}).l_po; }, inputs, opts);
  CHECK(rep.max_rel_error < 1e-4);
  CHECK(rep.coords_checked > 3 * 50);
}

TEST_CASE("one preference step raises the margin") {
  PhantomModel m(byte_tiny(), 5);
  const auto ds = two_triples(16);
  const POBatch batch = batch_of(ds);
  m.params().set_trainable(freeze_mask(TrainPhase::kStep1));
  LossToggles po_only;
  po_only.use_sft = false;

  Tape::active().reset();
  const LossOutput before = phantom_loss(m, batch, po_only);
  backward(before.l_po);
  Tape::active().reset();
  for (auto& e : m.params().entries()) {
    if (!e.tensor.has_grad()) continue;
    auto& impl = *e.tensor.impl_ptr();
    for (std::size_t i = 0; i < impl.data.size(); ++i) impl.data[i] -= 0.5 * impl.grad[i];
  }
  m.params().zero_grad();
  m.params().set_trainable({});
  const LossOutput after = phantom_loss(m, batch, po_only);
  CHECK(after.margin > before.margin);
  CHECK(after.po_term.item() < before.po_term.item());
}
