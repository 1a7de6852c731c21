// Copyright 2026 The Phantom Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstring>
#include <filesystem>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "phantom/checkpoint.hpp"
#include "phantom/losses.hpp"
#include "phantom/model.hpp"
#include "test_util.hpp"

using namespace phantom;
using phantom::testing::bitwise_equal;
using phantom::testing::byte_tiny;
using phantom::testing::max_abs_diff;
using phantom::testing::random_tensor;

namespace {

TokenBatch prompt(std::initializer_list<std::int32_t> rest) {
  std::vector<std::int32_t> ids = {vocab::kSos};
  ids.insert(ids.end(), rest);
  return TokenBatch::single(ids);
}

std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("phantom_test_model_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// Embedding, plain pre-norm blocks, final norm and head, written directly
// from the primitives.
Tensor reference_forward(const PhantomModel& m, const TokenBatch& tokens) {
  const ModelConfig& c = m.config();
  const AttentionConfig& att = c.attention;
  std::vector<std::size_t> pos(tokens.seq);
  for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = i;
  Tensor h = embedding(m.embedding_weight(), tokens.ids, {tokens.batch, tokens.seq});
  for (std::size_t l = 0; l < c.layers; ++l) {
    const BlockWeights& w = m.block(l);
    const Tensor normed = rms_norm(h, w.attn_norm, c.rms_eps);
    Qkv p = project_qkv(normed, w.qkv, att);
    p.q = apply_rotary(p.q, pos, att.rotary_base);
    p.k = apply_rotary(p.k, pos, att.rotary_base);
    const Tensor o = causal_mhsa(p.q, p.k, p.v, att).output;
    const Tensor x = add(h, matmul(reshape(o, {tokens.batch, tokens.seq, att.d_q}), w.wo));
    h = add(x, matmul(gelu(matmul(rms_norm(x, w.ffn_norm, c.rms_eps), w.ffn_up)), w.ffn_down));
  }
  return matmul(rms_norm(h, m.final_norm_weight(), c.rms_eps), m.lm_head_weight());
}

}  // namespace

TEST_CASE("presets") {
  CHECK(preset("phantom-0.5b").head_dim() == 64);
  CHECK(preset("phantom-0.5b").layers == 24);
  CHECK(preset("phantom-1.8b").attention.d_q == 2048);
  CHECK(preset("phantom-1.8b").attention.h_kv == 8);
  CHECK(preset("phantom-3.8b").layers == 32);
  CHECK(preset("phantom-3.8b").attention.h_kv == 32);
  CHECK(preset("phantom-7b").attention.d_q == 4096);
  const ModelConfig tiny = preset("tiny");
  CHECK_NOTHROW(tiny.attention.validate());
  CHECK(tiny.attention.d_q == 64);
  CHECK(tiny.attention.h_q == 4);
  CHECK(tiny.attention.h_kv == 2);
  CHECK(tiny.layers == 2);
  CHECK(tiny.vocab_size == 256);
  CHECK(tiny.ffn_hidden == 256);
  CHECK_THROWS_AS(preset("phantom-70b"), Error);
}

TEST_CASE("MHCA parameter counts") {
  CHECK(count_mhca_params(preset("phantom-0.5b")) == 1'179'648);
  CHECK(count_mhca_params(preset("phantom-1.8b")) == 4'718'592);
  CHECK(count_mhca_params(preset("phantom-3.8b")) == 3'538'944);
  CHECK(count_mhca_params(preset("phantom-7b")) == 6'291'456);
  CHECK(count_mhca_params(preset("tiny")) == 6'144);
}

TEST_CASE("analytic parameter counts match an allocated model") {
  for (const ModelConfig& c : {preset("tiny"), byte_tiny()}) {
    const PhantomModel m(c, 3);
    const auto counts = parameter_counts(c);
    std::uint64_t total = 0;
    for (const auto& [group, n] : counts) {
      CAPTURE(group_name(group));
      CHECK(n == m.params().parameter_count(group));
      total += n;
    }
    CHECK(total == m.params().parameter_count());
  }
}

TEST_CASE("vision projector") {
  const PhantomModel m(byte_tiny(), 1);
  ProjectorWeights zero{m.projector().fc1_weight, Tensor::zeros({64}), m.projector().fc2_weight, Tensor::zeros({64})};
  const Tensor z = vision_project(Tensor::zeros({1, 3, 16}), zero);
  for (double v : z.data()) CHECK(v == 0.0);

  CHECK(vision_project(Tensor::zeros({1, 0, 16}), m.projector()).shape() == Shape{1, 0, 64});

  ModelConfig wide = preset("tiny");
  const PhantomModel w(wide, 1);
  CHECK(vision_project(random_tensor({2, 5, 1024}, 2), w.projector()).shape() == Shape{2, 5, 64});
  CHECK_THROWS_AS(vision_project(random_tensor({2, 5, 1000}, 2), w.projector()), Error);
}

TEST_CASE("text-only forward leaves the sequence untouched") {
  const PhantomModel m(byte_tiny(), 4);
  const TokenBatch t = prompt({72, 105});
  CHECK(bitwise_equal(forward(m, t), forward(m, t, {Tensor{}})));
}

TEST_CASE("image features replace the placeholders") {
  const PhantomModel m(byte_tiny(), 5);
  const TokenBatch t = prompt({vocab::kImage, vocab::kImage, 72});
  const Tensor a = forward(m, t, {random_tensor({2, 16}, 6)});
  const Tensor b = forward(m, t, {random_tensor({2, 16}, 7)});
  CHECK(a.shape() == Shape{1, 4, vocab::kSize});
  CHECK(max_abs_diff(a, b) > 0.0);
  // Position 0 precedes the image under causal attention.
  CHECK(bitwise_equal(slice(a, 1, 0, 1), slice(b, 1, 0, 1)));
  CHECK_THROWS_AS(forward(m, t, {random_tensor({3, 16}, 6)}), Error);
}

TEST_CASE("forward shape, determinism and sos requirement") {
  ModelConfig c = preset("tiny");
  c.pd_enabled = false;
  const PhantomModel plain(c, 8);
  const TokenBatch bytes = TokenBatch::single(std::vector<std::int32_t>{1, 2, 3, 4, 5});
  CHECK(forward(plain, bytes).shape() == Shape{1, 5, 256});

  const PhantomModel m(byte_tiny(), 8);
  const TokenBatch t = prompt({10, 20, 30});
  const Tensor a = forward(m, t);
  CHECK(a.shape() == Shape{1, 4, 260});
  CHECK(bitwise_equal(a, forward(m, t)));
  CHECK(bitwise_equal(a, forward(PhantomModel(byte_tiny(), 8), t)));
  CHECK_FALSE(bitwise_equal(a, forward(PhantomModel(byte_tiny(), 9), t)));

  CHECK_THROWS_WITH_AS(forward(m, TokenBatch::single(std::vector<std::int32_t>{10, 20})),
                       doctest::Contains("sos"), Error);
}

TEST_CASE("PD off equals the vanilla reference path bitwise") {
  ModelConfig c = byte_tiny();
  c.pd_enabled = false;
  const PhantomModel m(c, 10);
  const TokenBatch t = prompt({5, 6, 7, 8, 9, 10});
  CHECK(bitwise_equal(forward(m, t), reference_forward(m, t)));

  // Flipping the flag on a PD model gives the same function of the shared weights.
  PhantomModel pd(byte_tiny(), 10);
  pd.set_flags(c);
  CHECK(bitwise_equal(forward(pd, t), reference_forward(m, t)));
}

TEST_CASE("freeze masks") {
  const auto s1 = freeze_mask(TrainPhase::kStep1);
  CHECK(s1 == std::set<ParamGroup>{ParamGroup::kProjector, ParamGroup::kPhantom});
  CHECK(freeze_mask(TrainPhase::kStep2).size() == 5);

  PhantomModel m(byte_tiny(), 11);
  m.params().set_trainable(s1);
  POBatch batch;
  batch.chosen.tokens = prompt({1, 2, 3});
  batch.chosen.targets = {1, 2, 3, vocab::kEos};
  batch.chosen.loss_mask = Tensor::from_data({1, 4}, {0, 1, 1, 1});
  batch.rejected = batch.chosen;
  batch.rejected.targets = {1, 2, 4, vocab::kEos};
  Tape::active().reset();
  backward(phantom_loss(m, batch, {}).l_po);
  Tape::active().reset();
  for (const auto& e : m.params().entries()) {
    CAPTURE(e.name);
    if (s1.count(e.group)) {
      CHECK(e.tensor.requires_grad());
    } else {
      CHECK_FALSE(e.tensor.requires_grad());
      CHECK_FALSE(e.tensor.has_grad());
    }
  }
  m.params().zero_grad();
}

TEST_CASE("checksums track group contents") {
  PhantomModel m(byte_tiny(), 12);
  const auto before = m.params().checksum(ParamGroup::kPhantom);
  const auto backbone = m.params().checksum(ParamGroup::kBackbone);
  m.params().get("layers.0.mixer.f.bias").impl_ptr()->data[0] += 1e-3;
  CHECK(m.params().checksum(ParamGroup::kPhantom) != before);
  CHECK(m.params().checksum(ParamGroup::kBackbone) == backbone);
}

TEST_CASE("PCKPT round trips") {
  const std::vector<NamedTensor> tensors = {
      {"a", random_tensor({2, 3}, 13), StorageDtype::kF64},
      {"b.scalar", Tensor::scalar(-0.1), StorageDtype::kF64},
      {"c", random_tensor({4}, 14), StorageDtype::kF32},
      {"empty", Tensor::zeros({0, 3}), StorageDtype::kF64},
  };
  std::stringstream buf;
  write_pckpt(buf, tensors);
  const std::string bytes = buf.str();
  CHECK(bytes.substr(0, 4) == "PCKP");
  std::uint32_t version = 0, count = 0;
  std::memcpy(&version, bytes.data() + 4, 4);
  std::memcpy(&count, bytes.data() + 8, 4);
  CHECK(version == 1);
  CHECK(count == 4);

  const auto back = read_pckpt(buf);
  REQUIRE(back.size() == 4);
  CHECK(back[0].name == "a");
  CHECK(bitwise_equal(back[0].tensor, tensors[0].tensor));
  CHECK(bitwise_equal(back[1].tensor, tensors[1].tensor));
  CHECK(back[2].dtype == StorageDtype::kF32);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(back[2].tensor.data()[i] == static_cast<double>(static_cast<float>(tensors[2].tensor.data()[i])));
  }
  CHECK(back[3].tensor.shape() == Shape{0, 3});

  // Writing the f32 result again reproduces the same bytes.
  std::stringstream again;
  write_pckpt(again, back);
  CHECK(again.str() == bytes);
}

TEST_CASE("PCKPT format errors") {
  std::stringstream bad("PCKX\x01\0\0\0\0\0\0\0");
  CHECK_THROWS_AS(read_pckpt(bad), Error);

  std::stringstream buf;
  write_pckpt(buf, {{"a", random_tensor({8}, 15), StorageDtype::kF64}});
  const std::string full = buf.str();
  std::stringstream truncated(full.substr(0, full.size() - 3));
  CHECK_THROWS_WITH_AS(read_pckpt(truncated), doctest::Contains("truncated"), Error);

  std::string wrong_version = full;
  wrong_version[4] = 2;
  std::stringstream v2(wrong_version);
  CHECK_THROWS_WITH_AS(read_pckpt(v2), doctest::Contains("version"), Error);
}

TEST_CASE("model checkpoints") {
  const auto dir = temp_dir("ckpt");
  PhantomModel a(byte_tiny(), 16);
  save_checkpoint(a, dir / "a.pckpt");
  PhantomModel b(byte_tiny(), 17);
  load_checkpoint(b, dir / "a.pckpt");
  for (const auto& e : a.params().entries()) CHECK(bitwise_equal(e.tensor, b.params().get(e.name)));
  const TokenBatch t = prompt({1, 2});
  CHECK(bitwise_equal(forward(a, t), forward(b, t)));

  save_checkpoint(a, dir / "a32.pckpt", StorageDtype::kF32);
  PhantomModel c(byte_tiny(), 18);
  load_checkpoint(c, dir / "a32.pckpt");
  const Tensor& w = a.params().get("embed.weight");
  const Tensor& w32 = c.params().get("embed.weight");
  for (std::size_t i = 0; i < w.numel(); ++i) CHECK(w32.data()[i] == static_cast<double>(static_cast<float>(w.data()[i])));

  write_pckpt_file(dir / "partial.pckpt", {{"embed.weight", w, StorageDtype::kF64}});
  CHECK_THROWS_WITH_AS(load_checkpoint(c, dir / "partial.pckpt"), doctest::Contains("lacks parameter"), Error);

  PhantomModel other(preset("tiny"), 1);
  CHECK_THROWS_WITH_AS(load_checkpoint(other, dir / "a.pckpt"), doctest::Contains("shape"), Error);
  CHECK_THROWS_AS(load_checkpoint(c, dir / "missing.pckpt"), Error);

  const Tensor feats = random_tensor({4, 16}, 19);
  save_features(dir / "f.pckpt", feats);
  CHECK(bitwise_equal(load_features(dir / "f.pckpt"), feats));
  CHECK_THROWS_AS(load_features(dir / "partial.pckpt"), Error);
  std::filesystem::remove_all(dir);
}
