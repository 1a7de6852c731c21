// Copyright 2026 The Phantom Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <numbers>
#include <string>

#include "doctest.h"
#include "phantom/tensor.hpp"
#include "test_util.hpp"

using namespace phantom;
using phantom::testing::bitwise_equal;
using phantom::testing::max_abs_diff;
using phantom::testing::random_tensor;
using phantom::testing::values;

namespace {

GradcheckReport check(const std::function<Tensor()>& f, std::vector<Tensor> inputs) {
  return gradcheck(f, inputs);
}

}  // namespace

TEST_CASE("matmul hand cases") {
  const Tensor eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
  const Tensor b = Tensor::from_data({2, 2}, {2, 3, 4, 5});
  CHECK(values(matmul(eye, b)) == std::vector<double>{2, 3, 4, 5});

  const Tensor row = Tensor::from_data({1, 2}, {1, 2});
  const Tensor col = Tensor::from_data({2, 1}, {3, 4});
  const Tensor r = matmul(row, col);
  CHECK(r.shape() == Shape{1, 1});
  CHECK(r.item() == 11.0);
}

TEST_CASE("matmul broadcasts leading dimensions") {
  const Tensor a = random_tensor({2, 3, 4}, 1);
  const Tensor b = random_tensor({4, 5}, 2);
  const Tensor c = matmul(a, b);
  REQUIRE(c.shape() == Shape{2, 3, 5});
  for (std::size_t i = 0; i < 2; ++i) {
    const Tensor ai = reshape(slice(a, 0, i, 1), {3, 4});
    CHECK(bitwise_equal(reshape(slice(c, 0, i, 1), {3, 5}), matmul(ai, b)));
  }
}

TEST_CASE("matmul shape mismatch names both shapes") {
  const Tensor a = Tensor::zeros({3, 4});
  const Tensor b = Tensor::zeros({5, 2});
  try {
    matmul(a, b);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kDimension);
    const std::string msg = e.what();
    CHECK(msg.find("(3,4)") != std::string::npos);
    CHECK(msg.find("(5,2)") != std::string::npos);
  }
}

TEST_CASE("matmul gradients match finite differences") {
  const Tensor a = random_tensor({3, 4}, 3);
  const Tensor b = random_tensor({4, 2}, 4);
  const Tensor w = random_tensor({3, 2}, 5);
  const auto rep = check([&] { return sum(mul(matmul(a, b), w)); }, {a, b});
  CHECK(rep.max_rel_error < 1e-6);
  CHECK(rep.coords_checked == 20);
}

TEST_CASE("softmax basics") {
  const Tensor p = softmax_lastdim(Tensor::zeros({3}));
  for (double v : p.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  const Tensor x = random_tensor({4, 7}, 6);
  const Tensor shifted = add_scalar(x, 123.25);
  CHECK(max_abs_diff(softmax_lastdim(x), softmax_lastdim(shifted)) < 1e-12);

  const Tensor mask = Tensor::from_data({1, 3}, {kMaskValue, 0.0, kMaskValue});
  const Tensor one = softmax_lastdim(random_tensor({2, 3}, 7), mask);
  CHECK(values(one) == std::vector<double>{0, 1, 0, 0, 1, 0});
}

TEST_CASE("softmax rejects fully masked rows") {
  const Tensor mask = Tensor::full({1, 3}, kMaskValue);
  CHECK_THROWS_WITH_AS(softmax_lastdim(Tensor::zeros({2, 3}), mask), doctest::Contains("fully masked attention row"), Error);
}

TEST_CASE("softmax rows are probability vectors and gradient rows sum to zero") {
  const Tensor x = random_tensor({3, 5}, 8);
  x.impl_ptr()->requires_grad = true;
  const Tensor w = random_tensor({3, 5}, 9);
  Tape::active().reset();
  const Tensor p = softmax_lastdim(x);
  for (std::size_t r = 0; r < 3; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 5; ++c) {
      CHECK(p.data()[r * 5 + c] >= 0.0);
      s += p.data()[r * 5 + c];
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-14));
  }
  backward(sum(mul(p, w)));
  Tape::active().reset();
  for (std::size_t r = 0; r < 3; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 5; ++c) s += x.grad()[r * 5 + c];
    CHECK(std::abs(s) < 1e-14);
  }
}

TEST_CASE("elementwise golden values") {
  CHECK(gelu(Tensor::scalar(0.0)).item() == 0.0);
  CHECK(gelu(Tensor::scalar(1.0)).item() == doctest::Approx(0.8413447460685429).epsilon(1e-14));
  CHECK(gelu(Tensor::scalar(-1.0)).item() == doctest::Approx(-0.15865525393145707).epsilon(1e-14));
  CHECK(log_sigmoid(Tensor::scalar(0.0)).item() == doctest::Approx(-std::numbers::ln2).epsilon(1e-15));
  CHECK(sigmoid(Tensor::scalar(-0.5)).item() == doctest::Approx(0.377541).epsilon(1e-6));
  CHECK(sigmoid(Tensor::scalar(-0.5)).item() == doctest::Approx(0.3775406687981454).epsilon(1e-15));
  // Stable far into the tails.
  CHECK(log_sigmoid(Tensor::scalar(-800.0)).item() == doctest::Approx(-800.0));
  CHECK(log_sigmoid(Tensor::scalar(800.0)).item() == 0.0);
}

TEST_CASE("broadcasting") {
  const Tensor a = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  const Tensor w = Tensor::from_data({2, 1}, {10, 100});
  CHECK(values(mul(a, w)) == std::vector<double>{10, 20, 30, 400, 500, 600});
  const Tensor row = Tensor::from_data({3}, {1, 1, 1});
  CHECK(values(add(a, row)) == std::vector<double>{2, 3, 4, 5, 6, 7});
  CHECK(add(Tensor::zeros({1, 0, 3}), row).shape() == Shape{1, 0, 3});
  CHECK_THROWS_AS(add(a, Tensor::zeros({2})), Error);
  CHECK_THROWS_AS(mul(Tensor::zeros({2, 3}), Tensor::zeros({3, 2})), Error);
}

TEST_CASE("concat and split") {
  const Tensor a = Tensor::from_data({2}, {1, 2});
  const Tensor b = Tensor::from_data({2}, {3, 4});
  const Tensor c = concat_lastdim(a, b);
  CHECK(values(c) == std::vector<double>{1, 2, 3, 4});
  auto [x, y] = split_lastdim_half(c);
  CHECK(bitwise_equal(x, a));
  CHECK(bitwise_equal(y, b));

  const Tensor big = concat_lastdim(random_tensor({2, 3, 64}, 10), random_tensor({2, 3, 64}, 11));
  CHECK(big.shape() == Shape{2, 3, 128});
  CHECK_THROWS_AS(split_lastdim_half(Tensor::zeros({2, 3})), Error);
  CHECK_THROWS_AS(concat_lastdim(Tensor::zeros({2, 3}), Tensor::zeros({3, 3})), Error);
}

TEST_CASE("split gradient routes to the matching half") {
  const Tensor x = random_tensor({2, 6}, 12);
  x.impl_ptr()->requires_grad = true;
  Tape::active().reset();
  backward(sum(split_lastdim_half(x).first));
  Tape::active().reset();
  for (std::size_t r = 0; r < 2; ++r) {
    for (std::size_t c = 0; c < 6; ++c) CHECK(x.grad()[r * 6 + c] == (c < 3 ? 1.0 : 0.0));
  }
}

TEST_CASE("rms_norm") {
  const Tensor ones = Tensor::full({4}, 1.0);
  const Tensor pos = rms_norm(Tensor::full({4}, 2.5), ones, 1e-300);
  const Tensor neg_out = rms_norm(Tensor::full({4}, -0.75), ones, 1e-300);
  for (double v : pos.data()) CHECK(v == doctest::Approx(1.0).epsilon(1e-15));
  for (double v : neg_out.data()) CHECK(v == doctest::Approx(-1.0).epsilon(1e-15));

  CHECK(values(rms_norm(Tensor::zeros({5}), Tensor::full({5}, 1.0))) == std::vector<double>(5, 0.0));

  const Tensor r = rms_norm(random_tensor({64}, 13, 3.0), Tensor::full({64}, 1.0));
  double sq = 0.0;
  for (double v : r.data()) sq += v * v;
  CHECK(std::sqrt(sq / 64.0) == doctest::Approx(1.0).epsilon(1e-3));
  CHECK_THROWS_AS(rms_norm(Tensor::zeros({2, 4}), Tensor::zeros({3})), Error);
}

TEST_CASE("cross_entropy") {
  const std::vector<std::int32_t> targets = {3, 7};
  const Tensor uniform = cross_entropy(Tensor::zeros({1, 2, 16}), targets, Tensor::full({1, 2}, 1.0));
  CHECK(uniform.item() == doctest::Approx(std::log(16.0)).epsilon(1e-15));
  CHECK(uniform.item() == doctest::Approx(2.7726).epsilon(1e-4));

  double previous = INFINITY;
  for (double margin : {0.0, 1.0, 5.0, 20.0, 60.0}) {
    std::vector<double> logits(2 * 16, 0.0);
    logits[3] = margin;
    logits[16 + 7] = margin;
    const double loss = cross_entropy(Tensor::from_data({1, 2, 16}, logits), targets, Tensor::full({1, 2}, 1.0)).item();
    CHECK(loss < previous);
    previous = loss;
  }
  CHECK(previous < 1e-20);
  CHECK_THROWS_AS(cross_entropy(Tensor::zeros({1, 2, 16}), targets, Tensor::zeros({1, 2})), Error);
}

TEST_CASE("cross_entropy with a half mask equals the kept half alone") {
  const Tensor logits = random_tensor({1, 4, 9}, 14);
  const std::vector<std::int32_t> targets = {1, 5, 0, 8};
  const Tensor mask = Tensor::from_data({1, 4}, {1, 0, 1, 0});
  const double masked = cross_entropy(logits, targets, mask).item();
  const std::vector<std::size_t> keep = {0, 2};
  const Tensor kept = index_select(logits, 1, keep);
  const std::vector<std::int32_t> kept_targets = {1, 0};
  const double sliced = cross_entropy(kept, kept_targets, Tensor::full({1, 2}, 1.0)).item();
  CHECK(std::abs(masked - sliced) < 1e-14);
}

TEST_CASE("backward basics") {
  const Tensor x = Tensor::scalar(2.0, true);
  const Tensor y = Tensor::scalar(3.0, true);
  Tape::active().reset();
  const Tensor z = mul(x, y);
  backward(z);
  CHECK(x.grad()[0] == 3.0);
  CHECK(y.grad()[0] == 2.0);
  CHECK_THROWS_WITH_AS(backward(z), doctest::Contains("twice"), Error);
  Tape::active().reset();

  const Tensor v = Tensor::from_data({2}, {1, 2}, true);
  const Tensor not_scalar = scale(v, 2.0);
  CHECK_THROWS_AS(backward(not_scalar), Error);
  Tape::active().reset();
}

TEST_CASE("gradients accumulate until zero_grad and the tape is linear") {
  Tensor a = random_tensor({5}, 15);
  a.impl_ptr()->requires_grad = true;
  auto f1 = [&] { return sum(exp(a)); };
  auto f2 = [&] { return sum(mul(a, a)); };

  Tape::active().reset();
  backward(add(f1(), f2()));
  Tape::active().reset();
  const auto joint = values(Tensor::from_data({5}, std::vector<double>(a.grad().begin(), a.grad().end())));
  a.zero_grad();
  backward(f1());
  Tape::active().reset();
  backward(f2());
  Tape::active().reset();
  for (std::size_t i = 0; i < 5; ++i) CHECK(a.grad()[i] == doctest::Approx(joint[i]).epsilon(1e-15));
  a.zero_grad();
  CHECK_FALSE(a.has_grad());
}

TEST_CASE("no-grad guard records nothing") {
  const Tensor a = Tensor::from_data({3}, {1, 2, 3}, true);
  Tape::active().reset();
  {
    NoGradGuard guard;
    CHECK_FALSE(grad_enabled());
    const Tensor b = mul(a, a);
    CHECK_FALSE(b.requires_grad());
  }
  CHECK(grad_enabled());
  CHECK(Tape::active().size() == 0);
}

TEST_CASE("gradcheck on a quadratic") {
  const Tensor x = Tensor::scalar(3.0);
  const auto rep = check([&] { return mul(x, x); }, {x});
  CHECK(rep.max_rel_error < 1e-8);
  CHECK_FALSE(x.requires_grad());
}

TEST_CASE("every differentiable op passes gradcheck") {
  const Tensor a = random_tensor({2, 3, 4}, 20);
  const Tensor b = random_tensor({2, 3, 4}, 21);
  const Tensor row = random_tensor({4}, 22);
  const Tensor col = random_tensor({2, 3, 1}, 23);
  const Tensor pos = add_scalar(scale(exp(random_tensor({2, 3, 4}, 24)), 0.5), 0.5);
  const Tensor w = random_tensor({2, 3, 4}, 25);
  auto weighted = [&](const Tensor& t) { return sum(mul(t, w)); };
  const std::size_t perm[] = {2, 0, 1};
  const std::size_t picks[] = {2, 0, 2};

  struct Case {
    const char* name;
    std::function<Tensor()> f;
    std::vector<Tensor> inputs;
  };
  const std::vector<Case> cases = {
      {"add", [&] { return weighted(add(a, row)); }, {a, row}},
      {"sub", [&] { return weighted(sub(a, col)); }, {a, col}},
      {"mul", [&] { return weighted(mul(a, b)); }, {a, b}},
      {"div", [&] { return weighted(div(a, pos)); }, {a, pos}},
      {"scale", [&] { return weighted(scale(a, -1.5)); }, {a}},
      {"exp", [&] { return weighted(exp(a)); }, {a}},
      {"log", [&] { return weighted(log(pos)); }, {pos}},
      {"gelu", [&] { return weighted(gelu(a)); }, {a}},
      {"sigmoid", [&] { return weighted(sigmoid(a)); }, {a}},
      {"log_sigmoid", [&] { return weighted(log_sigmoid(a)); }, {a}},
      {"softmax", [&] { return weighted(softmax_lastdim(a, Tensor::from_data({4}, {0, kMaskValue, 0, 0}))); }, {a}},
      {"rms_norm", [&] { return weighted(rms_norm(a, row)); }, {a, row}},
      {"permute", [&] { return sum(mul(permute(a, perm), permute(w, perm))); }, {a}},
      {"transpose", [&] { return sum(mul(transpose_last2(a), transpose_last2(w))); }, {a}},
      {"concat", [&] { return sum(mul(concat(a, b, 1), concat(w, w, 1))); }, {a, b}},
      {"slice", [&] { return sum(mul(slice(a, 2, 1, 2), slice(w, 2, 0, 2))); }, {a}},
      {"index_select", [&] { return sum(mul(index_select(a, 2, picks), slice(w, 2, 0, 3))); }, {a}},
      {"repeat_interleave", [&] { return sum(mul(repeat_interleave(a, 1, 2), concat(w, w, 1))); }, {a}},
      {"sum_lastdim", [&] { return sum(mul(sum_lastdim(a), sum_lastdim(w))); }, {a}},
      {"mean", [&] { return mean(mul(a, a)); }, {a}},
  };
  for (const auto& c : cases) {
    CAPTURE(c.name);
    CHECK(check(c.f, c.inputs).max_rel_error < 1e-7);
  }
}

TEST_CASE("gather ops pass gradcheck") {
  const Tensor table = random_tensor({6, 3}, 30);
  const std::vector<std::int32_t> ids = {5, 0, 5, 2};
  const Tensor w = random_tensor({2, 2, 3}, 31);
  CHECK(check([&] { return sum(mul(embedding(table, ids, {2, 2}), w)); }, {table}).max_rel_error < 1e-8);

  const Tensor base = random_tensor({4, 3}, 32);
  const Tensor source = random_tensor({2, 3}, 33);
  const std::size_t rows[] = {1, 3};
  const Tensor w2 = random_tensor({4, 3}, 34);
  CHECK(check([&] { return sum(mul(splice_rows(base, source, rows), w2)); }, {base, source}).max_rel_error < 1e-8);

  const Tensor logits = random_tensor({2, 3, 5}, 35);
  const std::vector<std::int32_t> targets = {0, 4, 2, 1, 1, 3};
  const Tensor mask = Tensor::from_data({2, 3}, {1, 1, 0, 0, 1, 1});
  CHECK(check([&] { return sum(token_logprobs(logits, targets)); }, {logits}).max_rel_error < 1e-7);
  CHECK(check([&] { return cross_entropy(logits, targets, mask); }, {logits}).max_rel_error < 1e-7);
}

TEST_CASE("gradcheck sampling and flag restoration") {
  const Tensor a = random_tensor({10, 10}, 40);
  GradcheckOptions opts;
  opts.max_coords_per_input = 7;
  opts.seed = 3;
  const std::vector<Tensor> inputs = {a};
  const auto rep = gradcheck([&] { return sum(mul(a, a)); }, inputs, opts);
  CHECK(rep.coords_checked == 7);
  CHECK(rep.max_rel_error < 1e-8);
  CHECK_FALSE(a.requires_grad());
  CHECK_FALSE(a.has_grad());
}

TEST_CASE("tensor construction errors") {
  CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1, 2, 3}), Error);
  CHECK_THROWS_AS(reshape(Tensor::zeros({2, 3}), {4, 2}), Error);
  CHECK(Tensor::zeros({2, 3}).numel() == 6);
}
