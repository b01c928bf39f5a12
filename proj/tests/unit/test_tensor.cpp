#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mocha/errors.hpp"
#include "mocha/gradcheck.hpp"
#include "mocha/ops.hpp"
#include "grad_helpers.hpp"

using namespace mocha;
using namespace mocha::ag;

using namespace testing_support;

TEST(Tensor, ConstructorsAndAccessors) {
  Tensor t = Tensor::constant({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
  EXPECT_EQ(t.at(1, 2), 6.0);
  EXPECT_FALSE(t.requires_grad());
  EXPECT_THROW(Tensor::constant({2, 2}, {1, 2, 3}), ContractViolation);
  EXPECT_THROW(t.item(), ContractViolation);
  EXPECT_EQ(Tensor::scalar(2.5).item(), 2.5);
}

TEST(Tensor, LeafGradientsAccumulateUntilZeroed) {
  Tensor x = Tensor::parameter({2}, {1.0, 2.0});
  Tensor y = sum(mul(x, x));
  backward(y);
  backward(y);
  EXPECT_DOUBLE_EQ(x.grad()[0], 4.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 8.0);
  x.zero_grad();
  backward(y);
  EXPECT_DOUBLE_EQ(x.grad()[1], 4.0);
}

TEST(Tensor, NoGradGuardStopsRecording) {
  Tensor x = Tensor::parameter({1}, {3.0});
  {
    NoGradGuard g;
    Tensor y = mul(x, x);
    EXPECT_FALSE(y.requires_grad());
    EXPECT_FALSE(grad_enabled());
  }
  EXPECT_TRUE(grad_enabled());
  EXPECT_TRUE(mul(x, x).requires_grad());
}

TEST(Tensor, SharedSubgraphGetsSummedGradient) {
  Tensor x = Tensor::parameter({1}, {0.5});
  Tensor s = sigmoid(x);
  Tensor y = add(mul(s, s), s);
  backward(sum(y));
  const double sv = 1.0 / (1.0 + std::exp(-0.5));
  EXPECT_NEAR(x.grad()[0], (2 * sv + 1) * sv * (1 - sv), 1e-15);
}

TEST(Ops, ElementwiseGradients) {
  std::mt19937_64 rng(1);
  Tensor a = random_param(rng, {5}), b = random_param(rng, {5}, 0.5, 2.0);
  expect_grad_ok([&] { return probe(add(a, b)); }, {{"a", a}, {"b", b}});
  expect_grad_ok([&] { return probe(sub(a, b)); }, {{"a", a}, {"b", b}});
  expect_grad_ok([&] { return probe(mul(a, b)); }, {{"a", a}, {"b", b}});
  expect_grad_ok([&] { return probe(div(a, b)); }, {{"a", a}, {"b", b}});
  expect_grad_ok([&] { return probe(sigmoid(a)); }, {{"a", a}});
  expect_grad_ok([&] { return probe(tanh(a)); }, {{"a", a}});
  expect_grad_ok([&] { return probe(exp(a)); }, {{"a", a}});
  expect_grad_ok([&] { return probe(log(b)); }, {{"b", b}});
  expect_grad_ok([&] { return probe(relu(a)); }, {{"a", a}});
  expect_grad_ok([&] { return probe(abs(a)); }, {{"a", a}});
  expect_grad_ok([&] { return probe(clamp(a, -0.3, 0.4)); }, {{"a", a}});
  expect_grad_ok([&] { return probe(normalize(a)); }, {{"a", a}});
  expect_grad_ok([&] { return l2_norm(a); }, {{"a", a}});
  expect_grad_ok([&] { return dot(a, b); }, {{"a", a}, {"b", b}});
  Tensor s = random_param(rng, {1});
  expect_grad_ok([&] { return probe(add_scalar(mul_scalar(a, s), s)); }, {{"a", a}, {"s", s}});
}

TEST(Ops, SubgradientsAtZeroAreZero) {
  Tensor x = Tensor::parameter({2}, {0.0, 0.0});
  backward(sum(add(abs(x), relu(x))));
  EXPECT_EQ(x.grad()[0], 0.0);
  EXPECT_EQ(x.grad()[1], 0.0);
}

TEST(Ops, ShapeGradients) {
  std::mt19937_64 rng(2);
  Tensor a = random_param(rng, {3}), b = random_param(rng, {2});
  Tensor m = random_param(rng, {3, 4}), n = random_param(rng, {3, 2});
  expect_grad_ok([&] { return probe(concat({a, b, a})); }, {{"a", a}, {"b", b}});
  expect_grad_ok([&] { return probe(stack_rows({a, a})); }, {{"a", a}});
  expect_grad_ok([&] { return probe(concat_cols(m, n)); }, {{"m", m}, {"n", n}});
  expect_grad_ok([&] { return probe(row(m, 1)); }, {{"m", m}});
  expect_grad_ok([&] { return probe(slice(a, 1, 2)); }, {{"a", a}});
  std::vector<double> keep{1.0, 0.0, 1.0};
  expect_grad_ok([&] { return probe(mask(a, keep)); }, {{"a", a}});
}

TEST(Ops, LinearAlgebraGradients) {
  std::mt19937_64 rng(3);
  Tensor w = random_param(rng, {4, 3}), x = random_param(rng, {3}), bias = random_param(rng, {4});
  Tensor xs = random_param(rng, {5, 3}), v = random_param(rng, {4});
  Tensor rows = random_param(rng, {5, 4});
  expect_grad_ok([&] { return probe(matvec(w, x)); }, {{"w", w}, {"x", x}});
  expect_grad_ok([&] { return probe(vecmat(v, w)); }, {{"v", v}, {"w", w}});
  expect_grad_ok([&] { return probe(linear(xs, w, bias)); }, {{"xs", xs}, {"w", w}, {"b", bias}});
  expect_grad_ok([&] { return probe(linear(xs, w)); }, {{"xs", xs}, {"w", w}});
  expect_grad_ok([&] { return probe(linear_vec(x, w, bias)); }, {{"x", x}, {"w", w}, {"b", bias}});
  expect_grad_ok([&] { return probe(add_row(rows, v)); }, {{"rows", rows}, {"v", v}});
  expect_grad_ok([&] { return probe(softmax(v)); }, {{"v", v}});
  expect_grad_ok([&] { return probe(log_softmax(rows)); }, {{"rows", rows}});
}

TEST(Ops, ScanGradients) {
  std::mt19937_64 rng(4);
  Tensor x = random_param(rng, {6}, 0.1, 0.9), d = random_param(rng, {6}, 0.1, 0.9);
  expect_grad_ok([&] { return probe(cumsum(x)); }, {{"x", x}});
  expect_grad_ok([&] { return probe(cumprod_exclusive(x)); }, {{"x", x}});
  expect_grad_ok([&] { return probe(moving_sum(x, 3)); }, {{"x", x}});
  expect_grad_ok([&] { return probe(moving_sum_trailing(x, 3)); }, {{"x", x}});
  expect_grad_ok([&] { return probe(linear_scan(d, x)); }, {{"d", d}, {"x", x}});
}

TEST(Ops, CumprodGradientSurvivesZeros) {
  Tensor x = Tensor::parameter({4}, {0.5, 0.0, 2.0, 3.0});
  backward(sum(cumprod_exclusive(x)));
  // out = [1, .5, 0, 0]; d out2/dx1 = .5, d out3/dx1 = .5*2
  EXPECT_DOUBLE_EQ(x.grad()[1], 0.5 + 1.0);
  EXPECT_DOUBLE_EQ(x.grad()[0], 1.0);
  EXPECT_TRUE(std::isfinite(x.grad()[2]));
}

TEST(Ops, ScanValues) {
  Tensor x = Tensor::vector({1, 2, 3, 4});
  EXPECT_EQ(cumsum(x).values(), (std::vector<double>{1, 3, 6, 10}));
  EXPECT_EQ(cumprod_exclusive(x).values(), (std::vector<double>{1, 1, 2, 6}));
  EXPECT_EQ(moving_sum(x, 2).values(), (std::vector<double>{3, 5, 7, 4}));
  EXPECT_EQ(moving_sum_trailing(x, 2).values(), (std::vector<double>{1, 3, 5, 7}));
  EXPECT_EQ(linear_scan(Tensor::vector({0, 0.5, 0.5, 0.5}), x).values(),
            (std::vector<double>{1, 2.5, 4.25, 6.125}));
}

TEST(Ops, FusedGradients) {
  std::mt19937_64 rng(5);
  const std::size_t h = 3;
  Tensor gx = random_param(rng, {3 * h}), hv = random_param(rng, {h});
  Tensor whh = random_param(rng, {3 * h, h}), bhh = random_param(rng, {3 * h});
  expect_grad_ok([&] { return probe(gru_cell(gx, hv, whh, bhh)); },
                 {{"gx", gx}, {"h", hv}, {"w_hh", whh}, {"b_hh", bhh}});
  Tensor g = random_param(rng, {4}, 0.5, 1.5), b = random_param(rng, {4}), x = random_param(rng, {4});
  expect_grad_ok([&] { return probe(layer_norm(x, g, b)); }, {{"x", x}, {"g", g}, {"b", b}});
  Tensor frames = random_param(rng, {6, 2}), k = random_param(rng, {3, 3, 2});
  expect_grad_ok([&] { return probe(conv1d_same(frames, k)); }, {{"x", frames}, {"k", k}});
}

TEST(Ops, LabelSmoothedCeGradientAndMask) {
  std::mt19937_64 rng(6);
  Tensor logits = random_param(rng, {3, 5});
  std::vector<int> targets{2, 0, 4};
  std::vector<double> weight{1.0, 0.0, 1.0};
  expect_grad_ok([&] { return label_smoothed_ce(logits, targets, 0.2, weight); },
                 {{"logits", logits}});
  std::vector<double> none(3, 0.0);
  EXPECT_EQ(label_smoothed_ce(logits, targets, 0.2, none).item(), 0.0);
}

TEST(Ops, DropoutIsInvertedAndSeeded) {
  Tensor x = Tensor::constant({1000}, std::vector<double>(1000, 1.0));
  std::mt19937_64 r1(9), r2(9);
  Tensor a = dropout(x, 0.25, r1), b = dropout(x, 0.25, r2);
  EXPECT_EQ(a.values(), b.values());
  double s = 0.0;
  for (double v : a.values()) {
    EXPECT_TRUE(v == 0.0 || std::abs(v - 1.0 / 0.75) < 1e-15);
    s += v;
  }
  EXPECT_NEAR(s / 1000.0, 1.0, 0.1);
}

TEST(Ops, ShapeErrorsAreContractViolations) {
  Tensor a = Tensor::vector({1, 2}), b = Tensor::vector({1, 2, 3});
  EXPECT_THROW(add(a, b), ContractViolation);
  EXPECT_THROW(matvec(Tensor::constant({2, 2}, {1, 2, 3, 4}), b), ContractViolation);
  EXPECT_THROW(normalize(Tensor::vector({0, 0})), ContractViolation);
}

TEST(GradCheck, DetectsAWrongGradient) {
  Tensor x = Tensor::parameter({2}, {0.3, -0.2});
  // A constant detached factor makes backward disagree with the numeric slope.
  auto f = [&] { return sum(mul(x, Tensor::constant({2}, {x.at(0), x.at(1)}))); };
  auto rep = finite_difference_check(f, {{"x", x}}, 1e-5, 1e-4);
  EXPECT_FALSE(rep.passed);
  EXPECT_EQ(rep.worst_param, "x");
}
