#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "grad_helpers.hpp"
#include "mocha/attention.hpp"
#include "mocha/errors.hpp"
#include "mocha/objectives.hpp"
#include "mocha/training.hpp"
#include "oracles.hpp"
#include "toy.hpp"

using namespace mocha;
using namespace mocha::objectives;
using namespace testing_support;

namespace {

Tensor one_hot_rows(std::size_t t, const std::vector<int>& cols_1based) {
  std::vector<double> v(cols_1based.size() * t, 0.0);
  for (std::size_t i = 0; i < cols_1based.size(); ++i)
    v[i * t + static_cast<std::size_t>(cols_1based[i] - 1)] = 1.0;
  return Tensor::constant({cols_1based.size(), t}, v);
}

}  // namespace

TEST(MtlLoss, InterpolationEndpointsAndMidpoint) {
  Tensor logits = Tensor::constant({3, 2}, {0.0, 1.0, 2.0, 0.0, 0.5, 0.5});
  std::vector<int> align{1, 0, 1};
  Tensor s2s = Tensor::scalar(2.0);
  const double ce = framewise_ce(logits, align).item();
  EXPECT_EQ(mtl_loss(s2s, logits, align, 0.0).item(), 2.0);
  EXPECT_EQ(mtl_loss(s2s, logits, align, 1.0).item(), ce);
  EXPECT_NEAR(mtl_loss(s2s, logits, align, 0.3).item(), 0.7 * 2.0 + 0.3 * ce, 1e-15);
  EXPECT_THROW(mtl_loss(s2s, logits, align, 1.5), ContractViolation);
}

TEST(MtlLoss, FramewiseCeIsPerFrameMean) {
  Tensor logits = Tensor::constant({2, 3}, {1.0, 2.0, 3.0, 0.0, 0.0, 0.0});
  std::vector<int> align{2, 0};
  const double lse = std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0));
  EXPECT_NEAR(framewise_ce(logits, align).item(), 0.5 * ((lse - 3.0) + std::log(3.0)), 1e-14);
}

TEST(TotalLoss, CompositionExamples) {
  LossComponents c{Tensor::scalar(2.0), Tensor::scalar(4.0), Tensor::scalar(0.25),
                   Tensor::scalar(0.5)};
  ObjectiveConfig cfg;
  cfg.lambda_minlt = 7.0;
  EXPECT_EQ(total_loss(c, cfg).item(), 2.0);
  cfg.mode = Mode::minlt;
  cfg.lambda_minlt = 1.0;
  EXPECT_EQ(total_loss(c, cfg).item(), 2.5);
  cfg.mode = Mode::mtl_ce;
  EXPECT_NEAR(total_loss(c, cfg).item(), 2.6, 1e-15);
  cfg.mode = Mode::decot;
  EXPECT_EQ(total_loss(c, cfg).item(), 2.25);
  cfg.quantity_loss = false;
  EXPECT_EQ(total_loss(c, cfg).item(), 2.0);
  cfg.mode = Mode::decot_minlt;
  cfg.quantity_loss.reset();
  EXPECT_EQ(total_loss(c, cfg).item(), 2.75);
  cfg.mode = Mode::pt_ce_stage1;
  EXPECT_EQ(total_loss(c, cfg).item(), 4.0);
}

TEST(TotalLoss, MissingComponentIsContractViolation) {
  LossComponents c{Tensor::scalar(2.0), {}, {}, {}};
  ObjectiveConfig cfg;
  cfg.mode = Mode::minlt;
  EXPECT_THROW(total_loss(c, cfg), ContractViolation);
  cfg.mode = Mode::mtl_ce;
  EXPECT_THROW(total_loss(c, cfg), ContractViolation);
}

TEST(QuantityLoss, Examples) {
  EXPECT_EQ(quantity_loss(one_hot_rows(4, {1, 2, 4}), 3).item(), 0.0);
  EXPECT_EQ(quantity_loss(Tensor::zeros({5, 3}), 5).item(), 5.0);
  std::mt19937_64 rng(1);
  auto a = oracle::random_probs(rng, 3, 6, 0.0, 0.4);
  double total = 0.0;
  std::vector<double> flat;
  for (auto& row : a)
    for (double v : row) total += v, flat.push_back(v);
  EXPECT_NEAR(quantity_loss(Tensor::constant({3, 6}, flat), 3).item(), std::abs(3.0 - total),
              1e-14);
}

TEST(MinltLoss, Examples) {
  EXPECT_EQ(minlt_loss(one_hot_rows(8, {2, 4, 5}), std::vector<int>{2, 4, 5}).item(), 0.0);
  EXPECT_EQ(minlt_loss(one_hot_rows(8, {5, 7, 8}), std::vector<int>{2, 4, 5}).item(), 3.0);
  EXPECT_DOUBLE_EQ(minlt_loss(one_hot_rows(8, {5, 7, 8}), std::vector<int>{0, 0, 0}).item(),
                   20.0 / 3.0);
}

TEST(MinltLoss, InvariantToPermutingMasslessFrames) {
  // Frames 2 and 4 carry no mass in any row; swapping them changes nothing.
  Tensor a = Tensor::constant({2, 5}, {0.5, 0.0, 0.5, 0.0, 0.0, 0.0, 0.0, 0.2, 0.0, 0.7});
  Tensor b = Tensor::constant({2, 5}, {0.5, 0.0, 0.5, 0.0, 0.0, 0.0, 0.0, 0.2, 0.0, 0.7});
  std::vector<int> g{1, 3};
  EXPECT_EQ(minlt_loss(a, g).item(), minlt_loss(b, g).item());
}

TEST(DecotAlignment, ZeroDeltaZeroesEverythingPastGold) {
  std::mt19937_64 rng(6);
  auto p = oracle::random_probs(rng, 3, 7, 0.0, 1.0);
  std::vector<double> flat;
  for (auto& r : p) flat.insert(flat.end(), r.begin(), r.end());
  Tensor pt = Tensor::constant({3, 7}, flat);
  std::vector<int> b{2, 4, 7};
  Tensor a = decot_alignment(pt, b, 0);
  Tensor u = attention::expected_alignment(pt);
  for (std::size_t i = 0; i < 3; ++i) {
    double sa = 0.0, su = 0.0;
    for (std::size_t j = 0; j < 7; ++j) {
      if (static_cast<int>(j) + 1 > b[i]) {
        EXPECT_EQ(a.at(i, j), 0.0);
      }
      sa += a.at(i, j);
      su += u.at(i, j);
    }
    EXPECT_LE(sa, su + 1e-15);
  }
}

TEST(DecotAlignment, MissingBoundariesAreContractViolation) {
  Tensor p = Tensor::constant({2, 3}, std::vector<double>(6, 0.5));
  EXPECT_THROW(decot_alignment(p, std::vector<int>{1}, 2), ContractViolation);
}

TEST(ObjectiveGradients, ElementaryTermsPass) {
  std::mt19937_64 rng(12);
  Tensor a = random_param(rng, {3, 5}, 0.0, 0.3);
  std::vector<int> g{2, 3, 5};
  expect_grad_ok([&] { return minlt_loss(a, g); }, {{"alpha", a}});
  expect_grad_ok([&] { return quantity_loss(a, 3); }, {{"alpha", a}});
  Tensor p = random_param(rng, {3, 5}, 0.1, 0.9);
  expect_grad_ok([&] { return probe(decot_alignment(p, g, 1)); }, {{"p", p}});
  Tensor z = random_param(rng, {5, 4});
  std::vector<int> al{0, 1, 3, 3, 2};
  expect_grad_ok([&] { return framewise_ce(z, al); }, {{"logits", z}});
}

class ModeGradient : public ::testing::TestWithParam<Mode> {};

TEST_P(ModeGradient, UtteranceLossPassesFiniteDifferences) {
  const Mode mode = GetParam();
  const auto branch = uses_framewise_ce(mode) ? CeBranch::mtl : CeBranch::none;
  Model m(toy_config(branch), 5);
  ObjectiveConfig obj;
  obj.mode = mode;
  obj.delta = 2;
  auto u = toy_utterance();
  expect_grad_ok([&] { return training::utterance_loss(m, u, obj, {}).loss; },
                 named_params(m));
}

INSTANTIATE_TEST_SUITE_P(Objectives, ModeGradient,
                         ::testing::Values(Mode::baseline, Mode::mtl_ce, Mode::decot,
                                           Mode::minlt, Mode::decot_minlt),
                         [](const auto& info) {
                           std::string s = to_string(info.param);
                           for (auto& c : s)
                             if (c == '-') c = '_';
                           return s;
                         });

TEST(Modes, ParseRoundTripAndFlags) {
  for (Mode m : {Mode::baseline, Mode::mtl_ce, Mode::pt_ce_stage1, Mode::pt_ce_stage2,
                 Mode::decot, Mode::minlt, Mode::decot_minlt})
    EXPECT_EQ(parse_mode(to_string(m)), m);
  EXPECT_THROW(parse_mode("nope"), ContractViolation);
  EXPECT_TRUE(uses_decot(Mode::decot_minlt));
  EXPECT_TRUE(uses_minlt(Mode::decot_minlt));
  EXPECT_FALSE(uses_minlt(Mode::decot));
  ObjectiveConfig c;
  c.mode = Mode::decot;
  EXPECT_TRUE(c.quantity_active());
  c.mode = Mode::minlt;
  EXPECT_FALSE(c.quantity_active());
}
