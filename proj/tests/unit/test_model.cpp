#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mocha/errors.hpp"
#include "mocha/model.hpp"
#include "oracles.hpp"

using namespace mocha;

namespace {

ModelConfig tiny(CeBranch branch = CeBranch::none) {
  ModelConfig c;
  c.encoder.layers = 2;
  c.encoder.hidden = 6;
  c.encoder.feature_dim = 3;
  c.encoder.ce_branch = branch;
  c.encoder.align_classes = branch == CeBranch::none ? 0 : 4;
  c.decoder.hidden = 5;
  c.decoder.embed_dim = 4;
  c.decoder.vocab = 7;
  c.attention.attn_dim = 4;
  c.attention.chunk_width = 2;
  return c;
}

Tensor random_frames(std::mt19937_64& rng, std::size_t t, std::size_t f) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(t * f);
  for (auto& x : v) x = n(rng);
  return Tensor::constant({t, f}, v);
}

std::vector<double> vals(const Tensor& t) { return t.values(); }

}  // namespace

TEST(GruStep, ZeroWeightsGiveZeroState) {
  GruParams p{Tensor::zeros({6, 3}), Tensor::zeros({6}), Tensor::zeros({6, 2}),
              Tensor::zeros({6}), {}, {}};
  Tensor h = gru_step(Tensor::vector({1, -2, 3}), Tensor::zeros({2}), p);
  EXPECT_EQ(h.values(), (std::vector<double>{0.0, 0.0}));
}

TEST(GruStep, SaturatedUpdateGateKeepsState) {
  std::vector<double> b_ih(6, 0.0);
  b_ih[2] = b_ih[3] = 1e3;  // update gate rows
  GruParams p{Tensor::constant({6, 3}, std::vector<double>(18, 0.3)), Tensor::vector(b_ih),
              Tensor::constant({6, 2}, std::vector<double>(12, -0.2)), Tensor::zeros({6}),
              {}, {}};
  Tensor h = gru_step(Tensor::vector({1, 2, 3}), Tensor::vector({0.25, -0.75}), p);
  EXPECT_EQ(h.values(), (std::vector<double>{0.25, -0.75}));
}

TEST(GruStep, MatchesScalarLoopReference) {
  Model m(tiny(), 11);
  GruParams p = m.encoder_layer(1);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n;
  std::vector<double> x(6), h(6), g(6), b(6);
  for (auto* v : {&x, &h, &g, &b})
    for (auto& e : *v) e = n(rng);
  p.ln_gain = Tensor::vector(g);
  p.ln_bias = Tensor::vector(b);
  auto ref = oracle::layer_norm(
      oracle::gru(x, h, vals(p.w_ih), vals(p.b_ih), vals(p.w_hh), vals(p.b_hh)), g, b);
  auto got = gru_step(Tensor::vector(x), Tensor::vector(h), p).values();
  for (std::size_t k = 0; k < 6; ++k) EXPECT_NEAR(got[k], ref[k], 1e-12);
}

TEST(GruStep, DimensionMismatchThrows) {
  Model m(tiny(), 1);
  EXPECT_THROW(gru_step(Tensor::vector({1, 2}), Tensor::zeros({6}), m.encoder_layer(0)),
               ContractViolation);
}

TEST(Encode, ShapesAndSingleFrame) {
  Model m(tiny(), 2);
  std::mt19937_64 rng(1);
  auto out = m.encode(random_frames(rng, 1, 3));
  EXPECT_EQ(out.states.shape(), (ag::Shape{1, 6}));
  EXPECT_FALSE(out.ce_logits.defined());
  EXPECT_EQ(out.s2s_features.shape(), (ag::Shape{1, 6}));
}

TEST(Encode, MtlBranchConcatenatesBottlenecks) {
  auto cfg = tiny(CeBranch::mtl);
  cfg.encoder.bottleneck_dim = 5;
  Model m(cfg, 2);
  std::mt19937_64 rng(1);
  auto out = m.encode(random_frames(rng, 4, 3));
  EXPECT_EQ(out.s2s_features.cols(), 10u);
  EXPECT_EQ(out.ce_logits.shape(), (ag::Shape{4, 4}));
  EXPECT_EQ(tiny(CeBranch::mtl).encoder.bottleneck(), 3u);
}

TEST(Encode, CausalUnderSuffixPerturbation) {
  Model m(tiny(), 5);
  std::mt19937_64 rng(7);
  Tensor x = random_frames(rng, 8, 3);
  auto base = m.encode(x).states.values();
  for (std::size_t t = 0; t < 8; ++t) {
    std::vector<double> y = x.values();
    for (std::size_t k = t * 3; k < y.size(); ++k) y[k] += 1.0;
    auto pert = m.encode(Tensor::constant({8, 3}, y)).states.values();
    for (std::size_t k = 0; k < t * 6; ++k) ASSERT_EQ(pert[k], base[k]) << "frame " << t;
    EXPECT_NE(pert[t * 6], base[t * 6]);
  }
}

TEST(Encode, IndependentOfCeParametersWhenBranchOff) {
  auto cfg = tiny(CeBranch::direct);
  Model m(cfg, 5);
  std::mt19937_64 rng(7);
  Tensor x = random_frames(rng, 5, 3);
  auto before = m.encode(x).s2s_features.values();
  Tensor w = m.params().get("enc.ce_out.w");
  for (double& v : w.mutable_data()) v = 42.0;
  EXPECT_EQ(m.encode(x).s2s_features.values(), before);
}

TEST(DecodeStep, ZeroWeightsGiveUniformLogits) {
  Model m(tiny(), 3);
  for (auto& [_, t] : m.params().all()) {
    Tensor p = t;
    std::fill(p.mutable_data().begin(), p.mutable_data().end(), 0.0);
  }
  auto [state, logits] = m.decode_step(kEos, m.initial_state(), Tensor::vector({1, 2, 3, 4, 5, 6}));
  EXPECT_EQ(logits.values(), std::vector<double>(7, 0.0));
}

TEST(DecodeStep, DeterministicAndMatchesScalarReference) {
  auto cfg = tiny();
  cfg.decoder.layer_norm = false;
  Model m(cfg, 8);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n;
  std::vector<double> ctx(6), h(5);
  for (auto& v : ctx) v = n(rng);
  for (auto& v : h) v = n(rng);
  DecoderState s{{Tensor::vector(h)}};
  auto [s1, l1] = m.decode_step(3, s, Tensor::vector(ctx));
  auto [s2, l2] = m.decode_step(3, s, Tensor::vector(ctx));
  EXPECT_EQ(l1.values(), l2.values());

  const auto& ps = m.params();
  std::vector<double> emb(4);
  for (std::size_t k = 0; k < 4; ++k) emb[k] = ps.get("dec.embed").at(3, k);
  std::vector<double> x = emb;
  x.insert(x.end(), ctx.begin(), ctx.end());
  GruParams g = m.decoder_layer(0);
  auto hn = oracle::gru(x, h, vals(g.w_ih), vals(g.b_ih), vals(g.w_hh), vals(g.b_hh));
  std::vector<double> cat = hn;
  cat.insert(cat.end(), ctx.begin(), ctx.end());
  for (std::size_t o = 0; o < 7; ++o) {
    double acc = ps.get("dec.out.b").at(o);
    for (std::size_t k = 0; k < cat.size(); ++k) acc += ps.get("dec.out.w").at(o, k) * cat[k];
    EXPECT_NEAR(l1.at(o), acc, 1e-12);
  }
}

TEST(DecodeStep, OutOfVocabularyThrows) {
  Model m(tiny(), 3);
  EXPECT_THROW(m.decode_step(7, m.initial_state(), Tensor::zeros({6})), ContractViolation);
}

TEST(LabelSmoothedCe, UniformLogitsGiveLogK) {
  Tensor logits = Tensor::constant({2, 4}, std::vector<double>(8, 0.3));
  std::vector<int> y{2, 3};
  EXPECT_NEAR(mocha::label_smoothed_ce(logits, y, 0.0).item(), std::log(4.0), 1e-15);
}

TEST(LabelSmoothedCe, LargeMarginApproachesZero) {
  Tensor logits = Tensor::constant({1, 3}, {0.0, 200.0, 0.0});
  std::vector<int> y{1};
  EXPECT_LT(mocha::label_smoothed_ce(logits, y, 0.0).item(), 1e-80);
}

TEST(LabelSmoothedCe, MatchesHandSummation) {
  const std::vector<double> z{0.5, -1.0, 2.0, 0.1};
  Tensor logits = Tensor::constant({1, 4}, z);
  std::vector<int> y{2};
  double lse = 0.0;
  for (double v : z) lse += std::exp(v);
  lse = std::log(lse);
  double expect = 0.0;
  for (int k = 0; k < 4; ++k) expect -= (k == 2 ? 0.8 : 0.2 / 3) * (z[k] - lse);
  EXPECT_NEAR(mocha::label_smoothed_ce(logits, y, 0.2).item(), expect, 1e-14);
}

TEST(LabelSmoothedCe, PadRowsMaskedAndBoundedByEntropy) {
  std::mt19937_64 rng(4);
  Tensor logits = random_frames(rng, 3, 5);
  std::vector<int> y{3, kPad, 2}, y2{3, 2};
  Tensor l2 = Tensor::constant({2, 5}, {logits.at(0, 0), logits.at(0, 1), logits.at(0, 2),
                                        logits.at(0, 3), logits.at(0, 4), logits.at(2, 0),
                                        logits.at(2, 1), logits.at(2, 2), logits.at(2, 3),
                                        logits.at(2, 4)});
  EXPECT_NEAR(mocha::label_smoothed_ce(logits, y, 0.1).item(), mocha::label_smoothed_ce(l2, y2, 0.1).item(),
              1e-14);
  const double eps = 0.2, off = eps / 4;
  const double entropy = -(0.8 * std::log(0.8) + 4 * off * std::log(off));
  EXPECT_GE(mocha::label_smoothed_ce(logits, y, eps).item(), entropy - 1e-12);
  std::vector<int> all_pad{kPad, kPad, kPad};
  EXPECT_EQ(mocha::label_smoothed_ce(logits, all_pad, 0.2).item(), 0.0);
}

TEST(ModelConfig, ValidationRejectsBadConfigs) {
  auto c = tiny();
  c.encoder.layers = 0;
  EXPECT_THROW(validate(c), ContractViolation);
  c = tiny();
  c.attention.conv_kernel = 4;
  EXPECT_THROW(validate(c), ContractViolation);
  c = tiny(CeBranch::mtl);
  c.encoder.align_classes = 0;
  EXPECT_THROW(validate(c), ContractViolation);
}

TEST(ModelParams, RejectsWrongShapesAndNames) {
  Model m(tiny(), 1);
  ParamStore ps = m.params().clone();
  EXPECT_NO_THROW(Model(tiny(), ps));
  ParamStore bad;
  for (const auto& [n, t] : m.params().all())
    if (n != "dec.out.b") bad.add(n, t.shape(), t.values());
  EXPECT_THROW(Model(tiny(), bad), ContractViolation);
}

TEST(ModelParams, InitializationFollowsConventions) {
  Model m(tiny(), 1);
  EXPECT_EQ(m.params().get("att.mono.r").item(), -4.0);
  EXPECT_NEAR(m.params().get("att.mono.g").item(), 0.5, 1e-15);
  for (double v : m.params().get("dec.out.b").values()) EXPECT_EQ(v, 0.0);
  const double bound = 1.0 / std::sqrt(11.0);  // fan-in of dec.out.w = 5 + 6
  for (double v : m.params().get("dec.out.w").values()) EXPECT_LE(std::abs(v), bound);
}
