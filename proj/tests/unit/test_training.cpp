#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "mocha/data.hpp"
#include "mocha/errors.hpp"
#include "mocha/training.hpp"
#include "toy.hpp"

using namespace mocha;
using namespace mocha::training;

namespace {

data::Corpus segmental(std::size_t n, std::uint64_t seed = 5) {
  data::TaskConfig t;
  t.utterances = n;
  t.symbols = 4;
  t.max_tokens = 3;
  t.seed = seed;
  return data::gen_segmental_task(t);
}

TrainConfig small_config() {
  TrainConfig c;
  c.model = testing_support::toy_config();
  c.model.encoder.layers = 1;
  c.model.encoder.hidden = 8;
  c.model.decoder.hidden = 8;
  c.model.decoder.vocab = 6;
  c.model.attention.attn_dim = 4;
  c.learning_rate = 3e-3;
  c.batch_size = 4;
  c.epochs = 2;
  c.seed = 9;
  return c;
}

std::map<std::string, std::vector<double>> snapshot(const ParamStore& ps) {
  std::map<std::string, std::vector<double>> out;
  for (const auto& [n, t] : ps.all()) out[n] = t.values();
  return out;
}

void set_grad(const Tensor& t, std::vector<double> g) { t.node()->ensure_grad() = std::move(g); }

}  // namespace

TEST(Adam, ThreeStepScalarTraceMatchesRecurrence) {
  const double lr = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const std::vector<double> grads{0.5, -1.0, 2.0};
  std::vector<double> p{1.0};
  Moments mom{{0.0}, {0.0}};
  double x = 1.0, m = 0.0, v = 0.0;
  for (std::uint64_t t = 1; t <= 3; ++t) {
    const double g = grads[t - 1];
    adam_update(p, std::vector<double>{g}, mom, lr, b1, b2, eps, t);
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, static_cast<double>(t)));
    const double vh = v / (1 - std::pow(b2, static_cast<double>(t)));
    x -= lr * mh / (std::sqrt(vh) + eps);
    EXPECT_NEAR(p[0], x, 1e-15) << "step " << t;
    EXPECT_NEAR(mom.m[0], m, 1e-15);
    EXPECT_NEAR(mom.v[0], v, 1e-15);
  }
}

TEST(Adam, FirstStepMovesByLearningRate) {
  std::vector<double> p{0.0, 0.0, 0.0};
  Moments mom{{0, 0, 0}, {0, 0, 0}};
  adam_update(p, std::vector<double>{1e-3, -7.0, 250.0}, mom, 0.01, 0.9, 0.999, 1e-8, 1);
  EXPECT_NEAR(p[0], -0.01, 1e-6);
  EXPECT_NEAR(p[1], 0.01, 1e-9);
  EXPECT_NEAR(p[2], -0.01, 1e-9);
}

TEST(Adam, ZeroGradientKeepsParamsAndDecaysMoments) {
  std::vector<double> p{2.0};
  Moments mom{{0.4}, {0.09}};
  adam_update(p, std::vector<double>{0.0}, mom, 0.01, 0.9, 0.999, 1e-8, 1);
  EXPECT_NEAR(mom.m[0], 0.36, 1e-15);
  EXPECT_NEAR(mom.v[0], 0.08991, 1e-15);
  // The update now follows the decayed first moment, not the zero gradient.
  std::vector<double> q{2.0};
  Moments fresh{{0.0}, {0.0}};
  adam_update(q, std::vector<double>{0.0}, fresh, 0.01, 0.9, 0.999, 1e-8, 1);
  EXPECT_EQ(q[0], 2.0);
  EXPECT_EQ(fresh.m[0], 0.0);
}

TEST(AdamStep, ClipsGlobalNormAndSkipsNonFinite) {
  ParamStore ps;
  Tensor& a = ps.add("a", {2}, {0.0, 0.0});
  Tensor& b = ps.add("b", {1}, {0.0});
  set_grad(a, {30.0, 40.0});
  set_grad(b, {0.0});
  const double norm = clip_global_norm(ps, {"a", "b"}, 5.0);
  EXPECT_DOUBLE_EQ(norm, 50.0);
  double after = 0.0;
  for (double g : a.grad()) after += g * g;
  EXPECT_LE(std::sqrt(after), 5.0 + 1e-9);

  TrainConfig cfg;
  AdamState st;
  set_grad(b, {std::nan("")});
  auto rep = adam_step(ps, st, cfg, [](const std::string&) { return true; });
  EXPECT_FALSE(rep.applied);
  EXPECT_EQ(st.step, 0u);
  EXPECT_EQ(a.values(), (std::vector<double>{0.0, 0.0}));
}

TEST(Freezing, ModeDependentTrainableSets) {
  TrainConfig c;
  c.objective.mode = objectives::Mode::pt_ce_stage1;
  EXPECT_TRUE(is_trainable(c, "enc.gru0.w_ih"));
  EXPECT_TRUE(is_trainable(c, "enc.mtl.ce_out.w"));
  EXPECT_FALSE(is_trainable(c, "dec.out.w"));
  EXPECT_FALSE(is_trainable(c, "att.mono.r"));
  c.objective.mode = objectives::Mode::pt_ce_stage2;
  EXPECT_FALSE(is_trainable(c, "enc.ce_out.b"));
  EXPECT_FALSE(is_trainable(c, "enc.mtl.ce_proj.w"));
  EXPECT_TRUE(is_trainable(c, "enc.mtl.s2s_proj.w"));
  EXPECT_TRUE(is_trainable(c, "dec.out.w"));
  c.objective.mode = objectives::Mode::minlt;
  c.freeze = {"dec."};
  EXPECT_FALSE(is_trainable(c, "dec.embed"));
  EXPECT_TRUE(is_trainable(c, "att.chunk.v"));
}

TEST(Train, ZeroEpochsReturnsInitialization) {
  auto cfg = small_config();
  cfg.epochs = 0;
  auto corpus = segmental(8);
  auto res = train(cfg, corpus, {});
  EXPECT_EQ(snapshot(res.model.params()), snapshot(Model(cfg.model, cfg.seed).params()));
  EXPECT_TRUE(res.log.empty());
}

TEST(Train, StageOneLeavesDecoderBytesUntouched) {
  auto cfg = small_config();
  cfg.model.encoder.ce_branch = CeBranch::direct;
  cfg.model.encoder.align_classes = 4;
  cfg.objective.mode = objectives::Mode::pt_ce_stage1;
  cfg.epochs = 1;
  auto corpus = segmental(12);
  Model init(cfg.model, cfg.seed);
  auto before = snapshot(init.params());
  auto res = train(cfg, corpus, {});
  auto after = snapshot(res.model.params());
  bool enc_moved = false;
  for (const auto& [n, v] : before) {
    if (n.rfind("enc.", 0) == 0) enc_moved |= v != after[n];
    else EXPECT_EQ(v, after[n]) << n;
  }
  EXPECT_TRUE(enc_moved);
}

TEST(Train, FixedSeedIsBitReproducible) {
  auto cfg = small_config();
  auto corpus = segmental(16);
  auto a = train(cfg, corpus, {});
  auto b = train(cfg, corpus, {});
  ASSERT_EQ(a.log.size(), b.log.size());
  for (std::size_t e = 0; e < a.log.size(); ++e) EXPECT_EQ(a.log[e].loss, b.log[e].loss);
  EXPECT_EQ(snapshot(a.model.params()), snapshot(b.model.params()));
  cfg.seed = 10;
  auto c = train(cfg, corpus, {});
  EXPECT_NE(a.log[0].loss, c.log[0].loss);
}

TEST(Train, SegmentalSmokeRunLossMostlyDecreases) {
  auto cfg = small_config();
  cfg.epochs = 20;
  cfg.model.decoder.dropout = 0.0;
  auto corpus = segmental(200);
  auto res = train(cfg, corpus, {});
  std::size_t decreases = 0;
  for (std::size_t e = 1; e < res.log.size(); ++e)
    decreases += res.log[e].loss < res.log[e - 1].loss;
  EXPECT_GE(static_cast<double>(decreases), 0.8 * static_cast<double>(res.log.size() - 1));
}

TEST(Train, ModeDataMismatchFailsBeforeTraining) {
  auto cfg = small_config();
  cfg.objective.mode = objectives::Mode::mtl_ce;  // needs a CE branch
  EXPECT_THROW(train(cfg, segmental(4), {}), ContractViolation);
  cfg = small_config();
  cfg.objective.mode = objectives::Mode::minlt;
  auto corpus = segmental(4);
  corpus[1].boundaries.clear();
  EXPECT_ANY_THROW(train(cfg, corpus, {}));
}

TEST(WarmStart, LoadsSharedNamesAndReportsTheRest) {
  auto src_cfg = testing_support::toy_config();
  auto dst_cfg = testing_support::toy_config(CeBranch::mtl);
  dst_cfg.decoder.vocab = 7;
  Model src(src_cfg, 1), dst(dst_cfg, 2);
  auto rep = warm_start(dst.params(), src.params());
  EXPECT_EQ(rep.mismatched, (std::vector<std::string>{"dec.embed", "dec.out.b", "dec.out.w"}));
  EXPECT_TRUE(rep.unexpected.empty());
  EXPECT_EQ(rep.missing.size(), 6u);
  EXPECT_EQ(dst.params().get("att.mono.v").values(), src.params().get("att.mono.v").values());
  EXPECT_NE(dst.params().get("dec.out.b").shape(), src.params().get("dec.out.b").shape());
}

TEST(Config, JsonRoundTripAndStrictKeys) {
  auto cfg = small_config();
  cfg.objective.mode = objectives::Mode::decot;
  cfg.objective.quantity_loss = false;
  cfg.freeze = {"enc."};
  const std::string text = to_json_text(cfg);
  EXPECT_EQ(to_json_text(from_json_text(text)), text);
  EXPECT_THROW(from_json_text(R"({"learning_rat": 0.1})"), DataError);
  EXPECT_THROW(from_json_text(R"({"model": {"decoder": {"hiden": 3}}})"), DataError);
  EXPECT_THROW(validate(from_json_text(R"({"learning_rate": -1})")), ContractViolation);
}

TEST(Float32, RoundingIsIdempotent) {
  Model m(testing_support::toy_config(), 3);
  round_to_float32(m.params());
  auto once = snapshot(m.params());
  for (const auto& [_, v] : once)
    for (double x : v) EXPECT_EQ(x, static_cast<double>(static_cast<float>(x)));
  round_to_float32(m.params());
  EXPECT_EQ(snapshot(m.params()), once);
}
