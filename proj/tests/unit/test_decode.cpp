#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "mocha/data.hpp"
#include "mocha/decode.hpp"
#include "mocha/plot.hpp"
#include "mocha/streaming.hpp"
#include "toy.hpp"

using namespace mocha;
using namespace mocha::decode;

namespace {

// Deterministic pseudo-random next-token distribution of a token history.
std::vector<double> toy_log_probs(const std::vector<int>& history, std::size_t vocab) {
  std::uint64_t h = 1469598103934665603ULL;
  for (int t : history) h = (h ^ static_cast<std::uint64_t>(t + 7)) * 1099511628211ULL;
  std::mt19937_64 rng(h);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  std::vector<double> z(vocab);
  for (auto& v : z) v = u(rng);
  z[kPad] = -1e9;
  double m = *std::max_element(z.begin(), z.end()), s = 0.0;
  for (double v : z) s += std::exp(v - m);
  for (auto& v : z) v -= m + std::log(s);
  return z;
}

Expander toy_expander(std::size_t vocab) {
  return [vocab](const std::any& state, int y_prev) {
    auto hist = std::any_cast<std::vector<int>>(state);
    if (!hist.empty() || y_prev != kEos) hist.push_back(y_prev);
    StepOutput out;
    out.log_probs = toy_log_probs(hist, vocab);
    out.boundary = static_cast<int>(hist.size()) + 1;
    out.next = hist;
    return out;
  };
}

double exhaustive_best(std::vector<int> prefix, double lp, std::size_t vocab,
                       std::size_t max_len) {
  if (prefix.size() == max_len) return lp;
  const auto dist = toy_log_probs(prefix, vocab);
  double best = -1e300;
  for (std::size_t k = 1; k < vocab; ++k) {
    const double next = lp + dist[k];
    if (static_cast<int>(k) == kEos) {
      best = std::max(best, next);
    } else {
      auto p = prefix;
      p.push_back(static_cast<int>(k));
      best = std::max(best, exhaustive_best(p, next, vocab, max_len));
    }
  }
  return best;
}

Model firing_model(std::uint64_t seed) {
  auto cfg = testing_support::toy_config();
  Model m(cfg, seed);
  return m;
}

}  // namespace

TEST(BeamSearch, WideBeamMatchesExhaustiveSearch) {
  for (std::size_t max_len : {1u, 2u, 4u}) {
    BeamOptions opt;
    opt.beam = 200;
    opt.max_len = max_len;
    auto hyps = beam_search(std::vector<int>{}, toy_expander(4), opt);
    ASSERT_FALSE(hyps.empty());
    EXPECT_NEAR(hyps.front().log_prob, exhaustive_best({}, 0.0, 4, max_len), 1e-12);
  }
}

TEST(BeamSearch, ResultsSortedAndWellFormed) {
  BeamOptions opt;
  opt.beam = 3;
  opt.max_len = 6;
  auto hyps = beam_search(std::vector<int>{}, toy_expander(5), opt);
  for (std::size_t k = 1; k < hyps.size(); ++k)
    EXPECT_GE(score(hyps[k - 1], 0.0), score(hyps[k], 0.0));
  for (const auto& h : hyps) {
    EXPECT_EQ(h.tokens.size(), h.boundaries.size());
    for (int t : h.tokens) EXPECT_NE(t, kPad);
    if (h.complete) {
      EXPECT_EQ(h.tokens.back(), kEos);
    }
  }
}

TEST(BeamSearch, LengthPenaltyShiftsScores) {
  Hypothesis h;
  h.tokens = {2, 3, kEos};
  h.log_prob = -1.5;
  EXPECT_EQ(score(h, 0.0), -1.5);
  EXPECT_EQ(score(h, 0.5), 0.0);
}

TEST(StreamDecode, BeamOneEqualsGreedy) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    Model m = firing_model(seed);
    auto u = testing_support::toy_utterance(seed);
    Tensor frames = data::stack_frames(u.frames, 1);
    auto g = greedy_stream_decode(m, frames, 12);
    BeamOptions opt;
    opt.beam = 1;
    opt.max_len = 12;
    auto b = beam_stream_decode(m, frames, opt);
    ASSERT_FALSE(b.empty());
    EXPECT_EQ(b.front().tokens, g.best.tokens);
    EXPECT_EQ(b.front().boundaries, g.best.boundaries);
    EXPECT_DOUBLE_EQ(b.front().log_prob, g.best.log_prob);
  }
}

TEST(StreamDecode, WiderBeamNeverScoresWorse) {
  for (std::uint64_t seed : {4u, 5u, 6u}) {
    Model m = firing_model(seed);
    Tensor frames = data::stack_frames(testing_support::toy_utterance(seed).frames, 1);
    BeamOptions one, four;
    one.beam = 1;
    four.beam = 4;
    one.max_len = four.max_len = 8;
    auto a = beam_stream_decode(m, frames, one).front();
    auto b = beam_stream_decode(m, frames, four).front();
    EXPECT_GE(b.log_prob, a.log_prob - 1e-12);
  }
}

TEST(StreamDecode, ReadsAtMostTwoFramesPastBoundary) {
  for (std::uint64_t seed = 10; seed < 16; ++seed) {
    Model m = firing_model(seed);
    Tensor frames = data::stack_frames(testing_support::toy_utterance(seed).frames, 1);
    auto d = greedy_stream_decode(m, frames, 12);
    ASSERT_EQ(d.log.max_read.size(), d.log.boundaries.size());
    for (std::size_t i = 0; i < d.log.boundaries.size(); ++i) {
      // max_read is a 0-based row, boundaries are 1-based
      EXPECT_LE(d.log.max_read[i] + 1, d.log.boundaries[i] + 2);
      if (i > 0) {
        EXPECT_LE(d.log.boundaries[i - 1], d.log.boundaries[i]);
      }
    }
  }
}

TEST(StreamDecode, NeverFiringFinalizesImmediately) {
  Model m = firing_model(1);
  Tensor r = m.params().get("att.mono.r");
  r.mutable_data()[0] = -1e3;
  Tensor frames = data::stack_frames(testing_support::toy_utterance().frames, 1);
  auto d = greedy_stream_decode(m, frames, 12);
  EXPECT_EQ(d.best.tokens, (std::vector<int>{kEos}));
  EXPECT_EQ(d.best.boundaries, (std::vector<int>{10}));
  EXPECT_TRUE(transcript(d.best).empty());
}

TEST(StreamingEncoder, MatchesBatchForward) {
  Model m = firing_model(2);
  Tensor frames = data::stack_frames(testing_support::toy_utterance().frames, 1);
  auto batch = m.encode(frames).s2s_features;
  streaming::StreamingEncoder enc(m, frames);
  for (std::size_t j = 0; j < 10; ++j) {
    const double* f = enc.features(j);
    for (std::size_t k = 0; k < enc.feature_dim(); ++k) ASSERT_EQ(f[k], batch.at(j, k));
    EXPECT_EQ(enc.high_water(), static_cast<long>(j));
  }
}

TEST(StreamingEncoder, TeacherForcedHardMatchesMetrics) {
  Model m = firing_model(3);
  auto u = testing_support::toy_utterance();
  Tensor frames = data::stack_frames(u.frames, 1);
  auto hp = streaming::teacher_forced_hard(m, frames, u.tokens);
  EXPECT_EQ(hp.boundaries.size(), u.tokens.size());
  EXPECT_EQ(hp.logits.rows(), u.tokens.size());
  for (std::size_t i = 0; i < hp.boundaries.size(); ++i)
    EXPECT_LE(hp.max_read[i] + 1, hp.boundaries[i] + 2);
}

TEST(AttentionTrace, ShapeAndMarkers) {
  Model m = firing_model(7);
  auto u = testing_support::toy_utterance();
  const auto stem = (std::filesystem::temp_directory_path() / "mocha_trace").string();
  export_attention_trace(m, u, stem);
  auto alpha = plot::read_alignment_csv(stem + ".csv");
  ASSERT_EQ(alpha.size(), u.tokens.size());
  for (const auto& row : alpha) {
    ASSERT_EQ(row.size(), 10u);
    double s = 0.0;
    for (double v : row) s += v;
    EXPECT_LE(s, 1.0 + 1e-9);
  }
  std::ifstream in(stem + ".svg");
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string svg = ss.str();
  auto count = [&](const std::string& needle) {
    std::size_t n = 0;
    for (auto p = svg.find(needle); p != std::string::npos; p = svg.find(needle, p + 1)) ++n;
    return n;
  };
  EXPECT_EQ(count("class=\"cell\""), 4u * 10u);
  EXPECT_EQ(count("class=\"gold\""), 4u);
  EXPECT_EQ(count("class=\"predicted\""), 4u);
  EXPECT_TRUE(std::filesystem::exists(stem + ".boundaries.json"));
  for (const char* ext : {".csv", ".svg", ".boundaries.json"}) std::filesystem::remove(stem + ext);
}
