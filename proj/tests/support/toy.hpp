#pragma once

#include <random>
#include <vector>

#include "mocha/data.hpp"
#include "mocha/gradcheck.hpp"
#include "mocha/model.hpp"

namespace testing_support {

// Encoder 2x16, decoder 1x16, ten frames, four tokens (three plus EOS).
inline mocha::ModelConfig toy_config(mocha::CeBranch branch = mocha::CeBranch::none) {
  mocha::ModelConfig c;
  c.encoder.layers = 2;
  c.encoder.hidden = 16;
  c.encoder.feature_dim = 4;
  c.encoder.ce_branch = branch;
  c.encoder.align_classes = branch == mocha::CeBranch::none ? 0 : 5;
  c.encoder.dropout = 0.0;
  c.decoder.hidden = 16;
  c.decoder.embed_dim = 8;
  c.decoder.vocab = 6;
  c.decoder.dropout = 0.0;
  c.attention.attn_dim = 8;
  c.attention.chunk_width = 3;
  c.attention.r_init = 0.0;
  return c;
}

inline mocha::data::Utterance toy_utterance(std::uint64_t seed = 3) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  mocha::data::Utterance u;
  u.id = "toy";
  u.frames.assign(10, std::vector<double>(4));
  for (auto& f : u.frames)
    for (auto& v : f) v = n(rng);
  u.align = {1, 1, 1, 2, 2, 2, 3, 3, 4, 4};
  u.tokens = {2, 3, 4, mocha::kEos};
  u.boundaries = {3, 6, 8, 10};
  return u;
}

inline std::vector<mocha::ag::NamedTensor> named_params(const mocha::Model& m) {
  std::vector<mocha::ag::NamedTensor> out;
  for (const auto& [name, t] : m.params().all()) out.push_back({name, t});
  return out;
}

}  // namespace testing_support
