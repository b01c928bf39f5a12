#pragma once

#include <any>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "mocha/data.hpp"
#include "mocha/metrics.hpp"
#include "mocha/model.hpp"
#include "mocha/streaming.hpp"

namespace mocha::decode {

struct Hypothesis {
  std::vector<int> tokens;      // EOS-terminated when complete
  std::vector<int> boundaries;  // 1-based, non-decreasing
  std::vector<long> max_read;   // highest input row read before each token
  double log_prob = 0.0;
  bool complete = false;
  std::any state;               // decoder-side state after the last token
};

// Per-token frame access record of one decoded hypothesis.
struct FrameAccessLog {
  std::vector<long> max_read;
  std::vector<int> boundaries;
};

// Result of expanding one hypothesis by a step: the log-distribution over the
// next token, where the step attended, and the state shared by all children.
struct StepOutput {
  std::vector<double> log_probs;
  int boundary = 0;      // 1-based
  bool fired = true;     // false: the hypothesis is finalized with EOS
  long max_read = -1;
  std::any next;
};

using Expander = std::function<StepOutput(const std::any& state, int y_prev)>;

struct BeamOptions {
  std::size_t beam = 8;
  std::size_t max_len = 64;
  double length_penalty = 0.0;  // score = log_prob + length_penalty * |tokens|
};

double score(const Hypothesis& h, double length_penalty);

// Token-synchronous beam search over an arbitrary expander. Returns complete
// hypotheses (plus any cut off at max_len) sorted by descending score.
std::vector<Hypothesis> beam_search(std::any initial, const Expander& expand,
                                    const BeamOptions& opt);

// Expander backed by a model and a lazily evaluated encoder.
Expander model_expander(const Model& model, streaming::StreamingEncoder& enc);
std::any model_initial_state(const Model& model, const streaming::StreamingEncoder& enc);

struct Decoded {
  Hypothesis best;
  FrameAccessLog log;
};

// frames: T' x input_dim, already stacked.
Decoded greedy_stream_decode(const Model& model, const Tensor& frames, std::size_t max_len);
std::vector<Hypothesis> beam_stream_decode(const Model& model, const Tensor& frames,
                                           const BeamOptions& opt);

// Tokens without the trailing EOS.
std::vector<int> transcript(const Hypothesis& h);

// Soft alignment of a teacher-forced pass plus hard and gold boundaries,
// written as <stem>.csv (header of frame indices, one row per token) and
// <stem>.svg, with the boundaries in <stem>.boundaries.json.
void export_attention_trace(const Model& model, const data::Utterance& u,
                            const std::string& stem);

}  // namespace mocha::decode
