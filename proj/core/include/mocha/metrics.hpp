#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "mocha/data.hpp"
#include "mocha/model.hpp"

namespace mocha::metrics {

// Signed per-token deltas b_hat - b in encoder frames, grouped by utterance.
using Deltas = std::vector<std::vector<long>>;

Deltas latency_deltas(const std::vector<std::vector<int>>& predicted,
                      const std::vector<std::vector<int>>& gold);

// Mean over all tokens.
double corpus_latency(const Deltas& d);
// Mean over utterances of the per-utterance mean.
double utterance_latency(const Deltas& d);

struct Percentiles {
  double average = 0.0;
  double median = 0.0;
  double p90 = 0.0;
  double p99 = 0.0;
};

// Nearest-rank statistic: the ceil(q/100 * n)-th smallest value.
double nearest_rank(std::vector<long> values, double q);
Percentiles latency_percentiles(const std::vector<long>& pooled);

struct LatencyReport {
  Deltas deltas;
  double corpus = 0.0;
  double utterance = 0.0;
  double median = 0.0;
  double p90 = 0.0;
  double p99 = 0.0;
  std::size_t n_tokens = 0;
  std::size_t n_utterances = 0;
  double frame_ms = 30.0;

  std::vector<long> pooled() const;
  // One JSON object with keys avg, utterance_avg, median, p90, p99,
  // n_tokens, n_utterances, frame_ms.
  std::string to_text() const;
  static LatencyReport from_text(const std::string& text);
};

// include_eos = false drops the final token of every utterance.
LatencyReport make_report(const std::vector<std::vector<int>>& predicted,
                          const std::vector<std::vector<int>>& gold,
                          double frame_ms = 30.0, bool include_eos = true);

std::size_t edit_distance(const std::vector<int>& a, const std::vector<int>& b);
// Levenshtein distance / |ref|. An empty reference yields |hyp|.
double token_error_rate(const std::vector<int>& hyp, const std::vector<int>& ref);

// Hard monotonic pass with gold previous tokens. Returns 1-based boundaries,
// one per token; tokens whose boundary never fires get T'.
std::vector<int> extract_boundaries_teacher_forced(const Model& model,
                                                   const Tensor& frames,
                                                   const std::vector<int>& tokens);

struct Evaluation {
  LatencyReport latency;
  double token_accuracy = 0.0;  // teacher-forced argmax accuracy over all tokens
  double mean_loss = 0.0;       // teacher-forced S2S loss without noise
};

// Teacher-forced accuracy, loss and latency over a corpus.
Evaluation evaluate(const Model& model, const data::Corpus& corpus,
                    double frame_ms = 30.0, bool include_eos = true);

}  // namespace mocha::metrics
