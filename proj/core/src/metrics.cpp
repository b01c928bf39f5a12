#include "mocha/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "json.hpp"

#include "mocha/errors.hpp"
#include "mocha/streaming.hpp"

namespace mocha::metrics {

Deltas latency_deltas(const std::vector<std::vector<int>>& predicted,
                      const std::vector<std::vector<int>>& gold) {
  require(predicted.size() == gold.size(), "latency: predicted and gold utterance counts differ");
  Deltas d(predicted.size());
  for (std::size_t k = 0; k < predicted.size(); ++k) {
    require(predicted[k].size() == gold[k].size(), [&] { return std::string("latency: utterance " + std::to_string(k) + " has " +
                std::to_string(predicted[k].size()) + " predicted and " +
                std::to_string(gold[k].size()) + " gold boundaries"); });
    for (std::size_t i = 0; i < gold[k].size(); ++i)
      d[k].push_back(static_cast<long>(predicted[k][i]) - gold[k][i]);
  }
  return d;
}

double corpus_latency(const Deltas& d) {
  long total = 0;
  std::size_t n = 0;
  for (const auto& u : d) {
    total = std::accumulate(u.begin(), u.end(), total);
    n += u.size();
  }
  require(n > 0, "corpus_latency: empty evaluation set");
  return static_cast<double>(total) / static_cast<double>(n);
}

double utterance_latency(const Deltas& d) {
  require(!d.empty(), "utterance_latency: empty evaluation set");
  double acc = 0.0;
  for (const auto& u : d) {
    require(!u.empty(), "utterance_latency: utterance without tokens");
    acc += static_cast<double>(std::accumulate(u.begin(), u.end(), 0L)) /
           static_cast<double>(u.size());
  }
  return acc / static_cast<double>(d.size());
}

double nearest_rank(std::vector<long> values, double q) {
  require(!values.empty(), "nearest_rank: no values");
  require(q > 0.0 && q <= 100.0, "nearest_rank: q must be in (0, 100]");
  std::sort(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  auto rank = static_cast<std::size_t>(std::ceil(q / 100.0 * n - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, values.size());
  return static_cast<double>(values[rank - 1]);
}

Percentiles latency_percentiles(const std::vector<long>& pooled) {
  require(!pooled.empty(), "latency_percentiles: no values");
  Percentiles p;
  p.average = static_cast<double>(std::accumulate(pooled.begin(), pooled.end(), 0L)) /
              static_cast<double>(pooled.size());
  p.median = nearest_rank(pooled, 50.0);
  p.p90 = nearest_rank(pooled, 90.0);
  p.p99 = nearest_rank(pooled, 99.0);
  return p;
}

std::vector<long> LatencyReport::pooled() const {
  std::vector<long> out;
  for (const auto& u : deltas) out.insert(out.end(), u.begin(), u.end());
  return out;
}

std::string LatencyReport::to_text() const {
  nlohmann::ordered_json j;
  j["avg"] = corpus;
  j["utterance_avg"] = utterance;
  j["median"] = median;
  j["p90"] = p90;
  j["p99"] = p99;
  j["n_tokens"] = n_tokens;
  j["n_utterances"] = n_utterances;
  j["frame_ms"] = frame_ms;
  j["deltas"] = deltas;
  return j.dump();
}

LatencyReport LatencyReport::from_text(const std::string& text) {
  LatencyReport r;
  try {
    auto j = nlohmann::json::parse(text);
    r.corpus = j.at("avg").get<double>();
    r.utterance = j.value("utterance_avg", r.corpus);
    r.median = j.at("median").get<double>();
    r.p90 = j.at("p90").get<double>();
    r.p99 = j.at("p99").get<double>();
    r.n_tokens = j.at("n_tokens").get<std::size_t>();
    r.n_utterances = j.at("n_utterances").get<std::size_t>();
    r.frame_ms = j.at("frame_ms").get<double>();
    if (j.contains("deltas")) r.deltas = j.at("deltas").get<Deltas>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("latency report: ") + e.what());
  }
  return r;
}

LatencyReport make_report(const std::vector<std::vector<int>>& predicted,
                          const std::vector<std::vector<int>>& gold, double frame_ms,
                          bool include_eos) {
  LatencyReport r;
  r.deltas = latency_deltas(predicted, gold);
  if (!include_eos)
    for (auto& u : r.deltas)
      if (!u.empty()) u.pop_back();
  std::erase_if(r.deltas, [](const auto& u) { return u.empty(); });
  r.frame_ms = frame_ms;
  r.n_utterances = r.deltas.size();
  const auto pooled = r.pooled();
  r.n_tokens = pooled.size();
  r.corpus = corpus_latency(r.deltas);
  r.utterance = utterance_latency(r.deltas);
  const auto p = latency_percentiles(pooled);
  r.median = p.median;
  r.p90 = p.p90;
  r.p99 = p.p99;
  return r;
}

std::size_t edit_distance(const std::vector<int>& a, const std::vector<int>& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  std::iota(prev.begin(), prev.end(), 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1,
                         prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double token_error_rate(const std::vector<int>& hyp, const std::vector<int>& ref) {
  if (ref.empty()) return static_cast<double>(hyp.size());
  return static_cast<double>(edit_distance(hyp, ref)) / static_cast<double>(ref.size());
}

std::vector<int> extract_boundaries_teacher_forced(const Model& model, const Tensor& frames,
                                                   const std::vector<int>& tokens) {
  return streaming::teacher_forced_hard(model, frames, tokens).boundaries;
}

Evaluation evaluate(const Model& model, const data::Corpus& corpus, double frame_ms,
                    bool include_eos) {
  require(!corpus.empty(), "evaluate: empty corpus");
  ag::NoGradGuard guard;
  const std::size_t stack = model.config().encoder.stack_factor;
  std::vector<std::vector<int>> pred, gold;
  std::size_t correct = 0, total = 0;
  double loss = 0.0;
  for (const auto& u : corpus) {
    Tensor frames = data::stack_frames(u.frames, stack);
    auto hard = streaming::teacher_forced_hard(model, frames, u.tokens);
    for (std::size_t i = 0; i < u.tokens.size(); ++i) {
      auto row = hard.logits.data().subspan(i * hard.logits.cols(), hard.logits.cols());
      const auto best = std::max_element(row.begin(), row.end()) - row.begin();
      correct += best == u.tokens[i] ? 1 : 0;
      ++total;
    }
    ForwardResult soft = forward_teacher_forced(model, frames, u.tokens);
    loss += mocha::label_smoothed_ce(soft.logits, u.tokens, model.config().decoder.label_smoothing)
                .item();
    pred.push_back(std::move(hard.boundaries));
    gold.push_back(u.boundaries);
  }
  Evaluation ev;
  ev.latency = make_report(pred, gold, frame_ms, include_eos);
  ev.token_accuracy = static_cast<double>(correct) / static_cast<double>(total);
  ev.mean_loss = loss / static_cast<double>(corpus.size());
  return ev;
}

}  // namespace mocha::metrics
