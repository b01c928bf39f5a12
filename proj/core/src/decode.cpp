#include "mocha/decode.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mocha/errors.hpp"
#include "mocha/plot.hpp"

namespace mocha::decode {

using namespace ag;

namespace {

struct ModelState {
  DecoderState dec;
  Tensor context;
  std::size_t ptr = 0;
};

std::vector<double> log_softmax_values(std::span<const double> logits) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : logits) mx = std::max(mx, v);
  double z = 0.0;
  for (double v : logits) z += std::exp(v - mx);
  const double lz = mx + std::log(z);
  std::vector<double> out(logits.size());
  for (std::size_t k = 0; k < logits.size(); ++k) out[k] = logits[k] - lz;
  return out;
}

int best_token(const std::vector<double>& lp) {
  int best = -1;
  for (std::size_t k = 0; k < lp.size(); ++k) {
    if (static_cast<int>(k) == kPad) continue;
    if (best < 0 || lp[k] > lp[static_cast<std::size_t>(best)]) best = static_cast<int>(k);
  }
  return best;
}

Hypothesis extend(const Hypothesis& h, int token, const StepOutput& out) {
  Hypothesis c;
  c.tokens = h.tokens;
  c.boundaries = h.boundaries;
  c.max_read = h.max_read;
  c.tokens.push_back(token);
  c.boundaries.push_back(out.boundary);
  c.max_read.push_back(out.max_read);
  c.log_prob = h.log_prob + out.log_probs[static_cast<std::size_t>(token)];
  c.complete = token == kEos || !out.fired;
  c.state = out.next;
  return c;
}

}  // namespace

double score(const Hypothesis& h, double length_penalty) {
  return h.log_prob + length_penalty * static_cast<double>(h.tokens.size());
}

std::vector<Hypothesis> beam_search(std::any initial, const Expander& expand,
                                    const BeamOptions& opt) {
  require(opt.beam >= 1, "beam_search: beam must be >= 1");
  require(opt.max_len >= 1, "beam_search: max_len must be >= 1");
  std::vector<Hypothesis> live(1), finished;
  live[0].state = std::move(initial);
  auto by_score = [&](const Hypothesis& a, const Hypothesis& b) {
    return score(a, opt.length_penalty) > score(b, opt.length_penalty);
  };
  for (std::size_t step = 0; step < opt.max_len && !live.empty(); ++step) {
    std::vector<Hypothesis> cands;
    for (const auto& h : live) {
      const int y_prev = h.tokens.empty() ? kEos : h.tokens.back();
      StepOutput out = expand(h.state, y_prev);
      if (!out.fired) {
        cands.push_back(extend(h, kEos, out));
        continue;
      }
      std::vector<int> order;
      for (std::size_t k = 0; k < out.log_probs.size(); ++k)
        if (static_cast<int>(k) != kPad) order.push_back(static_cast<int>(k));
      const std::size_t keep = std::min(opt.beam, order.size());
      std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep),
                        order.end(), [&](int a, int b) {
                          const double la = out.log_probs[static_cast<std::size_t>(a)];
                          const double lb = out.log_probs[static_cast<std::size_t>(b)];
                          return la != lb ? la > lb : a < b;
                        });
      for (std::size_t k = 0; k < keep; ++k) cands.push_back(extend(h, order[k], out));
    }
    std::stable_sort(cands.begin(), cands.end(), by_score);
    if (cands.size() > opt.beam) cands.resize(opt.beam);
    live.clear();
    for (auto& c : cands) (c.complete ? finished : live).push_back(std::move(c));
    // Without a positive length bonus, scores only decrease as hypotheses grow.
    if (opt.length_penalty <= 0.0 && !finished.empty() && !live.empty()) {
      double best_done = -std::numeric_limits<double>::infinity();
      for (const auto& f : finished) best_done = std::max(best_done, score(f, opt.length_penalty));
      if (best_done >= score(live.front(), opt.length_penalty)) live.clear();
    }
  }
  for (auto& h : live) finished.push_back(std::move(h));
  std::stable_sort(finished.begin(), finished.end(), by_score);
  return finished;
}

std::any model_initial_state(const Model& model, const streaming::StreamingEncoder& enc) {
  ModelState s{model.initial_state(), Tensor::zeros({enc.feature_dim()}), 0};
  return s;
}

Expander model_expander(const Model& model, streaming::StreamingEncoder& enc) {
  return [&model, &enc](const std::any& state, int y_prev) {
    NoGradGuard guard;
    const auto& s = std::any_cast<const ModelState&>(state);
    ModelState next;
    next.dec = model.advance(y_prev, s.context, s.dec);
    auto a = streaming::attend(enc, model, next.dec.top(), s.ptr);
    StepOutput out;
    out.fired = a.boundary.has_value();
    next.ptr = a.boundary.value_or(s.ptr);
    out.boundary = a.boundary ? static_cast<int>(*a.boundary) + 1 : static_cast<int>(enc.frames());
    out.max_read = a.max_read;
    next.context = a.context;
    out.log_probs = log_softmax_values(model.readout(next.dec, next.context).data());
    out.next = std::move(next);
    return out;
  };
}

Decoded greedy_stream_decode(const Model& model, const Tensor& frames, std::size_t max_len) {
  require(max_len >= 1, "greedy decode: max_len must be >= 1");
  streaming::StreamingEncoder enc(model, frames);
  Expander expand = model_expander(model, enc);
  Hypothesis h;
  h.state = model_initial_state(model, enc);
  while (!h.complete && h.tokens.size() < max_len) {
    const int y_prev = h.tokens.empty() ? kEos : h.tokens.back();
    StepOutput out = expand(h.state, y_prev);
    h = extend(h, out.fired ? best_token(out.log_probs) : kEos, out);
  }
  Decoded d;
  d.log = {h.max_read, h.boundaries};
  d.best = std::move(h);
  return d;
}

std::vector<Hypothesis> beam_stream_decode(const Model& model, const Tensor& frames,
                                           const BeamOptions& opt) {
  streaming::StreamingEncoder enc(model, frames);
  return beam_search(model_initial_state(model, enc), model_expander(model, enc), opt);
}

std::vector<int> transcript(const Hypothesis& h) {
  std::vector<int> out = h.tokens;
  if (!out.empty() && out.back() == kEos) out.pop_back();
  return out;
}

void export_attention_trace(const Model& model, const data::Utterance& u,
                            const std::string& stem) {
  NoGradGuard guard;
  Tensor frames = data::stack_frames(u.frames, model.config().encoder.stack_factor);
  ForwardResult soft = forward_teacher_forced(model, frames, u.tokens);
  auto predicted = streaming::teacher_forced_hard(model, frames, u.tokens).boundaries;
  std::vector<std::vector<double>> alpha(soft.alpha.rows());
  for (std::size_t i = 0; i < alpha.size(); ++i) {
    auto r = soft.alpha.data().subspan(i * soft.alpha.cols(), soft.alpha.cols());
    alpha[i].assign(r.begin(), r.end());
  }
  plot::write_alignment_csv(alpha, stem + ".csv");
  plot::write_alignment_svg(alpha, predicted, u.boundaries, stem + ".svg");
  std::string side = "{\"predicted\": [";
  for (std::size_t i = 0; i < predicted.size(); ++i)
    side += (i ? ", " : "") + std::to_string(predicted[i]);
  side += "], \"gold\": [";
  for (std::size_t i = 0; i < u.boundaries.size(); ++i)
    side += (i ? ", " : "") + std::to_string(u.boundaries[i]);
  plot::write_text(stem + ".boundaries.json", side + "]}\n");
}

}  // namespace mocha::decode
