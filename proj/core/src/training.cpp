#include "mocha/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "json.hpp"

#include "mocha/checkpoint.hpp"
#include "mocha/errors.hpp"
#include "mocha/metrics.hpp"

namespace mocha::training {

using nlohmann::json;
using objectives::Mode;

namespace {

// Reads `key` into `out` when present and records it as consumed.
template <typename T>
void take(const json& j, const char* key, T& out, std::set<std::string>& seen) {
  seen.insert(key);
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw DataError(std::string("config field '") + key + "': " + e.what());
  }
}

void reject_unknown(const json& j, const std::set<std::string>& seen, const std::string& where) {
  if (!j.is_object()) throw DataError("config section '" + where + "' must be an object");
  for (const auto& [k, _] : j.items())
    if (!seen.count(k)) throw DataError("unknown config field '" + where + k + "'");
}

std::string branch_name(CeBranch b) {
  switch (b) {
    case CeBranch::none: return "none";
    case CeBranch::direct: return "direct";
    case CeBranch::mtl: return "mtl";
  }
  return "none";
}

CeBranch parse_branch(const std::string& s) {
  if (s == "none") return CeBranch::none;
  if (s == "direct") return CeBranch::direct;
  if (s == "mtl") return CeBranch::mtl;
  throw DataError("unknown ce_branch '" + s + "'");
}

std::string algorithm_name(AlignmentAlgorithm a) {
  return a == AlignmentAlgorithm::scan ? "scan" : "cumulative";
}

AlignmentAlgorithm parse_algorithm(const std::string& s) {
  if (s == "scan") return AlignmentAlgorithm::scan;
  if (s == "cumulative") return AlignmentAlgorithm::cumulative;
  throw DataError("unknown alignment algorithm '" + s + "'");
}

json encode_config(const TrainConfig& c) {
  const auto& e = c.model.encoder;
  const auto& d = c.model.decoder;
  const auto& a = c.model.attention;
  const auto& o = c.objective;
  json j;
  j["model"]["encoder"] = {{"layers", e.layers},
                           {"hidden", e.hidden},
                           {"feature_dim", e.feature_dim},
                           {"stack_factor", e.stack_factor},
                           {"ce_branch", branch_name(e.ce_branch)},
                           {"bottleneck_dim", e.bottleneck_dim},
                           {"align_classes", e.align_classes},
                           {"layer_norm", e.layer_norm},
                           {"dropout", e.dropout}};
  j["model"]["decoder"] = {{"layers", d.layers},       {"hidden", d.hidden},
                           {"embed_dim", d.embed_dim}, {"vocab", d.vocab},
                           {"label_smoothing", d.label_smoothing},
                           {"readout_dim", d.readout_dim},
                           {"layer_norm", d.layer_norm}, {"dropout", d.dropout}};
  j["model"]["attention"] = {{"attn_dim", a.attn_dim},
                             {"conv_kernel", a.conv_kernel},
                             {"chunk_width", a.chunk_width},
                             {"clip_eps", a.clip_eps},
                             {"noise_std", a.noise_std},
                             {"noise", a.noise},
                             {"r_init", a.r_init},
                             {"algorithm", algorithm_name(a.algorithm)}};
  j["objective"] = {{"mode", objectives::to_string(o.mode)},
                    {"lambda_ce", o.lambda_ce},
                    {"lambda_qua", o.lambda_qua},
                    {"lambda_minlt", o.lambda_minlt},
                    {"delta", o.delta},
                    {"zero_boundaries", o.zero_boundaries}};
  j["objective"]["quantity_loss"] =
      o.quantity_loss ? json(*o.quantity_loss) : json(nullptr);
  j["learning_rate"] = c.learning_rate;
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["grad_clip"] = c.grad_clip;
  j["seed"] = c.seed;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["adam_eps"] = c.adam_eps;
  j["warm_start"] = c.warm_start;
  j["target_accuracy"] = c.target_accuracy;
  j["freeze"] = c.freeze;
  j["stage1_min_improvement"] = c.stage1_min_improvement;
  j["stage1_patience"] = c.stage1_patience;
  j["frame_ms"] = c.frame_ms;
  j["latency_include_eos"] = c.latency_include_eos;
  j["eval_limit"] = c.eval_limit;
  return j;
}

TrainConfig decode_config(const json& j) {
  TrainConfig c;
  std::set<std::string> top;
  if (j.contains("model")) {
    const json& m = j.at("model");
    std::set<std::string> ms;
    if (m.contains("encoder")) {
      const json& s = m.at("encoder");
      auto& e = c.model.encoder;
      std::set<std::string> seen;
      std::string branch = branch_name(e.ce_branch);
      take(s, "layers", e.layers, seen);
      take(s, "hidden", e.hidden, seen);
      take(s, "feature_dim", e.feature_dim, seen);
      take(s, "stack_factor", e.stack_factor, seen);
      take(s, "ce_branch", branch, seen);
      take(s, "bottleneck_dim", e.bottleneck_dim, seen);
      take(s, "align_classes", e.align_classes, seen);
      take(s, "layer_norm", e.layer_norm, seen);
      take(s, "dropout", e.dropout, seen);
      e.ce_branch = parse_branch(branch);
      reject_unknown(s, seen, "model.encoder.");
    }
    if (m.contains("decoder")) {
      const json& s = m.at("decoder");
      auto& d = c.model.decoder;
      std::set<std::string> seen;
      take(s, "layers", d.layers, seen);
      take(s, "hidden", d.hidden, seen);
      take(s, "embed_dim", d.embed_dim, seen);
      take(s, "vocab", d.vocab, seen);
      take(s, "label_smoothing", d.label_smoothing, seen);
      take(s, "readout_dim", d.readout_dim, seen);
      take(s, "layer_norm", d.layer_norm, seen);
      take(s, "dropout", d.dropout, seen);
      reject_unknown(s, seen, "model.decoder.");
    }
    if (m.contains("attention")) {
      const json& s = m.at("attention");
      auto& a = c.model.attention;
      std::set<std::string> seen;
      std::string algo = algorithm_name(a.algorithm);
      take(s, "attn_dim", a.attn_dim, seen);
      take(s, "conv_kernel", a.conv_kernel, seen);
      take(s, "chunk_width", a.chunk_width, seen);
      take(s, "clip_eps", a.clip_eps, seen);
      take(s, "noise_std", a.noise_std, seen);
      take(s, "noise", a.noise, seen);
      take(s, "r_init", a.r_init, seen);
      take(s, "algorithm", algo, seen);
      a.algorithm = parse_algorithm(algo);
      reject_unknown(s, seen, "model.attention.");
    }
    reject_unknown(m, {"encoder", "decoder", "attention"}, "model.");
  }
  if (j.contains("objective")) {
    const json& s = j.at("objective");
    auto& o = c.objective;
    std::set<std::string> seen;
    std::string mode = objectives::to_string(o.mode);
    take(s, "mode", mode, seen);
    take(s, "lambda_ce", o.lambda_ce, seen);
    take(s, "lambda_qua", o.lambda_qua, seen);
    take(s, "lambda_minlt", o.lambda_minlt, seen);
    take(s, "delta", o.delta, seen);
    take(s, "zero_boundaries", o.zero_boundaries, seen);
    seen.insert("quantity_loss");
    if (s.contains("quantity_loss") && !s.at("quantity_loss").is_null())
      o.quantity_loss = s.at("quantity_loss").get<bool>();
    try {
      o.mode = objectives::parse_mode(mode);
    } catch (const ContractViolation& e) {
      throw DataError(e.what());
    }
    reject_unknown(s, seen, "objective.");
  }
  top.insert({"model", "objective"});
  take(j, "learning_rate", c.learning_rate, top);
  take(j, "batch_size", c.batch_size, top);
  take(j, "epochs", c.epochs, top);
  take(j, "grad_clip", c.grad_clip, top);
  take(j, "seed", c.seed, top);
  take(j, "beta1", c.beta1, top);
  take(j, "beta2", c.beta2, top);
  take(j, "adam_eps", c.adam_eps, top);
  take(j, "warm_start", c.warm_start, top);
  take(j, "target_accuracy", c.target_accuracy, top);
  take(j, "freeze", c.freeze, top);
  take(j, "stage1_min_improvement", c.stage1_min_improvement, top);
  take(j, "stage1_patience", c.stage1_patience, top);
  take(j, "frame_ms", c.frame_ms, top);
  take(j, "latency_include_eos", c.latency_include_eos, top);
  take(j, "eval_limit", c.eval_limit, top);
  reject_unknown(j, top, "");
  return c;
}

bool finite_all(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

void validate(const TrainConfig& cfg) {
  validate(cfg.model);
  objectives::validate(cfg.objective);
  require(cfg.learning_rate > 0.0, "learning_rate must be > 0");
  require(cfg.batch_size >= 1, "batch_size must be >= 1");
  require(cfg.grad_clip >= 0.0, "grad_clip must be >= 0");
  require(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0 && cfg.beta2 >= 0.0 && cfg.beta2 < 1.0,
          "Adam betas must be in [0, 1)");
  require(cfg.adam_eps > 0.0, "adam_eps must be > 0");
  require(cfg.target_accuracy >= 0.0 && cfg.target_accuracy <= 1.0,
          "target_accuracy must be in [0, 1]");
  const Mode m = cfg.objective.mode;
  const CeBranch b = cfg.model.encoder.ce_branch;
  if (m == Mode::mtl_ce) require(b == CeBranch::mtl, "mode mtl-ce needs encoder.ce_branch = mtl");
  if (m == Mode::pt_ce_stage1)
    require(b == CeBranch::direct, "mode pt-ce-stage1 needs encoder.ce_branch = direct");
}

std::string to_json_text(const TrainConfig& cfg) { return encode_config(cfg).dump(2); }

TrainConfig from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw DataError(std::string("config: ") + e.what());
  }
  return decode_config(j);
}

TrainConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open config " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return from_json_text(ss.str());
}

void save_config(const TrainConfig& cfg, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write config " + path);
  os << to_json_text(cfg) << '\n';
}

void adam_update(std::span<double> param, std::span<const double> grad, Moments& mom,
                 double lr, double beta1, double beta2, double eps, std::uint64_t step) {
  require(step >= 1, "adam: step must be >= 1");
  require(grad.size() == param.size(), "adam: gradient shape differs from parameter");
  if (mom.m.size() != param.size()) mom.m.assign(param.size(), 0.0);
  if (mom.v.size() != param.size()) mom.v.assign(param.size(), 0.0);
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
  for (std::size_t k = 0; k < param.size(); ++k) {
    mom.m[k] = beta1 * mom.m[k] + (1.0 - beta1) * grad[k];
    mom.v[k] = beta2 * mom.v[k] + (1.0 - beta2) * grad[k] * grad[k];
    const double mhat = mom.m[k] / c1;
    const double vhat = mom.v[k] / c2;
    param[k] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

double clip_global_norm(ParamStore& params, const std::vector<std::string>& names,
                        double clip) {
  double sq = 0.0;
  for (const auto& n : names) {
    const Tensor& t = params.get(n);
    if (!t.has_grad()) continue;
    for (double g : t.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (clip > 0.0 && norm > clip) {
    const double s = clip / norm;
    for (const auto& n : names) {
      Tensor t = params.get(n);
      if (!t.has_grad()) continue;
      for (double& g : t.node()->grad) g *= s;
    }
  }
  return norm;
}

bool is_trainable(const TrainConfig& cfg, const std::string& name) {
  for (const auto& p : cfg.freeze)
    if (name.rfind(p, 0) == 0) return false;
  const bool ce_branch = name.rfind("enc.ce_out.", 0) == 0 || name.rfind("enc.mtl.ce_", 0) == 0;
  switch (cfg.objective.mode) {
    case Mode::pt_ce_stage1: return name.rfind("enc.", 0) == 0;
    case Mode::pt_ce_stage2: return !ce_branch;
    default: return true;
  }
}

StepReport adam_step(ParamStore& params, AdamState& state, const TrainConfig& cfg,
                     const std::function<bool(const std::string&)>& trainable) {
  std::vector<std::string> names;
  for (const auto& [n, _] : params.all())
    if (trainable(n)) names.push_back(n);
  StepReport rep;
  for (const auto& n : names) {
    const Tensor& t = params.get(n);
    if (t.has_grad() && !finite_all(t.grad())) {
      rep.grad_norm = std::numeric_limits<double>::quiet_NaN();
      return rep;
    }
  }
  rep.grad_norm = clip_global_norm(params, names, cfg.grad_clip);
  ++state.step;
  for (const auto& n : names) {
    Tensor t = params.get(n);
    const auto g = t.grad_or_zeros();
    adam_update(t.mutable_data(), g, state.moments[n], cfg.learning_rate, cfg.beta1,
                cfg.beta2, cfg.adam_eps, state.step);
  }
  rep.applied = true;
  return rep;
}

namespace {

struct Item {
  Tensor frames;
  std::vector<int> tokens, boundaries, align;
};

UtteranceLoss item_loss(const Model& model, const Item& it,
                        const objectives::ObjectiveConfig& obj, const RunOptions& run) {
  UtteranceLoss out;
  if (obj.mode == Mode::pt_ce_stage1) {
    EncoderOutput enc = model.encode(it.frames, run);
    out.loss = objectives::framewise_ce(enc.ce_logits, it.align);
    return out;
  }
  ForwardOptions fo;
  fo.run = run;
  if (objectives::uses_decot(obj.mode))
    fo.alignment_limit = objectives::decot_limits(it.boundaries, obj.delta);
  ForwardResult res = forward_teacher_forced(model, it.frames, it.tokens, fo);
  objectives::LossComponents c;
  c.s2s = mocha::label_smoothed_ce(res.logits, it.tokens, model.config().decoder.label_smoothing);
  if (objectives::uses_framewise_ce(obj.mode))
    c.framewise_ce = objectives::framewise_ce(res.enc.ce_logits, it.align);
  if (obj.quantity_active()) c.quantity = objectives::quantity_loss(res.alpha, it.tokens.size());
  if (objectives::uses_minlt(obj.mode)) {
    std::vector<int> target = it.boundaries;
    if (obj.zero_boundaries) std::fill(target.begin(), target.end(), 0);
    c.minlt = objectives::minlt_loss(res.alpha, target);
  }
  out.loss = objectives::total_loss(c, obj);
  const std::size_t k = res.logits.cols();
  for (std::size_t i = 0; i < it.tokens.size(); ++i) {
    auto row = res.logits.data().subspan(i * k, k);
    out.correct += (std::max_element(row.begin(), row.end()) - row.begin()) == it.tokens[i];
  }
  out.tokens = it.tokens.size();
  return out;
}

}  // namespace

UtteranceLoss utterance_loss(const Model& model, const data::Utterance& u,
                             const objectives::ObjectiveConfig& obj, const RunOptions& run) {
  const std::size_t stack = model.config().encoder.stack_factor;
  Item it{data::stack_frames(u.frames, stack), u.tokens, u.boundaries,
          data::stacked_align(u.align, stack)};
  return item_loss(model, it, obj, run);
}

Tensor batch_loss(const Model& model, const data::Batch& batch,
                  const objectives::ObjectiveConfig& obj, const RunOptions& run,
                  std::size_t* correct, std::size_t* tokens) {
  std::vector<Tensor> losses;
  for (std::size_t k = 0; k < batch.items; ++k) {
    Item it{batch.item_frames(k), batch.item_tokens(k), batch.item_boundaries(k),
            batch.item_align(k)};
    UtteranceLoss ul = item_loss(model, it, obj, run);
    if (correct) *correct += ul.correct;
    if (tokens) *tokens += ul.tokens;
    losses.push_back(ul.loss);
  }
  return mean(concat(losses));
}

std::string EpochLog::to_json_line() const {
  nlohmann::ordered_json j;
  j["epoch"] = epoch;
  j["loss"] = loss;
  j["token_acc"] = token_acc;
  j["latency_avg"] = latency_avg;
  j["latency_median"] = latency_median;
  j["latency_p90"] = latency_p90;
  j["latency_p99"] = latency_p99;
  j["heldout_ce"] = heldout_ce;
  j["skipped_steps"] = skipped_steps;
  return j.dump();
}

WarmStartReport warm_start(ParamStore& target, const ParamStore& source) {
  WarmStartReport rep;
  for (const auto& [name, t] : target.all()) {
    if (!source.contains(name)) {
      rep.missing.push_back(name);
      continue;
    }
    const Tensor& s = source.get(name);
    if (s.shape() != t.shape()) {
      rep.mismatched.push_back(name);
      continue;
    }
    Tensor dst = t;
    std::copy(s.data().begin(), s.data().end(), dst.mutable_data().begin());
    rep.loaded.push_back(name);
  }
  for (const auto& [name, _] : source.all())
    if (!target.contains(name)) rep.unexpected.push_back(name);
  return rep;
}

void round_to_float32(ParamStore& params) {
  for (const auto& [_, t] : params.all()) {
    Tensor p = t;
    for (double& v : p.mutable_data()) v = static_cast<double>(static_cast<float>(v));
  }
}

namespace {

void check_corpus(const TrainConfig& cfg, const data::Corpus& corpus, const char* which) {
  const auto& e = cfg.model.encoder;
  for (const auto& u : corpus) {
    data::validate(u, e.stack_factor);
    if (u.feature_dim() != e.feature_dim)
      throw DataError(std::string(which) + " utterance '" + u.id + "' has feature width " +
                      std::to_string(u.feature_dim()) + ", config expects " +
                      std::to_string(e.feature_dim));
    for (int y : u.tokens)
      if (y < 0 || static_cast<std::size_t>(y) >= cfg.model.decoder.vocab)
        throw DataError(std::string(which) + " utterance '" + u.id + "' has token " +
                        std::to_string(y) + " outside the vocabulary");
    if (e.ce_branch != CeBranch::none)
      for (int a : u.align)
        if (a < 0 || static_cast<std::size_t>(a) >= e.align_classes)
          throw DataError(std::string(which) + " utterance '" + u.id + "' has align label " +
                          std::to_string(a) + " outside [0, align_classes)");
  }
}

double heldout_framewise_ce(const Model& model, const data::Corpus& heldout) {
  ag::NoGradGuard guard;
  double total = 0.0;
  const std::size_t stack = model.config().encoder.stack_factor;
  for (const auto& u : heldout) {
    EncoderOutput enc = model.encode(data::stack_frames(u.frames, stack));
    total += objectives::framewise_ce(enc.ce_logits, data::stacked_align(u.align, stack)).item();
  }
  return total / static_cast<double>(heldout.size());
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const data::Corpus& train_set,
                  const data::Corpus& heldout, const Model* init,
                  const EpochCallback& on_epoch) {
  validate(cfg);
  require(!train_set.empty(), "train: empty training corpus");
  check_corpus(cfg, train_set, "training");
  check_corpus(cfg, heldout, "held-out");

  TrainResult result{init ? Model(cfg.model, init->params().clone()) : Model(cfg.model, cfg.seed),
                     {}, {}, std::nullopt};
  Model& model = result.model;
  if (!init && !cfg.warm_start.empty()) {
    auto ck = checkpoint::load(cfg.warm_start);
    result.warm = warm_start(model.params(), ck.params);
  }

  std::mt19937_64 order_rng(cfg.seed ^ 0x5eedULL);
  std::mt19937_64 noise_rng(cfg.seed + 0x9e3779b97f4a7c15ULL);
  RunOptions run{true, &noise_rng};
  auto trainable = [&](const std::string& n) { return is_trainable(cfg, n); };
  const bool stage1 = cfg.objective.mode == Mode::pt_ce_stage1;

  data::Corpus eval_set = heldout;
  if (cfg.eval_limit && eval_set.size() > cfg.eval_limit) eval_set.resize(cfg.eval_limit);

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  double best_ce = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), order_rng);
    EpochLog log;
    log.epoch = epoch;
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::vector<const data::Utterance*> items;
      for (std::size_t k = start; k < std::min(order.size(), start + cfg.batch_size); ++k)
        items.push_back(&train_set[order[k]]);
      data::Batch batch = data::batch_pad(items, cfg.model.encoder.stack_factor);
      model.params().zero_grad();
      Tensor loss = batch_loss(model, batch, cfg.objective, run);
      const double lv = loss.item();
      if (!std::isfinite(lv)) {
        ++log.skipped_steps;
        continue;
      }
      ag::backward(loss);
      if (!adam_step(model.params(), result.adam, cfg, trainable).applied) {
        ++log.skipped_steps;
        continue;
      }
      loss_sum += lv;
      ++batches;
    }
    if (batches == 0)
      throw NumericalError("epoch " + std::to_string(epoch) + ": every step was non-finite");
    log.loss = loss_sum / static_cast<double>(batches);
    if (!eval_set.empty()) {
      if (stage1) {
        log.heldout_ce = heldout_framewise_ce(model, eval_set);
      } else {
        auto ev = metrics::evaluate(model, eval_set, cfg.frame_ms, cfg.latency_include_eos);
        log.token_acc = ev.token_accuracy;
        log.latency_avg = ev.latency.corpus;
        log.latency_median = ev.latency.median;
        log.latency_p90 = ev.latency.p90;
        log.latency_p99 = ev.latency.p99;
      }
    }
    model.params().zero_grad();
    result.log.push_back(log);
    if (on_epoch) on_epoch(log);
    if (stage1 && !eval_set.empty()) {
      const bool improved = std::isfinite(best_ce)
                                ? (best_ce - log.heldout_ce) > cfg.stage1_min_improvement * best_ce
                                : true;
      best_ce = std::min(best_ce, log.heldout_ce);
      stale = improved ? 0 : stale + 1;
      if (stale >= cfg.stage1_patience) break;
    }
    if (!stage1 && !eval_set.empty() && cfg.target_accuracy > 0.0 &&
        log.token_acc >= cfg.target_accuracy)
      break;
  }
  return result;
}

}  // namespace mocha::training
