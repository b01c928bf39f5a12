// Command-line front end: gen-data, train, eval-latency, decode, plot.

#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <iostream>
#include <sstream>

#include "json.hpp"

#include "mocha/checkpoint.hpp"
#include "mocha/data.hpp"
#include "mocha/decode.hpp"
#include "mocha/errors.hpp"
#include "mocha/metrics.hpp"
#include "mocha/plot.hpp"
#include "mocha/training.hpp"

namespace {

using namespace mocha;

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

struct Common {
  std::string config, data, ckpt, out;
  std::uint64_t seed = 1;
  bool seed_set = false;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "Training config (JSON)");
  app->add_option("--data", c.data, "Corpus (JSONL)");
  app->add_option("--ckpt", c.ckpt, "Checkpoint path");
  app->add_option("--out", c.out, "Output path");
  app->add_option_function<std::uint64_t>(
      "--seed", [&c](const std::uint64_t& s) { c.seed = s, c.seed_set = true; }, "Random seed");
}

std::string slurp(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// Fills data-dependent sizes the config leaves at their defaults.
void fit_to_data(training::TrainConfig& cfg, const data::Corpus& corpus) {
  if (corpus.empty()) throw DataError("corpus is empty");
  cfg.model.encoder.feature_dim = corpus[0].feature_dim();
  int max_token = 0, max_align = 0;
  for (const auto& u : corpus) {
    for (int y : u.tokens) max_token = std::max(max_token, y);
    for (int a : u.align) max_align = std::max(max_align, a);
  }
  cfg.model.decoder.vocab = std::max<std::size_t>(cfg.model.decoder.vocab, max_token + 1);
  if (cfg.model.encoder.align_classes == 0)
    cfg.model.encoder.align_classes = static_cast<std::size_t>(max_align) + 1;
}

int gen_data(const Common& c, data::TaskConfig task, std::size_t lookshift, std::size_t heldout,
             const std::string& heldout_path) {
  if (c.out.empty()) throw CLI::RequiredError("--out");
  if (c.seed_set) task.seed = c.seed;
  data::Corpus corpus = data::gen_lookahead_task(task, lookshift);
  if (heldout > 0) {
    if (heldout_path.empty()) throw CLI::RequiredError("--heldout-out");
    auto [eval, train] = data::split(corpus, heldout);
    data::write_jsonl(heldout_path, eval);
    data::write_jsonl(c.out, train);
  } else {
    data::write_jsonl(c.out, corpus);
  }
  std::cerr << "wrote " << corpus.size() << " utterances\n";
  return kOk;
}

int train_cmd(const Common& c, const std::string& mode, const std::string& warm,
              const std::string& heldout_path, const std::string& log_path, long epochs, double lr) {
  if (c.data.empty()) throw CLI::RequiredError("--data");
  if (c.ckpt.empty()) throw CLI::RequiredError("--ckpt");
  training::TrainConfig cfg = c.config.empty() ? training::TrainConfig{} : training::load_config(c.config);
  if (c.seed_set) cfg.seed = c.seed;
  if (epochs >= 0) cfg.epochs = static_cast<std::size_t>(epochs);
  if (lr > 0.0) cfg.learning_rate = lr;
  if (!warm.empty()) cfg.warm_start = warm;
  data::Corpus train_set = data::read_jsonl(c.data);
  data::Corpus heldout = heldout_path.empty() ? data::Corpus{} : data::read_jsonl(heldout_path);
  fit_to_data(cfg, train_set);

  std::ofstream log;
  if (!log_path.empty()) {
    log.open(log_path);
    if (!log) throw DataError("cannot write log " + log_path);
  }
  auto on_epoch = [&](const training::EpochLog& e) {
    std::cerr << e.to_json_line() << '\n';
    if (log) log << e.to_json_line() << '\n' << std::flush;
  };
  auto report_warm = [](const training::TrainResult& r) {
    if (!r.warm) return;
    std::cerr << "warm start: loaded " << r.warm->loaded.size() << " arrays\n";
    for (const auto& n : r.warm->missing) std::cerr << "  not in checkpoint: " << n << '\n';
    for (const auto& n : r.warm->unexpected) std::cerr << "  unused from checkpoint: " << n << '\n';
    for (const auto& n : r.warm->mismatched) std::cerr << "  shape mismatch: " << n << '\n';
  };

  if (mode == "pt-ce") {
    training::TrainConfig s1 = cfg;
    s1.model.encoder.ce_branch = CeBranch::direct;
    s1.objective.mode = objectives::Mode::pt_ce_stage1;
    auto r1 = training::train(s1, train_set, heldout, nullptr, on_epoch);
    report_warm(r1);
    training::TrainConfig s2 = s1;
    s2.objective.mode = objectives::Mode::pt_ce_stage2;
    s2.warm_start.clear();
    auto r2 = training::train(s2, train_set, heldout, &r1.model, on_epoch);
    training::round_to_float32(r2.model.params());
    checkpoint::save_model(c.ckpt, r2.model, s2, r2.adam);
    return kOk;
  }
  if (!mode.empty()) cfg.objective.mode = objectives::parse_mode(mode);
  if (cfg.objective.mode == objectives::Mode::mtl_ce) cfg.model.encoder.ce_branch = CeBranch::mtl;
  if (cfg.objective.mode == objectives::Mode::pt_ce_stage1)
    cfg.model.encoder.ce_branch = CeBranch::direct;
  if (!cfg.warm_start.empty() && cfg.model.encoder.ce_branch == CeBranch::none) {
    // Keep a CE branch the warm-start model was trained with.
    auto ck = checkpoint::load(cfg.warm_start);
    if (ck.config.model.encoder.ce_branch == CeBranch::direct) {
      cfg.model.encoder.ce_branch = CeBranch::direct;
      cfg.model.encoder.align_classes = ck.config.model.encoder.align_classes;
    }
  }
  auto r = training::train(cfg, train_set, heldout, nullptr, on_epoch);
  report_warm(r);
  training::round_to_float32(r.model.params());
  checkpoint::save_model(c.ckpt, r.model, cfg, r.adam);
  return kOk;
}

int eval_cmd(const Common& c, bool exclude_eos, const std::string& trace, std::size_t trace_index) {
  if (c.data.empty()) throw CLI::RequiredError("--data");
  if (c.ckpt.empty()) throw CLI::RequiredError("--ckpt");
  auto ck = checkpoint::load(c.ckpt);
  Model model(ck.config.model, std::move(ck.params));
  data::Corpus corpus = data::read_jsonl(c.data);
  auto ev = metrics::evaluate(model, corpus, ck.config.frame_ms, !exclude_eos);
  const std::string text = ev.latency.to_text();
  std::cout << text << '\n';
  std::cerr << "token_acc " << ev.token_accuracy << "  loss " << ev.mean_loss << '\n';
  if (!c.out.empty()) plot::write_text(c.out, text + "\n");
  if (!trace.empty()) {
    if (trace_index >= corpus.size()) throw DataError("--trace-index outside the corpus");
    decode::export_attention_trace(model, corpus[trace_index], trace);
  }
  return kOk;
}

int decode_cmd(const Common& c, std::size_t beam, std::size_t max_len, double length_penalty) {
  if (c.data.empty()) throw CLI::RequiredError("--data");
  if (c.ckpt.empty()) throw CLI::RequiredError("--ckpt");
  Model model = checkpoint::load_model(c.ckpt);
  data::Corpus corpus = data::read_jsonl(c.data);
  std::ofstream os;
  if (!c.out.empty()) {
    os.open(c.out);
    if (!os) throw DataError("cannot write " + c.out);
  }
  std::size_t errors = 0, ref_tokens = 0;
  for (const auto& u : corpus) {
    Tensor frames = data::stack_frames(u.frames, model.config().encoder.stack_factor);
    decode::Hypothesis best;
    if (beam <= 1) {
      best = decode::greedy_stream_decode(model, frames, max_len).best;
    } else {
      auto hyps = decode::beam_stream_decode(model, frames, {beam, max_len, length_penalty});
      best = hyps.front();
    }
    std::vector<int> ref(u.tokens.begin(), u.tokens.end() - 1);
    errors += metrics::edit_distance(decode::transcript(best), ref);
    ref_tokens += ref.size();
    if (os) {
      nlohmann::json j{{"id", u.id},
                       {"tokens", best.tokens},
                       {"boundaries", best.boundaries},
                       {"log_prob", best.log_prob}};
      os << j.dump() << '\n';
    }
  }
  std::cout << "token_error_rate "
            << (ref_tokens ? static_cast<double>(errors) / static_cast<double>(ref_tokens) : 0.0)
            << '\n';
  return kOk;
}

int plot_cmd(const Common& c, const std::vector<std::string>& inputs,
             const std::vector<std::string>& labels) {
  if (c.out.empty()) throw CLI::RequiredError("--out");
  if (inputs.empty()) throw CLI::RequiredError("--input");
  if (inputs.size() == 1 && inputs[0].size() > 4 &&
      inputs[0].compare(inputs[0].size() - 4, 4, ".csv") == 0) {
    auto alpha = plot::read_alignment_csv(inputs[0]);
    std::vector<int> predicted, gold;
    const std::string side = inputs[0].substr(0, inputs[0].size() - 4) + ".boundaries.json";
    if (std::ifstream(side)) {
      auto j = nlohmann::json::parse(slurp(side));
      predicted = j.at("predicted").get<std::vector<int>>();
      gold = j.at("gold").get<std::vector<int>>();
    }
    plot::write_alignment_svg(alpha, predicted, gold, c.out);
    return kOk;
  }
  std::vector<plot::Series> series;
  double frame_ms = 30.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto rep = metrics::LatencyReport::from_text(slurp(inputs[k]));
    if (rep.deltas.empty()) throw DataError(inputs[k] + ": report carries no per-token deltas");
    frame_ms = rep.frame_ms;
    series.push_back({k < labels.size() ? labels[k] : inputs[k], rep.pooled()});
  }
  plot::write_latency_histogram_svg(series, frame_ms, c.out);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Streaming monotonic chunkwise attention toolkit"};
  app.require_subcommand(1);
  Common common;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic corpus");
  data::TaskConfig task;
  std::size_t lookshift = 1, heldout = 0;
  std::string heldout_out;
  add_common(gen, common);
  gen->add_option("--utterances", task.utterances);
  gen->add_option("--symbols", task.symbols);
  gen->add_option("--token-alphabet", task.token_alphabet,
                  "modulus of the lookahead sum (default: --symbols)");
  gen->add_option("--min-duration", task.min_duration);
  gen->add_option("--max-duration", task.max_duration);
  gen->add_option("--min-tokens", task.min_tokens);
  gen->add_option("--max-tokens", task.max_tokens);
  gen->add_option("--noise", task.noise_std);
  gen->add_option("--stack", task.stack_factor);
  gen->add_option("--lookshift", lookshift, "0 gives the segmental task");
  gen->add_option("--heldout", heldout, "Leading utterances written to --heldout-out");
  gen->add_option("--heldout-out", heldout_out);

  auto* tr = app.add_subcommand("train", "Train a model");
  std::string mode, warm, tr_heldout, log_path;
  long epochs = -1;
  double lr = 0.0;
  add_common(tr, common);
  tr->add_option("--mode", mode, "baseline|mtl-ce|pt-ce|decot|minlt|decot-minlt");
  tr->add_option("--warm-start", warm);
  tr->add_option("--heldout", tr_heldout);
  tr->add_option("--log", log_path, "Per-epoch JSONL log");
  tr->add_option("--epochs", epochs);
  tr->add_option("--lr", lr);

  auto* ev = app.add_subcommand("eval-latency", "Teacher-forced latency report");
  bool exclude_eos = false;
  std::string trace;
  std::size_t trace_index = 0;
  add_common(ev, common);
  ev->add_flag("--exclude-eos", exclude_eos);
  ev->add_option("--trace", trace, "Export an attention trace to <stem>.csv/.svg");
  ev->add_option("--trace-index", trace_index);

  auto* dec = app.add_subcommand("decode", "Streaming decoding");
  std::size_t beam = 8, max_len = 64;
  double length_penalty = 0.0;
  add_common(dec, common);
  dec->add_option("--beam", beam);
  dec->add_option("--max-len", max_len);
  dec->add_option("--length-penalty", length_penalty);

  auto* pl = app.add_subcommand("plot", "Render traces or latency reports as SVG");
  std::vector<std::string> inputs, labels;
  add_common(pl, common);
  pl->add_option("--input", inputs, "Trace CSV or latency report(s)");
  pl->add_option("--label", labels, "Series labels for reports");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }
  try {
    if (*gen) return gen_data(common, task, lookshift, heldout, heldout_out);
    if (*tr) return train_cmd(common, mode, warm, tr_heldout, log_path, epochs, lr);
    if (*ev) return eval_cmd(common, exclude_eos, trace, trace_index);
    if (*dec) return decode_cmd(common, beam, max_len, length_penalty);
    if (*pl) return plot_cmd(common, inputs, labels);
  } catch (const CLI::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const ContractViolation& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return kNumeric;
  }
  return kUsage;
}
