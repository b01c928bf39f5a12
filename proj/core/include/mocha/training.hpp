#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mocha/data.hpp"
#include "mocha/model.hpp"
#include "mocha/objectives.hpp"

namespace mocha::training {

struct TrainConfig {
  ModelConfig model;
  objectives::ObjectiveConfig objective;
  double learning_rate = 1e-3;
  std::size_t batch_size = 8;
  std::size_t epochs = 10;
  double grad_clip = 5.0;
  std::uint64_t seed = 1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::string warm_start;           // checkpoint path, empty for none
  std::vector<std::string> freeze;  // extra frozen name prefixes
  // PT-CE stage 1 stops once held-out framewise CE improves by less than
  // stage1_min_improvement (relative) for stage1_patience epochs in a row.
  double stage1_min_improvement = 1e-3;
  std::size_t stage1_patience = 3;
  double frame_ms = 30.0;
  bool latency_include_eos = true;
  std::size_t eval_limit = 0;  // held-out utterances scored per epoch, 0 = all
  double target_accuracy = 0.0;  // stop once held-out accuracy reaches it, 0 = off
};

void validate(const TrainConfig& cfg);

// JSON text mirroring the TrainConfig field names, nested by section.
std::string to_json_text(const TrainConfig& cfg);
TrainConfig from_json_text(const std::string& text);
TrainConfig load_config(const std::string& path);
void save_config(const TrainConfig& cfg, const std::string& path);

struct Moments {
  std::vector<double> m, v;
};

struct AdamState {
  std::uint64_t step = 0;
  std::map<std::string, Moments> moments;
};

// One bias-corrected Adam update of a single array at timestep `step` (>= 1).
void adam_update(std::span<double> param, std::span<const double> grad, Moments& mom,
                 double lr, double beta1, double beta2, double eps, std::uint64_t step);

struct StepReport {
  bool applied = false;  // false when a gradient was non-finite
  double grad_norm = 0.0;  // before clipping
};

// Clips the global gradient norm of the trainable parameters to `clip`
// (0 disables) and applies Adam to them. Non-finite gradients skip the step.
StepReport adam_step(ParamStore& params, AdamState& state, const TrainConfig& cfg,
                     const std::function<bool(const std::string&)>& trainable);

// Scales the gradients of `names` so that their joint norm is at most clip;
// returns the norm before scaling.
double clip_global_norm(ParamStore& params, const std::vector<std::string>& names,
                        double clip);

// True when cfg's mode and freeze list allow updating parameter `name`.
bool is_trainable(const TrainConfig& cfg, const std::string& name);

// Per-utterance objective for cfg.objective. Returns the scalar loss and the
// number of tokens whose teacher-forced argmax matched the target.
struct UtteranceLoss {
  Tensor loss;
  std::size_t correct = 0;
  std::size_t tokens = 0;
};

UtteranceLoss utterance_loss(const Model& model, const data::Utterance& u,
                             const objectives::ObjectiveConfig& obj, const RunOptions& run);

// Mean of the per-utterance losses.
Tensor batch_loss(const Model& model, const data::Batch& batch,
                  const objectives::ObjectiveConfig& obj, const RunOptions& run,
                  std::size_t* correct = nullptr, std::size_t* tokens = nullptr);

struct EpochLog {
  std::size_t epoch = 0;
  double loss = 0.0;           // mean training loss
  double token_acc = 0.0;      // held-out teacher-forced accuracy
  double latency_avg = 0.0;    // held-out corpus latency
  double latency_median = 0.0;
  double latency_p90 = 0.0;
  double latency_p99 = 0.0;
  double heldout_ce = 0.0;     // framewise CE, PT-CE stage 1 only
  std::size_t skipped_steps = 0;

  std::string to_json_line() const;
};

struct WarmStartReport {
  std::vector<std::string> loaded;
  std::vector<std::string> missing;     // in the model, absent from the source
  std::vector<std::string> unexpected;  // in the source, unused by the model
  std::vector<std::string> mismatched;  // present with a different shape
};

// Copies every parameter present in both stores with equal shape.
WarmStartReport warm_start(ParamStore& target, const ParamStore& source);

struct TrainResult {
  Model model;
  AdamState adam;
  std::vector<EpochLog> log;
  std::optional<WarmStartReport> warm;
};

using EpochCallback = std::function<void(const EpochLog&)>;

// Runs cfg.epochs epochs of shuffled mini-batches. `init`, when given,
// replaces the random initialization (its parameters are copied).
TrainResult train(const TrainConfig& cfg, const data::Corpus& train_set,
                  const data::Corpus& heldout, const Model* init = nullptr,
                  const EpochCallback& on_epoch = {});

// Rounds every parameter to the nearest float32 value.
void round_to_float32(ParamStore& params);

}  // namespace mocha::training
