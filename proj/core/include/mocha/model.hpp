#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mocha/ops.hpp"
#include "mocha/tensor.hpp"

namespace mocha {

using ag::Tensor;

inline constexpr int kPad = 0;
inline constexpr int kEos = 1;

enum class CeBranch {
  none,    // no framewise classifier
  direct,  // softmax layer straight on top of the encoder (pre-training)
  mtl,     // two bottleneck projections, CE head on one, both concatenated
};

struct EncoderConfig {
  std::size_t layers = 2;
  std::size_t hidden = 64;
  std::size_t feature_dim = 16;  // raw per-frame features before stacking
  std::size_t stack_factor = 1;
  CeBranch ce_branch = CeBranch::none;
  std::size_t bottleneck_dim = 0;  // 0 selects hidden / 2
  std::size_t align_classes = 0;   // framewise label alphabet
  bool layer_norm = true;
  double dropout = 0.1;

  std::size_t input_dim() const { return feature_dim * stack_factor; }
  std::size_t bottleneck() const { return bottleneck_dim ? bottleneck_dim : hidden / 2; }
  std::size_t output_dim() const {
    return ce_branch == CeBranch::mtl ? 2 * bottleneck() : hidden;
  }
};

struct DecoderConfig {
  std::size_t layers = 1;
  std::size_t hidden = 64;
  std::size_t embed_dim = 32;
  std::size_t vocab = 18;  // includes PAD=0 and EOS=1
  std::size_t readout_dim = 0;  // tanh layer on [s; c] before the softmax, 0 = none
  double label_smoothing = 0.2;
  bool layer_norm = true;
  double dropout = 0.1;
};

enum class AlignmentAlgorithm {
  scan,        // division-free linear recurrence
  cumulative,  // cumprod / cumsum closed form with clipped denominators
};

struct AttentionConfig {
  std::size_t attn_dim = 32;
  std::size_t conv_kernel = 5;  // 0 disables the key convolution
  std::size_t chunk_width = 4;
  double clip_eps = 1e-6;
  double noise_std = 1.0;
  bool noise = true;
  double r_init = -4.0;
  AlignmentAlgorithm algorithm = AlignmentAlgorithm::scan;
};

struct ModelConfig {
  EncoderConfig encoder;
  DecoderConfig decoder;
  AttentionConfig attention;
};

void validate(const ModelConfig& cfg);

// Named parameter collection with deterministic (sorted) iteration order.
class ParamStore {
 public:
  Tensor& add(const std::string& name, ag::Shape shape, std::vector<double> values);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) > 0; }
  const std::map<std::string, Tensor>& all() const { return params_; }
  std::vector<std::string> names() const;
  std::size_t total_size() const;
  void zero_grad();
  // Deep copy with fresh leaf tensors.
  ParamStore clone() const;

 private:
  std::map<std::string, Tensor> params_;
};

struct GruParams {
  Tensor w_ih, b_ih, w_hh, b_hh;
  Tensor ln_gain, ln_bias;  // undefined when layer norm is off
};

// One recurrent update followed by layer normalization.
Tensor gru_step(const Tensor& x, const Tensor& h, const GruParams& p);
// Same update when the input projection gx = W_ih x + b_ih is precomputed.
Tensor gru_step_projected(const Tensor& gx, const Tensor& h, const GruParams& p);

struct RunOptions {
  bool training = false;
  std::mt19937_64* rng = nullptr;  // required when training
};

struct EncoderOutput {
  Tensor states;        // T' x hidden, top GRU layer
  Tensor ce_logits;     // T' x K_align, undefined without a CE branch
  Tensor s2s_features;  // T' x output_dim
};

struct DecoderState {
  std::vector<Tensor> layers;
  const Tensor& top() const { return layers.back(); }
};

// The label-smoothed cross-entropy over the decoder outputs.
Tensor label_smoothed_ce(const Tensor& logits, std::span<const int> targets,
                         double eps);

class Model {
 public:
  Model(ModelConfig cfg, std::uint64_t seed);
  Model(ModelConfig cfg, ParamStore params);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  GruParams encoder_layer(std::size_t l) const;
  GruParams decoder_layer(std::size_t l) const;

  // frames: T' x input_dim (already stacked). Strictly left-to-right.
  EncoderOutput encode(const Tensor& frames, const RunOptions& run = {}) const;

  DecoderState initial_state() const;
  // Feeds [embed(y_prev); context_prev] through the decoder GRU stack.
  DecoderState advance(int y_prev, const Tensor& context_prev,
                       const DecoderState& state, const RunOptions& run = {}) const;
  // Logits over the vocabulary from the top decoder state and the context.
  Tensor readout(const DecoderState& state, const Tensor& context) const;

  // advance() followed by readout() with the supplied context.
  std::pair<DecoderState, Tensor> decode_step(int y_prev, const DecoderState& state,
                                              const Tensor& context,
                                              const RunOptions& run = {}) const;

 private:
  void init_params(std::uint64_t seed);
  void check_params() const;

  ModelConfig cfg_;
  ParamStore params_;
};

// Result of a teacher-forced soft (marginalized) pass.
struct ForwardResult {
  EncoderOutput enc;
  Tensor logits;  // L x K
  Tensor p;       // L x T' selection probabilities
  Tensor alpha;   // L x T'
  Tensor beta;    // L x T'
  std::vector<Tensor> alpha_rows;
};

struct ForwardOptions {
  RunOptions run;
  // Optional per-token inclusive upper frame index (0-based) beyond which
  // alignment mass is removed during marginalization.
  std::vector<std::size_t> alignment_limit;
};

// Runs encoder, monotonic chunkwise attention and decoder with gold previous
// tokens. `tokens` is the EOS-terminated target sequence.
ForwardResult forward_teacher_forced(const Model& model, const Tensor& frames,
                                     std::span<const int> tokens,
                                     const ForwardOptions& opt = {});

}  // namespace mocha
