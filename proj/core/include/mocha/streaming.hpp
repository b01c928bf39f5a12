#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "mocha/attention.hpp"
#include "mocha/model.hpp"

// Frame-by-frame inference engine. Encoder states and attention keys are
// computed on demand, and every input frame read is recorded.
namespace mocha::streaming {

class StreamingEncoder {
 public:
  // frames: T' x input_dim, already stacked.
  StreamingEncoder(const Model& model, const Tensor& frames);

  std::size_t frames() const { return t_; }
  std::size_t feature_dim() const { return feat_dim_; }
  std::size_t lookahead() const { return lookahead_; }

  const double* features(std::size_t j);
  const double* mono_key(std::size_t j);
  const double* chunk_key(std::size_t j);

  // Highest input row read so far, -1 before any read.
  long high_water() const { return high_water_; }
  // Highest input row needed by accesses since the last begin_probe().
  void begin_probe() { probe_ = -1; }
  long probe() const { return probe_; }

 private:
  void note(std::size_t input_row);
  void advance_encoder(std::size_t j);
  const double* key(std::size_t j, const attention::EnergyParams& p,
                    std::vector<double>& store, std::vector<char>& ready);

  const Model& model_;
  Tensor input_;
  std::size_t t_ = 0, feat_dim_ = 0, lookahead_ = 0;
  std::vector<GruParams> layers_;
  std::vector<std::vector<double>> hidden_;  // per layer, current state
  std::size_t encoded_ = 0;                  // frames with features ready
  std::vector<double> features_;             // T' x feat_dim
  attention::EnergyParams mono_, chunk_;
  std::vector<double> mono_keys_, chunk_keys_;
  std::vector<char> mono_ready_, chunk_ready_;
  long high_water_ = -1, probe_ = -1;
};

// Query-side constants of one energy function for a fixed decoder state.
struct Query {
  std::vector<double> proj;  // W_s s + b
  std::vector<double> v_unit;
  double g = 0.0, r = 0.0;
};

Query make_query(const attention::EnergyParams& p, const Tensor& state);

struct AttendResult {
  std::optional<std::size_t> boundary;  // 0-based fired frame
  Tensor context;                       // zero when nothing fired
  long max_read = -1;                   // highest input row consulted
};

// Scans for the first frame >= j_start whose selection probability reaches
// 0.5, then attends over the chunk of width w ending there.
AttendResult attend(StreamingEncoder& enc, const Model& model, const Tensor& state,
                    std::size_t j_start);

// Monotonic energy at frame j for a decoder state (inference path).
double mono_energy(StreamingEncoder& enc, const Model& model, const Tensor& state,
                   std::size_t j);

struct HardPass {
  std::vector<int> boundaries;  // 1-based, T' when not fired
  std::vector<long> max_read;
  Tensor logits;                // L x K
};

// Teacher-forced hard pass: gold previous tokens, hard boundaries.
HardPass teacher_forced_hard(const Model& model, const Tensor& frames,
                             const std::vector<int>& tokens);

}  // namespace mocha::streaming
