#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>

#include "mocha/model.hpp"

namespace mocha::objectives {

enum class Mode {
  baseline,
  mtl_ce,
  pt_ce_stage1,
  pt_ce_stage2,
  decot,
  minlt,
  decot_minlt,
};

std::string to_string(Mode m);
Mode parse_mode(const std::string& s);

bool uses_decot(Mode m);
bool uses_minlt(Mode m);
bool uses_framewise_ce(Mode m);
bool needs_boundaries(Mode m);

struct ObjectiveConfig {
  Mode mode = Mode::baseline;
  double lambda_ce = 0.3;     // interpolation weight, [0, 1]
  double lambda_qua = 1.0;
  double lambda_minlt = 1.0;
  std::size_t delta = 16;     // acceptable latency in encoder frames
  // Unset: on for the DeCoT modes, off otherwise.
  std::optional<bool> quantity_loss;
  // Replace every gold boundary with 0 in the latency term.
  bool zero_boundaries = false;

  bool quantity_active() const;
};

void validate(const ObjectiveConfig& cfg);

// Mean framewise cross-entropy -1/T sum_j log q_j[a_j].
Tensor framewise_ce(const Tensor& ce_logits, std::span<const int> align);

// (1 - lambda) * L_s2s + lambda * L_ce
Tensor mtl_loss(const Tensor& s2s, const Tensor& ce_logits,
                std::span<const int> align, double lambda_ce);

// Expected alignment with alpha_{i,j} forced to 0 for 1-based j > b_i + delta.
// Boundaries are 1-based encoder frame indices.
Tensor decot_alignment(const Tensor& p, std::span<const int> boundaries,
                       std::size_t delta, double clip_eps = 1e-6,
                       AlignmentAlgorithm algo = AlignmentAlgorithm::scan);

// Per-token inclusive 0-based frame limit b_i + delta - 1 used by the
// masked recursion.
std::vector<std::size_t> decot_limits(std::span<const int> boundaries,
                                      std::size_t delta);

// |L - sum_i sum_j alpha_{i,j}|
Tensor quantity_loss(const Tensor& alpha, std::size_t tokens);

// 1/L sum_i |sum_j j * alpha_{i,j} - b_i| with 1-based frame indices.
Tensor minlt_loss(const Tensor& alpha, std::span<const int> boundaries);

struct LossComponents {
  Tensor s2s;
  Tensor framewise_ce;
  Tensor quantity;
  Tensor minlt;
};

// Composes the active terms for cfg.mode; throws ContractViolation when a
// needed component is missing.
Tensor total_loss(const LossComponents& c, const ObjectiveConfig& cfg);

}  // namespace mocha::objectives
