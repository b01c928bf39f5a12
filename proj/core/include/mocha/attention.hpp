#pragma once

#include <cstddef>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mocha/model.hpp"

// Monotonic chunkwise attention with convolution-enhanced keys.
namespace mocha::attention {

// One energy function: g * (v/|v|)^T ReLU(W_h (W_c * h)_j + W_s s + b) + r.
// Both the monotonic and the chunk energy use this form with separate values.
struct EnergyParams {
  Tensor conv;  // k x D x D, undefined when the convolution is disabled
  Tensor w_h, w_s, b, v, g, r;

  std::size_t lookahead() const { return conv.defined() ? conv.shape()[0] / 2 : 0; }
};

EnergyParams energy_params(const ParamStore& params, const std::string& prefix);

// Unit-norm copy of v. Throws ContractViolation when |v| = 0.
Tensor normalized(const Tensor& v);

// Per-frame keys W_h (W_c * h)_j, T' x attn_dim; independent of the query so
// they are computed once per utterance.
Tensor attention_keys(const Tensor& features, const EnergyParams& p);

// Energies over all frames for one query state given precomputed keys.
Tensor energy_from_keys(const Tensor& keys, const Tensor& query,
                        const EnergyParams& p);
Tensor monotonic_energy(const Tensor& features, const Tensor& query,
                        const EnergyParams& p);

// Scalar energy at one frame from a key row; matches energy_from_keys bit for bit.
double energy_at(std::span<const double> key, std::span<const double> query_proj,
                 std::span<const double> v_unit, double g, double r);

// sigmoid(e + noise) with noise ~ N(0, std^2) drawn only in training.
Tensor selection_probs(const Tensor& energies, bool training, double noise_std,
                       std::mt19937_64* rng);

// alpha_i from p_i and alpha_{i-1}. `keep`, when non-empty, zeroes positions
// with keep[j] == 0 (the zeroed mass is what feeds the next row).
Tensor expected_alignment_row(const Tensor& p, const Tensor& alpha_prev,
                              AlignmentAlgorithm algo, double clip_eps,
                              std::span<const double> keep = {});

// Initial alignment: all mass on the first frame.
Tensor alignment_prior(std::size_t frames);

// Full L x T' alignment from an L x T' probability matrix.
Tensor expected_alignment(const Tensor& p, double clip_eps = 1e-6,
                          AlignmentAlgorithm algo = AlignmentAlgorithm::scan);

// beta_j = sum_{k=j}^{j+w-1} alpha_k exp(u_j) / sum_{l=k-w+1}^{k} exp(u_l),
// windows truncated at the edges.
Tensor chunkwise_attention_row(const Tensor& alpha, const Tensor& chunk_energy,
                               std::size_t w);
Tensor chunkwise_attention(const Tensor& alpha, const Tensor& chunk_energies,
                           std::size_t w);

// c = sum_j beta_j h_j
Tensor context_vector(const Tensor& beta, const Tensor& h);

// Smallest j >= j_start with p[j] >= 0.5, or nullopt. Indices are 0-based.
std::optional<std::size_t> hard_alignment_step(std::span<const double> p_row,
                                               std::size_t j_start);

}  // namespace mocha::attention
