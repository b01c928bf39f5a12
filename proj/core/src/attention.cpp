#include "mocha/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mocha/errors.hpp"
#include "mocha/kernels.hpp"

namespace mocha::attention {

using namespace ag;

EnergyParams energy_params(const ParamStore& params, const std::string& prefix) {
  EnergyParams p;
  if (params.contains(prefix + ".conv")) p.conv = params.get(prefix + ".conv");
  p.w_h = params.get(prefix + ".w_h");
  p.w_s = params.get(prefix + ".w_s");
  p.b = params.get(prefix + ".b");
  p.v = params.get(prefix + ".v");
  p.g = params.get(prefix + ".g");
  p.r = params.get(prefix + ".r");
  return p;
}

Tensor normalized(const Tensor& v) { return normalize(v); }

Tensor attention_keys(const Tensor& features, const EnergyParams& p) {
  Tensor x = p.conv.defined() ? conv1d_same(features, p.conv) : features;
  return linear(x, p.w_h);
}

Tensor energy_from_keys(const Tensor& keys, const Tensor& query,
                        const EnergyParams& p) {
  Tensor q = linear_vec(query, p.w_s, p.b);
  Tensor act = relu(add_row(keys, q));
  return add_scalar(mul_scalar(matvec(act, normalized(p.v)), p.g), p.r);
}

Tensor monotonic_energy(const Tensor& features, const Tensor& query,
                        const EnergyParams& p) {
  return energy_from_keys(attention_keys(features, p), query, p);
}

double energy_at(std::span<const double> key, std::span<const double> query_proj,
                 std::span<const double> v_unit, double g, double r) {
  const std::size_t n = key.size();
  double buf[256];
  std::vector<double> heap;
  double* z = buf;
  if (n > 256) {
    heap.resize(n);
    z = heap.data();
  }
  for (std::size_t a = 0; a < n; ++a) {
    const double s = key[a] + query_proj[a];
    z[a] = s > 0.0 ? s : 0.0;
  }
  return kernels::dot(z, v_unit.data(), n) * g + r;
}

Tensor selection_probs(const Tensor& energies, bool training, double noise_std,
                       std::mt19937_64* rng) {
  if (!training || noise_std <= 0.0) return sigmoid(energies);
  require(rng != nullptr, "selection_probs: training noise needs an RNG");
  std::normal_distribution<double> dist(0.0, noise_std);
  std::vector<double> noise(energies.size());
  for (auto& v : noise) v = dist(*rng);
  return sigmoid(add(energies, Tensor::constant(energies.shape(), std::move(noise))));
}

Tensor alignment_prior(std::size_t frames) {
  std::vector<double> v(frames, 0.0);
  if (frames) v[0] = 1.0;
  return Tensor::vector(std::move(v));
}

Tensor expected_alignment_row(const Tensor& p, const Tensor& alpha_prev,
                              AlignmentAlgorithm algo, double clip_eps,
                              std::span<const double> keep) {
  require(p.dim() == 1 && p.shape() == alpha_prev.shape(),
          "expected_alignment_row: p and alpha_prev must be equal-length vectors");
  const std::size_t t = p.size();
  Tensor one_minus_p = add_const(scale(p, -1.0), 1.0);
  Tensor alpha;
  if (algo == AlignmentAlgorithm::scan) {
    // q_j = (1 - p_{j-1}) q_{j-1} + alpha_prev_j, alpha_j = p_j q_j
    Tensor decay = t > 1 ? concat({Tensor::vector({0.0}), slice(one_minus_p, 0, t - 1)})
                         : Tensor::vector({0.0});
    alpha = mul(p, linear_scan(decay, alpha_prev));
  } else {
    Tensor cp = cumprod_exclusive(one_minus_p);
    Tensor p_clip = clamp(p, clip_eps, 1.0 - clip_eps);
    Tensor cp_den = cumprod_exclusive(add_const(scale(p_clip, -1.0), 1.0));
    alpha = mul(mul(p, cp), cumsum(div(alpha_prev, cp_den)));
  }
  if (!keep.empty()) {
    require(keep.size() == t, "expected_alignment_row: keep mask length mismatch");
    alpha = mask(alpha, keep);
  }
  return alpha;
}

Tensor expected_alignment(const Tensor& p, double clip_eps, AlignmentAlgorithm algo) {
  require(p.dim() == 2, "expected_alignment: p must be L x T");
  Tensor prev = alignment_prior(p.cols());
  std::vector<Tensor> rows;
  for (std::size_t i = 0; i < p.rows(); ++i) {
    prev = expected_alignment_row(row(p, i), prev, algo, clip_eps);
    rows.push_back(prev);
  }
  return stack_rows(rows);
}

Tensor chunkwise_attention_row(const Tensor& alpha, const Tensor& chunk_energy,
                               std::size_t w) {
  require(w >= 1, "chunkwise_attention: chunk width must be >= 1");
  require(alpha.dim() == 1 && alpha.shape() == chunk_energy.shape(),
          "chunkwise_attention: alpha and energies must be equal-length vectors");
  if (w == 1) return alpha;
  // exp(u - max) keeps every term <= 1; the shift cancels in the ratio.
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : chunk_energy.data()) mx = std::max(mx, v);
  Tensor ex = exp(add_const(chunk_energy, -mx));
  Tensor denom = clamp(moving_sum_trailing(ex, w), std::numeric_limits<double>::min(),
                       std::numeric_limits<double>::infinity());
  return mul(ex, moving_sum(div(alpha, denom), w));
}

Tensor chunkwise_attention(const Tensor& alpha, const Tensor& chunk_energies,
                           std::size_t w) {
  require(alpha.dim() == 2 && alpha.shape() == chunk_energies.shape(),
          "chunkwise_attention: alpha and energies must have equal L x T shape");
  std::vector<Tensor> rows;
  for (std::size_t i = 0; i < alpha.rows(); ++i)
    rows.push_back(chunkwise_attention_row(row(alpha, i), row(chunk_energies, i), w));
  return stack_rows(rows);
}

Tensor context_vector(const Tensor& beta, const Tensor& h) {
  require(beta.dim() == 1 && h.dim() == 2 && beta.size() == h.rows(),
          "context_vector: beta length must equal the number of frames");
  return vecmat(beta, h);
}

std::optional<std::size_t> hard_alignment_step(std::span<const double> p_row,
                                               std::size_t j_start) {
  for (std::size_t j = j_start; j < p_row.size(); ++j)
    if (p_row[j] >= 0.5) return j;
  return std::nullopt;
}

}  // namespace mocha::attention
