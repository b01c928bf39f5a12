#pragma once

// Plain forward kernels shared by the differentiable ops and the streaming
// inference engine. Both paths call the same routines so that their results
// agree bit for bit.

#include <cmath>
#include <cstddef>
#include <span>

namespace mocha::kernels {

inline double dot(const double* a, const double* b, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

// y[o] = W[o,:] . x + b[o]; W is (out x in) row-major, b may be null.
inline void affine(const double* w, const double* b, const double* x,
                   double* y, std::size_t out, std::size_t in) {
  for (std::size_t o = 0; o < out; ++o)
    y[o] = dot(w + o * in, x, in) + (b ? b[o] : 0.0);
}

// GRU cell in the reset-after-matmul form:
//   r = sig(gx_r + Wr h + br), z = sig(gx_z + Wz h + bz)
//   n = tanh(gx_n + r * (Wn h + bn)),  h' = (1 - z) * n + z * h
// gx holds the input projection (3H), w_hh is (3H x H), b_hh is 3H.
// gh receives W_hh h + b_hh (3H) for reuse by the backward pass.
inline void gru_cell(const double* gx, const double* h, const double* w_hh,
                     const double* b_hh, std::size_t hidden, double* gh,
                     double* r, double* z, double* n, double* out) {
  affine(w_hh, b_hh, h, gh, 3 * hidden, hidden);
  for (std::size_t k = 0; k < hidden; ++k) {
    r[k] = sigmoid(gx[k] + gh[k]);
    z[k] = sigmoid(gx[hidden + k] + gh[hidden + k]);
    n[k] = std::tanh(gx[2 * hidden + k] + r[k] * gh[2 * hidden + k]);
    out[k] = (1.0 - z[k]) * n[k] + z[k] * h[k];
  }
}

// Per-vector layer normalization with learned gain and bias. Writes the
// normalized-but-unscaled values to xhat and returns 1/sqrt(var + eps).
inline double layer_norm(const double* x, const double* gain,
                         const double* bias, std::size_t n, double eps,
                         double* xhat, double* out) {
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += x[i];
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (std::size_t i = 0; i < n; ++i) var += (x[i] - mean) * (x[i] - mean);
  var /= static_cast<double>(n);
  double inv = 1.0 / std::sqrt(var + eps);
  for (std::size_t i = 0; i < n; ++i) {
    xhat[i] = (x[i] - mean) * inv;
    out[i] = xhat[i] * gain[i] + bias[i];
  }
  return inv;
}

// Same-length zero-padded 1D convolution at one position.
// x is (T x din), w is (k x dout x din); out receives dout values.
inline void conv1d_at(const double* x, std::size_t frames, std::size_t din,
                      const double* w, std::size_t k, std::size_t dout,
                      std::size_t j, double* out) {
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(k / 2);
  for (std::size_t o = 0; o < dout; ++o) out[o] = 0.0;
  for (std::size_t t = 0; t < k; ++t) {
    std::ptrdiff_t src = static_cast<std::ptrdiff_t>(j) + static_cast<std::ptrdiff_t>(t) - half;
    if (src < 0 || src >= static_cast<std::ptrdiff_t>(frames)) continue;
    const double* xs = x + static_cast<std::size_t>(src) * din;
    const double* wt = w + t * dout * din;
    for (std::size_t o = 0; o < dout; ++o) out[o] += dot(wt + o * din, xs, din);
  }
}

}  // namespace mocha::kernels
