#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "mocha/tensor.hpp"

// Differentiable primitives. Vectors are 1-D tensors, matrices are 2-D and
// row-major. Unless stated otherwise binary ops require identical shapes.
namespace mocha::ag {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double c);
Tensor add_const(const Tensor& x, double c);
// x * s and x + s for a one-element tensor s.
Tensor mul_scalar(const Tensor& x, const Tensor& s);
Tensor add_scalar(const Tensor& x, const Tensor& s);
// Elementwise product with a constant (no gradient to the mask).
Tensor mask(const Tensor& x, std::span<const double> m);

Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor relu(const Tensor& x);  // subgradient 0 at 0
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor abs(const Tensor& x);  // subgradient 0 at 0
// Gradient passes only where lo < x < hi.
Tensor clamp(const Tensor& x, double lo, double hi);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor dot(const Tensor& a, const Tensor& b);
Tensor l2_norm(const Tensor& x);
// x / |x|; throws ContractViolation when |x| = 0.
Tensor normalize(const Tensor& x);

Tensor concat(const std::vector<Tensor>& parts);       // 1-D pieces
Tensor stack_rows(const std::vector<Tensor>& rows);    // equal-length 1-D
// [A | B] for matrices with equal row counts
Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor row(const Tensor& m, std::size_t r);
Tensor slice(const Tensor& x, std::size_t start, std::size_t len);

// W (m x n) . x (n) -> m
Tensor matvec(const Tensor& w, const Tensor& x);
// x (m) . M (m x n) -> n, i.e. M^T x
Tensor vecmat(const Tensor& x, const Tensor& m);
// X (T x n) W^T (+ b) -> T x m, W is (m x n)
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor linear(const Tensor& x, const Tensor& w);
// W x + b for a single vector
Tensor linear_vec(const Tensor& x, const Tensor& w, const Tensor& b);
// M (T x n) + v (n) broadcast over rows
Tensor add_row(const Tensor& m, const Tensor& v);

Tensor softmax(const Tensor& x);      // 1-D
Tensor log_softmax(const Tensor& x);  // 1-D, or row-wise on 2-D

// out[j] = sum_{k<=j} x[k]
Tensor cumsum(const Tensor& x);
// out[j] = prod_{l<j} x[l], out[0] = 1. The gradient is a reverse re-scan
// with no division, so zero entries are safe.
Tensor cumprod_exclusive(const Tensor& x);
// out[j] = sum_{k=j}^{min(j+w-1, T-1)} x[k]
Tensor moving_sum(const Tensor& x, std::size_t w);
// out[j] = sum_{k=max(0, j-w+1)}^{j} x[k]
Tensor moving_sum_trailing(const Tensor& x, std::size_t w);
// First-order linear recurrence q[j] = decay[j] * q[j-1] + input[j], q[-1] = 0.
Tensor linear_scan(const Tensor& decay, const Tensor& input);

// Same-length zero-padded convolution over time, X (T x din),
// W (k x dout x din) with k odd -> T x dout.
Tensor conv1d_same(const Tensor& x, const Tensor& w);

// Fused GRU cell, see kernels::gru_cell. gx (3H), h (H), w_hh (3H x H), b_hh (3H).
Tensor gru_cell(const Tensor& gx, const Tensor& h, const Tensor& w_hh,
                const Tensor& b_hh);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);

// Inverted dropout with a freshly drawn constant mask.
Tensor dropout(const Tensor& x, double rate, std::mt19937_64& rng);

// Mean over rows with weight[r] > 0 of the cross-entropy between
// softmax(logits[r]) and the smoothed one-hot target (1 - eps on the target,
// eps / (K - 1) elsewhere). Returns 0 when every row is masked.
Tensor label_smoothed_ce(const Tensor& logits, std::span<const int> targets,
                         double eps, std::span<const double> weight = {});

}  // namespace mocha::ag
