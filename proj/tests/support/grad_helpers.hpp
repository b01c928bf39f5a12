#pragma once

#include <gtest/gtest.h>

#include <functional>
#include <random>
#include <vector>

#include "mocha/gradcheck.hpp"
#include "mocha/ops.hpp"

namespace testing_support {

using mocha::ag::NamedTensor;
using mocha::ag::Tensor;

inline Tensor random_param(std::mt19937_64& rng, mocha::ag::Shape shape, double lo = -1.0,
                           double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(mocha::ag::shape_size(shape));
  for (auto& x : v) x = u(rng);
  return Tensor::parameter(std::move(shape), std::move(v));
}

inline void expect_grad_ok(const std::function<Tensor()>& f, const std::vector<NamedTensor>& ps) {
  auto rep = mocha::ag::finite_difference_check(f, ps, 1e-5, 1e-4);
  EXPECT_TRUE(rep.passed) << "worst " << rep.worst_param << "[" << rep.worst_index
                          << "] analytic " << rep.worst_analytic << " numeric "
                          << rep.worst_numeric << " rel " << rep.max_rel_error;
}

// Weighted sum so that every output entry gets a distinct upstream gradient.
inline Tensor probe(const Tensor& y) {
  std::vector<double> w(y.size());
  for (std::size_t k = 0; k < w.size(); ++k) w[k] = 0.3 + 0.17 * static_cast<double>(k % 7);
  return mocha::ag::sum(mocha::ag::mul(y, Tensor::constant(y.shape(), w)));
}

}  // namespace testing_support
