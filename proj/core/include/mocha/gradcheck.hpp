#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mocha/tensor.hpp"

namespace mocha::ag {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t entries_checked = 0;
  bool finite = true;
  bool passed = false;
  double effective_floor = 0.0;
};

// Compares backward() against central differences for every entry of every
// parameter. The relative error of one entry is
//   |analytic - numeric| / max(|analytic|, |numeric|, abs_floor)
// so that entries with vanishing gradient are judged on an absolute scale.
// The floor is raised to the rounding noise of the objective when that is larger.
// A non-finite objective marks the report as failed instead of throwing.
GradCheckReport finite_difference_check(const std::function<Tensor()>& f,
                                        const std::vector<NamedTensor>& params,
                                        double step, double tolerance,
                                        double abs_floor = 1e-6);

}  // namespace mocha::ag
