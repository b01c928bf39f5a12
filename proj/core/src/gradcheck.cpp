#include "mocha/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mocha/errors.hpp"

namespace mocha::ag {

GradCheckReport finite_difference_check(const std::function<Tensor()>& f,
                                        const std::vector<NamedTensor>& params,
                                        double step, double tolerance,
                                        double abs_floor) {
  require(step > 0.0, "finite_difference_check: step must be positive");
  GradCheckReport rep;

  for (const auto& p : params) {
    auto t = p.tensor;
    t.zero_grad();
  }
  Tensor root = f();
  if (!std::isfinite(root.item())) {
    rep.finite = false;
    return rep;
  }
  backward(root);
  // Central differences cannot resolve anything below the rounding error of
  // the two evaluations, roughly eps |f| / step, so entries whose gradient is
  // that small are compared on an absolute scale.
  const double roundoff = 10.0 * std::numeric_limits<double>::epsilon() *
                          std::max(1.0, std::fabs(root.item())) / step;
  rep.effective_floor = std::max(abs_floor, roundoff / tolerance);

  for (const auto& p : params) {
    Tensor t = p.tensor;
    const std::vector<double> analytic = t.grad_or_zeros();
    auto data = t.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double orig = data[i];
      double fp = 0.0, fm = 0.0;
      {
        NoGradGuard guard;
        data[i] = orig + step;
        fp = f().item();
        data[i] = orig - step;
        fm = f().item();
        data[i] = orig;
      }
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        rep.finite = false;
        return rep;
      }
      const double numeric = (fp - fm) / (2.0 * step);
      const double denom =
          std::max({std::fabs(analytic[i]), std::fabs(numeric), rep.effective_floor});
      const double rel = std::fabs(analytic[i] - numeric) / denom;
      ++rep.entries_checked;
      if (rel > rep.max_rel_error || rep.worst_param.empty()) {
        if (rel >= rep.max_rel_error) {
          rep.max_rel_error = rel;
          rep.worst_param = p.name;
          rep.worst_index = i;
          rep.worst_analytic = analytic[i];
          rep.worst_numeric = numeric;
        }
      }
    }
  }
  rep.passed = rep.finite && rep.max_rel_error <= tolerance;
  return rep;
}

}  // namespace mocha::ag
