#pragma once

#include <cmath>
#include <stdexcept>

#include "rare/graph.hpp"

namespace rare {

/// Central-difference check of the analytic gradient of `output` with
/// respect to every element of the leaf `leaf`. Returns the maximum of
/// |analytic - numeric| / max(1, |analytic|). Only meaningful in double
/// precision.
template <typename S>
double finite_difference_check(Graph<S>& g, Value leaf, Value output, double step) {
  if (step < 1e-5 || step > 1e-2)
    throw std::invalid_argument("finite_difference_check: step outside [1e-5, 1e-2]");
  g.recompute();
  g.backward(output);
  std::vector<S> analytic = g.grad(leaf);

  double worst = 0.0;
  std::vector<S>& vals = g.mutable_values(leaf);
  for (size_t i = 0; i < vals.size(); ++i) {
    S orig = vals[i];
    vals[i] = orig + static_cast<S>(step);
    g.recompute();
    double fp = static_cast<double>(g.val(output).values[0]);
    vals[i] = orig - static_cast<S>(step);
    g.recompute();
    double fm = static_cast<double>(g.val(output).values[0]);
    vals[i] = orig;
    double numeric = (fp - fm) / (2.0 * step);
    double a = static_cast<double>(analytic[i]);
    double err = std::fabs(a - numeric) / std::max(1.0, std::fabs(a));
    worst = std::max(worst, err);
  }
  g.recompute();
  return worst;
}

}  // namespace rare
