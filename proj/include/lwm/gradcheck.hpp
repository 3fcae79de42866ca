#pragma once

#include <cmath>
#include <stdexcept>
#include <utility>

#include "lwm/tensor.hpp"

namespace lwm {

/// Compares an analytic gradient against central differences.
/// f(x) must return {value, gradient-with-x's-shape}; only the value is used
/// at the perturbed points. Returns
///   max_i |analytic_i - central_i| / max(|analytic_i|, |central_i|, floor).
/// The floor keeps finite-difference noise on (near-)zero entries from being
/// scored as a relative error.
template <typename F>
double check_gradient(F&& f, Tensord x, double step = 1e-5, double floor = 1e-6) {
  auto [value, analytic] = f(x);
  if (!std::isfinite(value)) throw std::runtime_error("check_gradient: non-finite f(x)");
  if (!analytic.same_shape(x))
    throw std::invalid_argument("check_gradient: gradient shape mismatch");
  double worst = 0.0;
  for (Index i = 0; i < x.numel(); ++i) {
    const double orig = x[i];
    x[i] = orig + step;
    const double fp = f(x).first;
    x[i] = orig - step;
    const double fm = f(x).first;
    x[i] = orig;
    const double central = (fp - fm) / (2.0 * step);
    const double err = std::abs(analytic[i] - central) /
                       std::max({std::abs(analytic[i]), std::abs(central), floor});
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace lwm
