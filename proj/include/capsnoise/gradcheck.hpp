#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>

#include "capsnoise/tensor.hpp"

namespace capsnoise {

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate of x.
template <class F>
  requires std::invocable<F&, const Tensor&>
Tensor finite_difference_grad(F&& f, const Tensor& x, double step = 1e-5) {
  Tensor grad = zeros_like(x);
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + step;
    const double up = f(static_cast<const Tensor&>(probe));
    probe[i] = x[i] - step;
    const double down = f(static_cast<const Tensor&>(probe));
    probe[i] = x[i];
    grad[i] = (up - down) / (2.0 * step);
  }
  return grad;
}

/// Norm-wise relative error ||a - b|| / max(||a||, ||b||). Pairs whose norms are
/// both below `floor` are treated as agreeing (both numerically zero).
inline double relative_error(const Tensor& analytic, const Tensor& numeric, double floor = 1e-10) {
  analytic.require_same_shape(numeric, "relative_error");
  const double diff = std::sqrt(squared_norm(analytic - numeric));
  const double scale = std::max(std::sqrt(squared_norm(analytic)), std::sqrt(squared_norm(numeric)));
  if (scale < floor) return 0.0;
  return diff / scale;
}

}  // namespace capsnoise
