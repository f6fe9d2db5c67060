#pragma once

#include "comen/tensor.hpp"

#include <functional>
#include <vector>

namespace comen {

using ScalarFn = std::function<Tensor(const Tensor&)>;

/// Max over coordinates of |analytic - central difference| / max(1, |analytic|)
/// for a scalar-valued fn evaluated at `point`.
double finite_difference_check(const ScalarFn& fn, const Tensor& point, double step = 1e-5);

/// Same measure over every coordinate of several leaf parameters that `fn`
/// reads by closure. Parameters are perturbed in place and restored.
double finite_difference_check(const std::function<Tensor()>& fn, const std::vector<Tensor>& params,
                               double step = 1e-5);

}  // namespace comen
