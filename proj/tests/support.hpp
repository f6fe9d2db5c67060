#pragma once

#include "comen/tensor.hpp"

#include <random>

namespace comen::testing {

inline Tensor random_tensor(std::mt19937_64& rng, Shape shape, double lo = -1.0, double hi = 1.0,
                            bool requires_grad = false) {
  std::uniform_real_distribution<double> u(lo, hi);
  Array v(numel(shape));
  for (Index i = 0; i < v.size(); ++i) v[i] = u(rng);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

// Random row-stochastic B x M matrix with entries bounded away from zero.
inline Tensor random_assignments(std::mt19937_64& rng, Index rows, Index cols) {
  std::uniform_real_distribution<double> u(0.1, 1.0);
  Array v(rows * cols);
  for (Index i = 0; i < rows; ++i) {
    double total = 0.0;
    for (Index m = 0; m < cols; ++m) total += v[i * cols + m] = u(rng);
    for (Index m = 0; m < cols; ++m) v[i * cols + m] /= total;
  }
  return Tensor({rows, cols}, std::move(v));
}

}  // namespace comen::testing
