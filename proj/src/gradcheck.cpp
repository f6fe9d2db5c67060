#include "comen/gradcheck.hpp"

#include "comen/errors.hpp"

#include <algorithm>
#include <cmath>

namespace comen {

double finite_difference_check(const ScalarFn& fn, const Tensor& point, double step) {
  Tensor x(point.shape(), point.values(), true);
  return finite_difference_check([&] { return fn(x); }, std::vector<Tensor>{x}, step);
}

double finite_difference_check(const std::function<Tensor()>& fn, const std::vector<Tensor>& params, double step) {
  if (!(step > 0.0)) throw std::invalid_argument("finite_difference_check: step must be positive");
  for (Tensor p : params) p.zero_grad();
  const Tensor y = fn();
  if (y.size() != 1) throw GradError("finite_difference_check: fn must return a scalar");
  if (y.requires_grad()) backward(y);

  double worst = 0.0;
  for (Tensor p : params) {
    const Array analytic = p.has_grad() ? p.grad() : Array::Zero(p.size());
    const Array base = p.values();
    for (Index i = 0; i < base.size(); ++i) {
      Array probe = base;
      probe[i] = base[i] + step;
      p.assign(probe);
      const double up = fn().item();
      probe[i] = base[i] - step;
      p.assign(probe);
      const double down = fn().item();
      const double numeric = (up - down) / (2.0 * step);
      worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i])));
    }
    p.assign(base);
  }
  return worst;
}

}  // namespace comen
