#include "comen/layers.hpp"

#include "comen/ops.hpp"

#include <cmath>

namespace comen {

Tensor he_normal(Shape shape, Index fan_in, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  Array v(numel(shape));
  for (Index i = 0; i < v.size(); ++i) v[i] = normal(rng);
  return Tensor(std::move(shape), std::move(v), true);
}

Linear Linear::init(Index in, Index out, std::mt19937_64& rng) {
  return {he_normal({in, out}, in, rng), Tensor::zeros({out}, true)};
}

Linear Linear::zeros(Index in, Index out) { return {Tensor::zeros({in, out}, true), Tensor::zeros({out}, true)}; }

Tensor Linear::forward(const Tensor& x) const { return matmul(x, weight) + bias; }

Sgd::Sgd(std::vector<Tensor> params, SgdOptions options) : params_(std::move(params)), options_(options) {
  velocity_.reserve(params_.size());
  for (const Tensor& p : params_) velocity_.push_back(Array::Zero(p.size()));
}

void Sgd::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

void Sgd::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    if (!p.has_grad()) continue;
    velocity_[i] = options_.momentum * velocity_[i] + p.grad() + options_.weight_decay * p.values();
    p.assign(p.values() - options_.learning_rate * velocity_[i]);
  }
}

}  // namespace comen
