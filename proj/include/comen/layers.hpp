#pragma once

#include "comen/tensor.hpp"

#include <random>
#include <vector>

namespace comen {

// N(0, sqrt(2 / fan_in)) initialization.
Tensor he_normal(Shape shape, Index fan_in, std::mt19937_64& rng);

// y = x W + b with W: in x out.
struct Linear {
  Tensor weight;
  Tensor bias;

  static Linear init(Index in, Index out, std::mt19937_64& rng);
  static Linear zeros(Index in, Index out);
  Tensor forward(const Tensor& x) const;
  std::vector<Tensor> parameters() const { return {weight, bias}; }
};

struct SgdOptions {
  double learning_rate = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
};

/// SGD with heavy-ball momentum and L2 weight decay:
///   v <- mu v + (g + wd w);  w <- w - lr v.
class Sgd {
 public:
  Sgd(std::vector<Tensor> params, SgdOptions options);

  void zero_grad();
  void step();
  void set_learning_rate(double lr) { options_.learning_rate = lr; }
  double learning_rate() const { return options_.learning_rate; }

 private:
  std::vector<Tensor> params_;
  std::vector<Array> velocity_;
  SgdOptions options_;
};

}  // namespace comen
