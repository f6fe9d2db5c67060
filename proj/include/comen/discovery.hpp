#pragma once

#include "comen/tensor.hpp"

#include <cstdint>
#include <random>
#include <vector>

namespace comen {

/// Soft domain label: M nonnegative probabilities summing to one.
struct DomainAssignment {
  Eigen::VectorXd probs;

  static constexpr double kTolerance = 1e-6;
  bool valid() const;
};

inline constexpr int kKMeansIterations = 100;
inline constexpr double kKMeansTolerance = 1e-6;
inline constexpr int kKMeansRestarts = 10;

/// k-means (k = domains) over column-standardized style vectors (N x 2C),
/// seeded with k-means++ from `seed`. Stops after 100 Lloyd iterations or once
/// no centroid moves more than 1e-6. An empty cluster triggers a re-seed; after
/// 10 attempts a ClusteringError is thrown.
std::vector<int> bootstrap_pseudo_domains(const RowMatrix& style_vectors, int domains, std::uint64_t seed);

/// F_d: standardized style vector (2C) -> hidden (leaky relu) -> M softmax.
/// The standardization (mean, scale) is fixed data, not a parameter.
class DomainPredictor {
 public:
  DomainPredictor(int style_dim, int domains, int hidden, std::mt19937_64& rng, double slope = 0.2);

  Tensor logits(const Tensor& styles) const;
  // B x 2C -> B x M assignment probabilities.
  Tensor forward(const Tensor& styles) const;

  void set_standardization(Eigen::VectorXd mean, Eigen::VectorXd scale);
  void zero_output_layer();

  int style_dim() const { return style_dim_; }
  int domains() const { return domains_; }
  int hidden() const { return hidden_; }
  const Eigen::VectorXd& input_mean() const { return input_mean_; }
  const Eigen::VectorXd& input_scale() const { return input_scale_; }

  // w1 (2C x H), b1 (H), w2 (H x M), b2 (M)
  std::vector<Tensor> parameters() const { return {w1_, b1_, w2_, b2_}; }

 private:
  int style_dim_;
  int domains_;
  int hidden_;
  double slope_;
  Eigen::VectorXd input_mean_;
  Eigen::VectorXd input_scale_;
  Tensor w1_, b1_, w2_, b2_;
};

/// Rows of F_d's softmax for a batch of style vectors; deterministic.
RowMatrix predict_assignments(const DomainPredictor& predictor, const RowMatrix& style_vectors);

/// Mean per-row entropy -(1/B) sum_i sum_m p_im log p_im, with the log
/// argument clamped at 1e-12 so that 0 log 0 = 0.
Tensor entropy_loss(const Tensor& assignments);

/// KL(mean assignment || uniform); used as a collapse guard.
Tensor balance_penalty(const Tensor& assignments);

struct PretrainOptions {
  int epochs = 60;
  int batch_size = 32;
  double learning_rate = 0.1;
  double momentum = 0.9;
  double portion = 0.5;
};

/// Fits F_d to pseudo labels on a uniformly drawn portion of the rows and
/// returns the indices of that portion.
std::vector<std::size_t> pretrain_predictor(DomainPredictor& predictor, const RowMatrix& style_vectors,
                                            const std::vector<int>& pseudo_labels, const PretrainOptions& options,
                                            std::mt19937_64& rng);

}  // namespace comen
