#pragma once

#include "comen/tensor.hpp"

#include <vector>

namespace comen {

inline constexpr double kPrototypeDecay = 0.7;
inline constexpr double kAbsentMass = 1e-8;

/// Batch-local class centroids per latent domain. Rows are cells in
/// domain-major order (row m * K + k).
///   cell(m, k) = sum_{i: y_i = k} p_im f_i / sum_{i: y_i = k} p_im
/// Cells whose mass is below 1e-8 are absent and hold zeros.
struct LocalPrototypes {
  Tensor prototypes;  // (M*K) x d, differentiable w.r.t. the embeddings
  Eigen::ArrayXd mass;
  std::vector<bool> present;
};

LocalPrototypes local_prototypes(const Tensor& embeddings, const std::vector<int>& labels,
                                 const RowMatrix& assignments, int classes);

/// M x K x d global prototypes with per-cell initialization flags, updated by
/// an exponential moving average with decay rho.
class PrototypeBank {
 public:
  PrototypeBank(int domains, int classes, int dim, double decay = kPrototypeDecay);

  int domains() const { return domains_; }
  int classes() const { return classes_; }
  int dim() const { return dim_; }
  int cells() const { return domains_ * classes_; }
  double decay() const { return decay_; }

  const RowMatrix& prototypes() const { return prototypes_; }
  const std::vector<bool>& initialized() const { return initialized_; }
  static int cell(int domain, int klass, int classes) { return domain * classes + klass; }

  // Present cells: c <- rho c + (1 - rho) c_hat; uninitialized present cells
  // adopt c_hat; absent cells are left alone.
  void ema_update(const RowMatrix& local, const std::vector<bool>& present);

  /// The EMA step as a differentiable expression: rho * stop(c_prev) +
  /// (1 - rho) * local for present initialized cells, local for present new
  /// cells, stop(c_prev) for absent initialized cells, zeros elsewhere.
  /// Its values equal the bank after ema_update with the same local.
  Tensor blend(const LocalPrototypes& local) const;

  // Cells usable by the graph and contrastive losses after a blend.
  std::vector<bool> usable(const std::vector<bool>& present) const;

  // Overwrites cells from a full pass over the training split.
  void initialize(const RowMatrix& means, const std::vector<bool>& present);
  void restore(RowMatrix prototypes, std::vector<bool> initialized);

 private:
  int domains_;
  int classes_;
  int dim_;
  double decay_;
  RowMatrix prototypes_;
  std::vector<bool> initialized_;
};

}  // namespace comen
