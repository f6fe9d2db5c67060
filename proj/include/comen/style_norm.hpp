#pragma once

#include "comen/tensor.hpp"

#include <vector>

namespace comen {

inline constexpr double kNormEps = 1e-5;
inline constexpr double kNormMomentum = 0.9;
inline constexpr double kDegenerateMass = 1e-8;

/// Spatial mean and sqrt(spatial variance + eps) per channel. Accepts a single
/// C x H x W map (results of shape C) or a batch B x C x H x W (results B x C).
struct ChannelStats {
  Tensor mean;
  Tensor stddev;
};
ChannelStats channel_stats(const Tensor& features, double eps = kNormEps);

/// sty(f) = [mu_1..mu_C, sigma_1..sigma_C].
struct StyleVector {
  Eigen::VectorXd values;
  Index channels() const { return values.size() / 2; }
};
StyleVector style_vector(const Tensor& feature_map, double eps = kNormEps);

// Batched, differentiable style vectors: B x C x H x W -> B x 2C.
Tensor style_vectors(const Tensor& batch, double eps = kNormEps);

/// Per-domain moments of a batch (B x C x ...) under soft assignments
/// p (B x M). Weights are column-normalized, w_im = p_im / sum_j p_jm, and the
/// moments run over batch and spatial positions:
///   mean_m = sum_i w_im avg_hw(z_i),  var_m = sum_i w_im avg_hw((z_i - mean_m)^2).
/// A column whose total mass is below 1e-8 is flagged degenerate; its rows are
/// finite but meaningless and callers substitute running statistics.
struct DomainStats {
  Tensor mean;  // M x C
  Tensor var;   // M x C
  Eigen::ArrayXd mass;
  std::vector<bool> degenerate;
};
DomainStats weighted_domain_stats(const Tensor& batch, const Tensor& assignments);

enum class NormMode { kTrain, kInfer };

/// Style-induced domain-specific normalization. Each sample's output is the
/// p-weighted mixture over M branches of gain_m * (z - mean_m) / sqrt(var_m + eps) + bias_m.
/// With M = 1 and p = 1 it is plain batch normalization.
class SDNorm {
 public:
  SDNorm(int domains, int channels, double eps = kNormEps, double momentum = kNormMomentum);

  // batch: B x C x ... ; assignments: B x M. Train mode needs B >= 2 and
  // updates running statistics per branch at rate (1 - momentum) scaled by the
  // branch's share of the batch mass (capped at the uniform share).
  Tensor forward(const Tensor& batch, const Tensor& assignments, NormMode mode);

  int domains() const { return domains_; }
  int channels() const { return channels_; }
  double eps() const { return eps_; }
  double momentum() const { return momentum_; }

  const Tensor& gain() const { return gain_; }
  const Tensor& bias() const { return bias_; }
  const RowArray& running_mean() const { return running_mean_; }
  const RowArray& running_var() const { return running_var_; }
  void set_running(RowArray mean, RowArray var);

  std::vector<Tensor> parameters() const { return {gain_, bias_}; }

 private:
  int domains_;
  int channels_;
  double eps_;
  double momentum_;
  Tensor gain_;  // M x C
  Tensor bias_;  // M x C
  RowArray running_mean_;
  RowArray running_var_;
};

}  // namespace comen
