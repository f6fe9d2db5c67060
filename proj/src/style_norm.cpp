#include "comen/style_norm.hpp"

#include "comen/errors.hpp"
#include "comen/ops.hpp"

#include <algorithm>
#include <cmath>

namespace comen {

namespace {

// Views B x C x (spatial...) as B x C x S.
Tensor as_bcs(const Tensor& batch, const char* op) {
  if (batch.rank() < 2) throw ShapeError(std::string(op) + ": expected B x C x ..., got " + to_string(batch.shape()));
  const Index b = batch.dim(0);
  const Index c = batch.dim(1);
  return reshape(batch, {b, c, batch.size() / (b * c)});
}

}  // namespace

ChannelStats channel_stats(const Tensor& features, double eps) {
  if (!(eps >= 0.0)) throw std::invalid_argument("channel_stats: eps must be non-negative");
  if (features.rank() != 3 && features.rank() != 4) {
    throw ShapeError("channel_stats: expected C x H x W or B x C x H x W, got " + to_string(features.shape()));
  }
  const Index spatial_axis = features.rank() - 1;
  const Index leading = features.rank() == 4 ? features.dim(0) * features.dim(1) : features.dim(0);
  const Index hw = features.size() / leading;
  if (hw < 1) throw ShapeError("channel_stats: empty spatial extent");
  Shape flat_shape = features.rank() == 4 ? Shape{features.dim(0), features.dim(1), hw} : Shape{features.dim(0), hw};
  const Tensor flat = reshape(features, flat_shape);
  const Tensor mu = mean(flat, spatial_axis - 1, true);
  const Tensor var = mean(square(flat - mu), spatial_axis - 1);
  flat_shape.pop_back();
  return {reshape(mu, flat_shape), sqrt(var + eps)};
}

StyleVector style_vector(const Tensor& feature_map, double eps) {
  if (feature_map.rank() != 3) {
    throw ShapeError("style_vector: expected C x H x W, got " + to_string(feature_map.shape()));
  }
  const ChannelStats stats = channel_stats(feature_map, eps);
  const Index c = feature_map.dim(0);
  StyleVector s;
  s.values.resize(2 * c);
  s.values.head(c) = stats.mean.values().matrix();
  s.values.tail(c) = stats.stddev.values().matrix();
  return s;
}

Tensor style_vectors(const Tensor& batch, double eps) {
  if (batch.rank() != 4) throw ShapeError("style_vectors: expected B x C x H x W, got " + to_string(batch.shape()));
  const ChannelStats stats = channel_stats(batch, eps);
  return concat({stats.mean, stats.stddev}, 1);
}

DomainStats weighted_domain_stats(const Tensor& batch, const Tensor& assignments) {
  const Tensor z = as_bcs(batch, "weighted_domain_stats");
  const Index b = z.dim(0);
  if (assignments.rank() != 2 || assignments.dim(0) != b) {
    throw ShapeError("weighted_domain_stats: assignments " + to_string(assignments.shape()) +
                     " not row-aligned with batch " + to_string(batch.shape()));
  }
  const Index m = assignments.dim(1);
  DomainStats out;
  out.mass = assignments.matrix().colwise().sum().transpose().array();
  out.degenerate.resize(static_cast<std::size_t>(m));
  Array guard = Array::Zero(m);
  for (Index j = 0; j < m; ++j) {
    out.degenerate[static_cast<std::size_t>(j)] = out.mass[j] < kDegenerateMass;
    if (out.degenerate[static_cast<std::size_t>(j)]) guard[j] = 1.0;
  }
  // Degenerate columns get a unit denominator so everything stays finite.
  const Tensor column_mass = sum(assignments, 0, true) + Tensor({1, m}, guard);
  const Tensor weights_t = transpose(assignments / column_mass);  // M x B
  const Tensor first = mean(z, 2);                                // B x C
  const Tensor second = mean(square(z), 2);                       // B x C
  out.mean = matmul(weights_t, first);
  out.var = matmul(weights_t, second) - square(out.mean);
  return out;
}

SDNorm::SDNorm(int domains, int channels, double eps, double momentum)
    : domains_(domains),
      channels_(channels),
      eps_(eps),
      momentum_(momentum),
      gain_(Tensor::ones({domains, channels}, true)),
      bias_(Tensor::zeros({domains, channels}, true)),
      running_mean_(RowArray::Zero(domains, channels)),
      running_var_(RowArray::Ones(domains, channels)) {
  if (domains < 1 || channels < 1) throw std::invalid_argument("SDNorm: domains and channels must be positive");
  if (!(eps > 0.0) || !(momentum >= 0.0 && momentum < 1.0)) {
    throw std::invalid_argument("SDNorm: need eps > 0 and momentum in [0, 1)");
  }
}

void SDNorm::set_running(RowArray mean, RowArray var) {
  if (mean.rows() != domains_ || mean.cols() != channels_ || var.rows() != domains_ || var.cols() != channels_) {
    throw ShapeError("SDNorm::set_running: expected " + std::to_string(domains_) + " x " + std::to_string(channels_));
  }
  if ((var < 0.0).any()) throw std::invalid_argument("SDNorm::set_running: negative running variance");
  running_mean_ = std::move(mean);
  running_var_ = std::move(var);
}

Tensor SDNorm::forward(const Tensor& batch, const Tensor& assignments, NormMode mode) {
  if (batch.rank() < 2 || batch.dim(1) != channels_) {
    throw ShapeError("SDNorm: batch " + to_string(batch.shape()) + " does not have " + std::to_string(channels_) +
                     " channels");
  }
  const Index b = batch.dim(0);
  if (assignments.rank() != 2 || assignments.dim(0) != b || assignments.dim(1) != domains_) {
    throw ShapeError("SDNorm: assignments " + to_string(assignments.shape()) + " do not match batch of " +
                     std::to_string(b) + " over " + std::to_string(domains_) + " domains");
  }
  const Index m = domains_;
  const Index c = channels_;
  auto constant = [&](const RowArray& a) { return Tensor({m, c}, Eigen::Map<const Array>(a.data(), a.size())); };

  Tensor mu;
  Tensor var;
  if (mode == NormMode::kTrain) {
    if (b < 2) throw InsufficientBatchError("SDNorm: train mode needs a batch of at least 2 samples");
    DomainStats stats = weighted_domain_stats(batch, assignments);
    mu = stats.mean;
    var = stats.var;
    const bool any_degenerate = std::any_of(stats.degenerate.begin(), stats.degenerate.end(), [](bool d) { return d; });
    if (any_degenerate) {
      Array keep(m * c);
      for (Index j = 0; j < m; ++j) keep.segment(j * c, c).setConstant(stats.degenerate[j] ? 0.0 : 1.0);
      const Tensor keep_t({m, c}, keep);
      const Tensor drop_t({m, c}, 1.0 - keep);
      mu = mu * keep_t + constant(running_mean_) * drop_t;
      var = var * keep_t + constant(running_var_) * drop_t;
    }
    const double rate = 1.0 - momentum_;
    Eigen::Map<const RowArray> batch_mu(stats.mean.values().data(), m, c);
    Eigen::Map<const RowArray> batch_var(stats.var.values().data(), m, c);
    for (Index j = 0; j < m; ++j) {
      if (stats.degenerate[j]) continue;
      const double share = std::min(1.0, static_cast<double>(m) * stats.mass[j] / static_cast<double>(b));
      const double alpha = rate * share;
      running_mean_.row(j) = (1.0 - alpha) * running_mean_.row(j) + alpha * batch_mu.row(j);
      running_var_.row(j) = (1.0 - alpha) * running_var_.row(j) + alpha * batch_var.row(j).max(0.0);
    }
  } else {
    mu = constant(running_mean_);
    var = constant(running_var_);
  }

  // sum_m p_im (g_m (z - mu_m) / s_m + b_m) = z * (P A) + P (b - A mu), A = g / s.
  const Tensor scale_m = gain_ / sqrt(clamp_min(var, 0.0) + eps_);
  const Tensor shift_m = bias_ - scale_m * mu;
  Shape per_sample(static_cast<std::size_t>(batch.rank()), 1);
  per_sample[0] = b;
  per_sample[1] = c;
  const Tensor scale = reshape(matmul(assignments, scale_m), per_sample);
  const Tensor shift = reshape(matmul(assignments, shift_m), per_sample);
  return batch * scale + shift;
}

}  // namespace comen
