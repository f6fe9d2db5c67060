#include "comen/discovery.hpp"

#include "comen/errors.hpp"
#include "comen/layers.hpp"
#include "comen/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace comen {

bool DomainAssignment::valid() const {
  return probs.size() > 0 && (probs.array() >= 0.0).all() && std::abs(probs.sum() - 1.0) <= kTolerance;
}

namespace {

RowMatrix standardize_columns(const RowMatrix& x) {
  RowMatrix z = x.rowwise() - x.colwise().mean();
  for (Index c = 0; c < z.cols(); ++c) {
    const double sd = std::sqrt(z.col(c).squaredNorm() / static_cast<double>(z.rows()));
    if (sd > 0.0) z.col(c) /= sd;
  }
  return z;
}

RowMatrix kmeans_plus_plus(const RowMatrix& x, int k, std::mt19937_64& rng) {
  const Index n = x.rows();
  RowMatrix centers(k, x.cols());
  std::uniform_int_distribution<Index> pick(0, n - 1);
  centers.row(0) = x.row(pick(rng));
  Eigen::VectorXd d2 = (x.rowwise() - centers.row(0)).rowwise().squaredNorm();
  for (int c = 1; c < k; ++c) {
    const double total = d2.sum();
    Index chosen = 0;
    if (total > 0.0) {
      std::uniform_real_distribution<double> u(0.0, total);
      double target = u(rng);
      for (chosen = 0; chosen < n - 1; ++chosen) {
        target -= d2[chosen];
        if (target <= 0.0) break;
      }
    } else {
      chosen = pick(rng);
    }
    centers.row(c) = x.row(chosen);
    d2 = d2.cwiseMin((x.rowwise() - centers.row(c)).rowwise().squaredNorm());
  }
  return centers;
}

// Lloyd iterations; returns false if a cluster ever empties.
bool lloyd(const RowMatrix& x, RowMatrix& centers, std::vector<int>& labels) {
  const Index n = x.rows();
  const int k = static_cast<int>(centers.rows());
  labels.assign(static_cast<std::size_t>(n), 0);
  for (int iter = 0; iter < kKMeansIterations; ++iter) {
    for (Index i = 0; i < n; ++i) {
      Eigen::Index best = 0;
      (centers.rowwise() - x.row(i)).rowwise().squaredNorm().minCoeff(&best);
      labels[static_cast<std::size_t>(i)] = static_cast<int>(best);
    }
    RowMatrix next = RowMatrix::Zero(k, x.cols());
    std::vector<Index> counts(static_cast<std::size_t>(k), 0);
    for (Index i = 0; i < n; ++i) {
      next.row(labels[static_cast<std::size_t>(i)]) += x.row(i);
      ++counts[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] == 0) return false;
      next.row(c) /= static_cast<double>(counts[static_cast<std::size_t>(c)]);
    }
    const double shift = (next - centers).rowwise().norm().maxCoeff();
    centers = std::move(next);
    if (shift < kKMeansTolerance) break;
  }
  return true;
}

}  // namespace

std::vector<int> bootstrap_pseudo_domains(const RowMatrix& style_vectors, int domains, std::uint64_t seed) {
  if (domains < 1) throw std::invalid_argument("bootstrap_pseudo_domains: need at least one domain");
  if (style_vectors.rows() < domains) {
    throw std::invalid_argument("bootstrap_pseudo_domains: fewer vectors than domains");
  }
  const RowMatrix x = standardize_columns(style_vectors);
  for (int attempt = 0; attempt < kKMeansRestarts; ++attempt) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(attempt)};
    std::mt19937_64 rng(seq);
    RowMatrix centers = kmeans_plus_plus(x, domains, rng);
    std::vector<int> labels;
    if (lloyd(x, centers, labels)) return labels;
  }
  throw ClusteringError("bootstrap_pseudo_domains: a cluster stayed empty after " +
                        std::to_string(kKMeansRestarts) + " seedings");
}

DomainPredictor::DomainPredictor(int style_dim, int domains, int hidden, std::mt19937_64& rng, double slope)
    : style_dim_(style_dim),
      domains_(domains),
      hidden_(hidden),
      slope_(slope),
      input_mean_(Eigen::VectorXd::Zero(style_dim)),
      input_scale_(Eigen::VectorXd::Ones(style_dim)) {
  if (style_dim < 1 || domains < 1 || hidden < 1) throw std::invalid_argument("DomainPredictor: bad dimensions");
  Linear first = Linear::init(style_dim, hidden, rng);
  Linear second = Linear::init(hidden, domains, rng);
  w1_ = first.weight;
  b1_ = first.bias;
  w2_ = second.weight;
  b2_ = second.bias;
}

void DomainPredictor::set_standardization(Eigen::VectorXd mean, Eigen::VectorXd scale) {
  if (mean.size() != style_dim_ || scale.size() != style_dim_ || (scale.array() <= 0.0).any()) {
    throw std::invalid_argument("DomainPredictor: standardization must have positive scale of length 2C");
  }
  input_mean_ = std::move(mean);
  input_scale_ = std::move(scale);
}

void DomainPredictor::zero_output_layer() {
  w2_.assign(Array::Zero(w2_.size()));
  b2_.assign(Array::Zero(b2_.size()));
}

Tensor DomainPredictor::logits(const Tensor& styles) const {
  if (styles.rank() != 2 || styles.dim(1) != style_dim_) {
    throw ShapeError("DomainPredictor: expected B x " + std::to_string(style_dim_) + " style vectors, got " +
                     to_string(styles.shape()));
  }
  const Tensor mean_t({1, style_dim_}, input_mean_.array());
  const Tensor scale_t({1, style_dim_}, input_scale_.array());
  const Tensor h = leaky_relu(matmul((styles - mean_t) / scale_t, w1_) + b1_, slope_);
  return matmul(h, w2_) + b2_;
}

Tensor DomainPredictor::forward(const Tensor& styles) const { return softmax(logits(styles), 1); }

RowMatrix predict_assignments(const DomainPredictor& predictor, const RowMatrix& style_vectors) {
  const Tensor probs = predictor.forward(Tensor::from_rows(style_vectors));
  return probs.matrix();
}

Tensor entropy_loss(const Tensor& assignments) {
  if (assignments.rank() != 2) throw ShapeError("entropy_loss: expected B x M, got " + to_string(assignments.shape()));
  const double rows = static_cast<double>(assignments.dim(0));
  return sum(assignments * log(clamp_min(assignments, 1e-12))) * (-1.0 / rows);
}

Tensor balance_penalty(const Tensor& assignments) {
  const Index m = assignments.dim(1);
  const Tensor avg = mean(assignments, 0);
  return sum(avg * log(clamp_min(avg * static_cast<double>(m), 1e-12)));
}

std::vector<std::size_t> pretrain_predictor(DomainPredictor& predictor, const RowMatrix& style_vectors,
                                            const std::vector<int>& pseudo_labels, const PretrainOptions& options,
                                            std::mt19937_64& rng) {
  const auto n = static_cast<std::size_t>(style_vectors.rows());
  if (pseudo_labels.size() != n) throw ShapeError("pretrain_predictor: label count does not match style rows");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const auto portion_size =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(options.portion * static_cast<double>(n))));
  std::vector<std::size_t> portion(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(portion_size));

  Sgd sgd(predictor.parameters(), {options.learning_rate, options.momentum, 0.0});
  std::vector<std::size_t> batch_order = portion;
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    std::shuffle(batch_order.begin(), batch_order.end(), rng);
    for (std::size_t start = 0; start < batch_order.size(); start += static_cast<std::size_t>(options.batch_size)) {
      const std::size_t stop = std::min(batch_order.size(), start + static_cast<std::size_t>(options.batch_size));
      RowMatrix rows(static_cast<Index>(stop - start), style_vectors.cols());
      std::vector<int> labels;
      for (std::size_t j = start; j < stop; ++j) {
        rows.row(static_cast<Index>(j - start)) = style_vectors.row(static_cast<Index>(batch_order[j]));
        labels.push_back(pseudo_labels[batch_order[j]]);
      }
      sgd.zero_grad();
      backward(cross_entropy(predictor.logits(Tensor::from_rows(rows)), labels));
      sgd.step();
    }
  }
  std::sort(portion.begin(), portion.end());
  return portion;
}

}  // namespace comen
