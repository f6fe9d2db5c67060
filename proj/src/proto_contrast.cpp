#include "comen/proto_contrast.hpp"

#include "comen/errors.hpp"
#include "comen/ops.hpp"

namespace comen {

Tensor info_nce(const Tensor& query, const Tensor& positive, const std::optional<Tensor>& negatives, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("info_nce: temperature must be positive");
  if (query.rank() != 1 || positive.shape() != query.shape()) {
    throw ShapeError("info_nce: query " + to_string(query.shape()) + " and positive " + to_string(positive.shape()) +
                     " must be equal-length vectors");
  }
  const Index d = query.dim(0);
  const Tensor q = reshape(query, {1, d});
  std::vector<Tensor> logits{matmul(q, reshape(positive, {d, 1}))};
  if (negatives) {
    if (negatives->rank() != 2 || negatives->dim(1) != d) {
      throw ShapeError("info_nce: negatives must be n x " + std::to_string(d) + ", got " +
                       to_string(negatives->shape()));
    }
    logits.push_back(matmul(q, transpose(*negatives)));
  }
  const Tensor scaled = concat(logits, 1) * (1.0 / tau);
  return -reshape(slice(log_softmax(scaled, 1), 1, 0, 1), {});
}

Tensor protoccl_loss(const Tensor& nodes, const std::vector<int>& labels, const ContrastOptions& options,
                     ContrastStats* stats) {
  if (!(options.temperature > 0.0)) throw std::invalid_argument("protoccl_loss: temperature must be positive");
  if (nodes.rank() != 2 || nodes.dim(0) != static_cast<Index>(labels.size())) {
    throw ShapeError("protoccl_loss: nodes " + to_string(nodes.shape()) + " vs " + std::to_string(labels.size()) +
                     " labels");
  }
  const Index n = nodes.dim(0);
  const Tensor x = options.normalize ? l2_normalize_rows(nodes) : nodes;
  const Tensor sim = matmul(x, transpose(x)) * (1.0 / options.temperature);  // N x N

  // term_ij = -log( e^{s_ij} / (e^{s_ij} + sum_{n in N_i} e^{s_in}) ), shifted by
  // the row max, which cancels in the ratio.
  Eigen::Map<const RowMatrix> s(sim.values().data(), n, n);
  Array shift = s.rowwise().maxCoeff().array();
  Array neg_mask = Array::Zero(n * n);
  Array weight = Array::Zero(n * n);
  ContrastStats local;
  for (Index i = 0; i < n; ++i) {
    Index positives = 0;
    for (Index j = 0; j < n; ++j) {
      if (j == i) continue;
      if (labels[static_cast<std::size_t>(j)] == labels[static_cast<std::size_t>(i)]) ++positives;
      else neg_mask[i * n + j] = 1.0;
    }
    if (positives == 0) {
      ++local.skipped;
      continue;
    }
    ++local.queries;
    for (Index j = 0; j < n; ++j) {
      if (j != i && labels[static_cast<std::size_t>(j)] == labels[static_cast<std::size_t>(i)]) {
        weight[i * n + j] = 1.0 / static_cast<double>(positives);
      }
    }
  }
  if (stats) *stats = local;
  if (local.queries == 0) return Tensor::scalar(0.0);
  weight /= static_cast<double>(local.queries);

  const Tensor e = exp(sim - Tensor({n, 1}, shift));
  const Tensor negative_mass = sum(e * Tensor({n, n}, neg_mask), 1, true);
  const Tensor ratio = e / (e + negative_mass);
  return -sum(log(ratio) * Tensor({n, n}, weight));
}

}  // namespace comen
