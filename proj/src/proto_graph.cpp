#include "comen/proto_graph.hpp"

#include "comen/errors.hpp"
#include "comen/ops.hpp"

#include <cmath>
#include <limits>

namespace comen {

RowMatrix build_adjacency(const RowMatrix& features, double threshold) {
  const Index n = features.rows();
  const Eigen::VectorXd norms = features.rowwise().norm();
  RowMatrix a = RowMatrix::Zero(n, n);
  for (Index i = 0; i < n; ++i) {
    if (!(norms[i] > 0.0)) continue;
    a(i, i) = 1.0;
    for (Index j = i + 1; j < n; ++j) {
      if (!(norms[j] > 0.0)) continue;
      const double cosine = features.row(i).dot(features.row(j)) / (norms[i] * norms[j]);
      if (cosine > threshold) a(i, j) = a(j, i) = cosine;
    }
  }
  return a;
}

PrototypeGraph make_prototype_graph(const Tensor& bank_nodes, const std::vector<bool>& usable, int classes,
                                    double threshold) {
  if (bank_nodes.rank() != 2 || static_cast<Index>(usable.size()) != bank_nodes.dim(0)) {
    throw ShapeError("make_prototype_graph: usable mask does not match node rows");
  }
  PrototypeGraph g;
  g.threshold = threshold;
  std::vector<Tensor> rows;
  for (std::size_t c = 0; c < usable.size(); ++c) {
    if (!usable[c]) continue;
    g.cells.push_back(static_cast<int>(c));
    g.labels.push_back(static_cast<int>(c) % classes);
    rows.push_back(slice(bank_nodes, 0, static_cast<Index>(c), static_cast<Index>(c) + 1));
  }
  if (rows.empty()) throw std::invalid_argument("make_prototype_graph: no usable prototype cells");
  g.features = concat(rows, 0);
  g.adjacency = build_adjacency(g.features.matrix(), threshold);
  const RowMatrix mask = (g.adjacency.array() > 0.0).cast<double>().matrix();
  const Tensor unit = l2_normalize_rows(g.features);
  g.edge_weights = matmul(unit, transpose(unit)) * Tensor::from_rows(mask);
  return g;
}

GatLayer GatLayer::init(Index in, Index out, std::mt19937_64& rng, double slope) {
  return {he_normal({in, out}, in, rng), he_normal({2 * out, 1}, 2 * out, rng), slope};
}

GatLayer GatLayer::zeros(Index in, Index out, double slope) {
  return {Tensor::zeros({in, out}, true), Tensor::zeros({2 * out, 1}, true), slope};
}

Tensor GatLayer::attention_weights(const Tensor& x, const RowMatrix& adjacency) const {
  return attention_weights(x, Tensor::from_rows(adjacency));
}

Tensor GatLayer::attention_weights(const Tensor& x, const Tensor& adjacency_weights) const {
  const Index n = x.dim(0);
  if (adjacency_weights.rank() != 2 || adjacency_weights.dim(0) != n || adjacency_weights.dim(1) != n) {
    throw ShapeError("GatLayer: adjacency is not " + std::to_string(n) + " x " + std::to_string(n));
  }
  const Index out = weight.dim(1);
  const Tensor h = matmul(x, weight);
  const Tensor src = matmul(h, slice(attention, 0, 0, out));        // N x 1
  const Tensor dst = matmul(h, slice(attention, 0, out, 2 * out));  // N x 1
  const Tensor scores = leaky_relu(src + transpose(dst), slope);   // N x N

  // Row-wise shift over each neighborhood; softmax is invariant to it.
  Array shift(n);
  Array empty(n);
  Eigen::Map<const RowMatrix> e(scores.values().data(), n, n);
  Eigen::Map<const RowMatrix> adjacency(adjacency_weights.values().data(), n, n);
  for (Index i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Index j = 0; j < n; ++j) {
      if (adjacency(i, j) > 0.0) mx = std::max(mx, e(i, j));
    }
    empty[i] = std::isinf(mx) ? 1.0 : 0.0;
    shift[i] = std::isinf(mx) ? 0.0 : mx;
  }
  const Tensor weighted = exp(scores - Tensor({n, 1}, shift)) * adjacency_weights;
  return weighted / (sum(weighted, 1, true) + Tensor({n, 1}, empty));
}

Tensor GatLayer::forward(const Tensor& x, const RowMatrix& adjacency, bool apply_relu) const {
  return forward(x, Tensor::from_rows(adjacency), apply_relu);
}

Tensor GatLayer::forward(const Tensor& x, const Tensor& adjacency, bool apply_relu) const {
  const Tensor mixed = matmul(attention_weights(x, adjacency), matmul(x, weight));
  return apply_relu ? relu(mixed) : mixed;
}

ProtoGR ProtoGR::init(Index dim, Index classes, std::mt19937_64& rng, double slope) {
  return {GatLayer::init(dim, dim, rng, slope), GatLayer::init(dim, dim, rng, slope), Linear::init(dim, classes, rng)};
}

Tensor ProtoGR::logits(const Tensor& x, const RowMatrix& adjacency) const {
  return logits(x, Tensor::from_rows(adjacency));
}

Tensor ProtoGR::logits(const Tensor& x, const Tensor& adjacency) const {
  if (second.weight.dim(1) != x.dim(1)) {
    throw ShapeError("ProtoGR: residual needs output width " + std::to_string(x.dim(1)) + ", got " +
                     std::to_string(second.weight.dim(1)));
  }
  const Tensor hidden = first.forward(x, adjacency, true);
  const Tensor top = second.forward(hidden, adjacency, false);
  return classifier.forward(top + x);
}

Tensor ProtoGR::loss(const PrototypeGraph& graph) const {
  return cross_entropy(logits(graph.features, graph.edge_weights), graph.labels);
}

std::vector<Tensor> ProtoGR::parameters() const {
  return {first.weight, first.attention, second.weight, second.attention, classifier.weight, classifier.bias};
}

}  // namespace comen
