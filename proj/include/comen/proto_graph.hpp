#pragma once

#include "comen/layers.hpp"
#include "comen/tensor.hpp"

#include <random>
#include <vector>

namespace comen {

inline constexpr double kAdjacencyThreshold = 0.5;

/// A_ij = cos(x_i, x_j) if cos > threshold, else 0. Symmetric, with A_ii = 1
/// for every nonzero row. Zero-norm rows are isolated (all-zero row and column).
RowMatrix build_adjacency(const RowMatrix& features, double threshold = kAdjacencyThreshold);

/// Graph over the usable prototype cells. `cells[i]` is the bank row of node i;
/// node labels are the cells' classes.
struct PrototypeGraph {
  Tensor features;  // N x d
  RowMatrix adjacency;
  // The same cosine weights as a tensor of the features; the edge mask is
  // constant, so gradients flow through the cosines of kept edges only.
  Tensor edge_weights;
  std::vector<int> labels;
  std::vector<int> cells;
  double threshold = kAdjacencyThreshold;
};

// Keeps the rows of `bank_nodes` flagged in `usable` and builds their graph.
PrototypeGraph make_prototype_graph(const Tensor& bank_nodes, const std::vector<bool>& usable, int classes,
                                    double threshold = kAdjacencyThreshold);

/// One graph-attention layer with cosine-weighted masked attention:
///   alpha_ij = A_ij exp(e_ij) / sum_{k in N_i} A_ik exp(e_ik),
///   e_ij = LReLU(a^T [W x_i || W x_j]),  x'_i = act(sum_j alpha_ij W x_j).
struct GatLayer {
  Tensor weight;     // d x d'
  Tensor attention;  // 2d' x 1
  double slope = 0.2;

  static GatLayer init(Index in, Index out, std::mt19937_64& rng, double slope = 0.2);
  static GatLayer zeros(Index in, Index out, double slope = 0.2);

  Tensor attention_weights(const Tensor& x, const RowMatrix& adjacency) const;
  Tensor attention_weights(const Tensor& x, const Tensor& adjacency) const;
  Tensor forward(const Tensor& x, const RowMatrix& adjacency, bool apply_relu) const;
  Tensor forward(const Tensor& x, const Tensor& adjacency, bool apply_relu) const;
  std::vector<Tensor> parameters() const { return {weight, attention}; }
};

/// Two stacked attention layers (relu after the first, identity after the
/// second), a residual to the input features, and a shared d -> K classifier.
struct ProtoGR {
  GatLayer first;
  GatLayer second;
  Linear classifier;

  static ProtoGR init(Index dim, Index classes, std::mt19937_64& rng, double slope = 0.2);

  Tensor logits(const Tensor& x, const RowMatrix& adjacency) const;
  Tensor logits(const Tensor& x, const Tensor& adjacency) const;
  // Mean node-classification cross-entropy.
  Tensor loss(const PrototypeGraph& graph) const;
  std::vector<Tensor> parameters() const;
};

}  // namespace comen
