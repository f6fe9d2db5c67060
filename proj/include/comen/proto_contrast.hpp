#pragma once

#include "comen/tensor.hpp"

#include <optional>
#include <vector>

namespace comen {

inline constexpr double kContrastTemperature = 0.5;

/// -log[ exp(v.v+/tau) / (exp(v.v+/tau) + sum_n exp(v.n/tau)) ] for a query
/// v (d), positive (d) and optional negatives (n x d). Evaluated as a
/// max-shifted log-softmax.
Tensor info_nce(const Tensor& query, const Tensor& positive, const std::optional<Tensor>& negatives, double tau);

struct ContrastOptions {
  double temperature = kContrastTemperature;
  bool normalize = true;  // L2-normalize prototypes before the dot products
};

struct ContrastStats {
  int queries = 0;  // queries that contributed
  int skipped = 0;  // queries without a positive (class seen in one domain only)
};

/// Supervised prototype contrastive loss. Every node is a query; positives are
/// the other nodes of its class, negatives all nodes of other classes. Each
/// query contributes the mean InfoNCE term over its positives, and the loss is
/// the mean over contributing queries (0 if none).
Tensor protoccl_loss(const Tensor& nodes, const std::vector<int>& labels, const ContrastOptions& options = {},
                     ContrastStats* stats = nullptr);

}  // namespace comen
