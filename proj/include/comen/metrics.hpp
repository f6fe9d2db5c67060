#pragma once

#include <Eigen/Core>

#include <vector>

namespace comen {

// rows = true class, cols = predicted class.
using ConfusionMatrix = Eigen::Matrix<long, Eigen::Dynamic, Eigen::Dynamic>;

ConfusionMatrix confusion_matrix(const std::vector<int>& truth, const std::vector<int>& predicted, int classes);
double accuracy(const ConfusionMatrix& confusion);

// Best accuracy over all one-to-one relabelings of `clusters` (k <= 9).
double matched_accuracy(const std::vector<int>& truth, const std::vector<int>& clusters);

// Normalized mutual information, I(U;V) / sqrt(H(U) H(V)); 1 when both are a
// single cluster.
double normalized_mutual_information(const std::vector<int>& truth, const std::vector<int>& clusters);

}  // namespace comen
