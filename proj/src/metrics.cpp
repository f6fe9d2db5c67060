#include "comen/metrics.hpp"

#include "comen/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace comen {

namespace {

Eigen::MatrixXd contingency(const std::vector<int>& a, const std::vector<int>& b, int& ka, int& kb) {
  if (a.size() != b.size() || a.empty()) throw std::invalid_argument("metrics: label vectors must be non-empty and aligned");
  ka = *std::max_element(a.begin(), a.end()) + 1;
  kb = *std::max_element(b.begin(), b.end()) + 1;
  if (*std::min_element(a.begin(), a.end()) < 0 || *std::min_element(b.begin(), b.end()) < 0) {
    throw std::invalid_argument("metrics: labels must be non-negative");
  }
  Eigen::MatrixXd table = Eigen::MatrixXd::Zero(ka, kb);
  for (std::size_t i = 0; i < a.size(); ++i) table(a[i], b[i]) += 1.0;
  return table;
}

}  // namespace

ConfusionMatrix confusion_matrix(const std::vector<int>& truth, const std::vector<int>& predicted, int classes) {
  if (truth.size() != predicted.size()) throw std::invalid_argument("confusion_matrix: size mismatch");
  ConfusionMatrix cm = ConfusionMatrix::Zero(classes, classes);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || truth[i] >= classes || predicted[i] < 0 || predicted[i] >= classes) {
      throw std::out_of_range("confusion_matrix: label outside [0, K)");
    }
    ++cm(truth[i], predicted[i]);
  }
  return cm;
}

double accuracy(const ConfusionMatrix& confusion) {
  const long total = confusion.sum();
  return total == 0 ? 0.0 : static_cast<double>(confusion.trace()) / static_cast<double>(total);
}

double matched_accuracy(const std::vector<int>& truth, const std::vector<int>& clusters) {
  int kt = 0;
  int kc = 0;
  const Eigen::MatrixXd table = contingency(truth, clusters, kt, kc);
  const int k = std::max(kt, kc);
  if (k > 9) throw std::invalid_argument("matched_accuracy: more than 9 labels");
  Eigen::MatrixXd square = Eigen::MatrixXd::Zero(k, k);
  square.topLeftCorner(kt, kc) = table;
  std::vector<int> perm(static_cast<std::size_t>(k));
  std::iota(perm.begin(), perm.end(), 0);
  double best = 0.0;
  do {
    double hits = 0.0;
    for (int c = 0; c < k; ++c) hits += square(perm[static_cast<std::size_t>(c)], c);
    best = std::max(best, hits);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best / static_cast<double>(truth.size());
}

double normalized_mutual_information(const std::vector<int>& truth, const std::vector<int>& clusters) {
  int ka = 0;
  int kb = 0;
  const Eigen::MatrixXd table = contingency(truth, clusters, ka, kb) / static_cast<double>(truth.size());
  const Eigen::VectorXd pa = table.rowwise().sum();
  const Eigen::RowVectorXd pb = table.colwise().sum();
  auto entropy = [](const auto& p) {
    double h = 0.0;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      if (p[i] > 0.0) h -= p[i] * std::log(p[i]);
    }
    return h;
  };
  double mi = 0.0;
  for (int i = 0; i < ka; ++i)
    for (int j = 0; j < kb; ++j)
      if (table(i, j) > 0.0) mi += table(i, j) * std::log(table(i, j) / (pa[i] * pb[j]));
  const double ha = entropy(pa);
  const double hb = entropy(pb);
  if (ha == 0.0 && hb == 0.0) return 1.0;
  if (ha == 0.0 || hb == 0.0) return 0.0;
  return mi / std::sqrt(ha * hb);
}

}  // namespace comen
