#include "comen/prototype_bank.hpp"

#include "comen/errors.hpp"
#include "comen/ops.hpp"

#include <string>

namespace comen {

LocalPrototypes local_prototypes(const Tensor& embeddings, const std::vector<int>& labels,
                                 const RowMatrix& assignments, int classes) {
  if (embeddings.rank() != 2) throw ShapeError("local_prototypes: embeddings must be B x d");
  const Index b = embeddings.dim(0);
  if (static_cast<Index>(labels.size()) != b || assignments.rows() != b) {
    throw ShapeError("local_prototypes: embeddings, labels and assignments are not row-aligned");
  }
  const Index m = assignments.cols();
  const Index cells = m * classes;
  RowMatrix weights = RowMatrix::Zero(cells, b);
  for (Index i = 0; i < b; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= classes) throw std::out_of_range("local_prototypes: label outside [0, K)");
    for (Index d = 0; d < m; ++d) weights(d * classes + y, i) = assignments(i, d);
  }
  LocalPrototypes out;
  out.mass = weights.rowwise().sum().array();
  out.present.resize(static_cast<std::size_t>(cells));
  for (Index c = 0; c < cells; ++c) {
    const bool present = out.mass[c] >= kAbsentMass;
    out.present[static_cast<std::size_t>(c)] = present;
    if (present) weights.row(c) /= out.mass[c];
    else weights.row(c).setZero();
  }
  out.prototypes = matmul(Tensor::from_rows(weights), embeddings);
  return out;
}

PrototypeBank::PrototypeBank(int domains, int classes, int dim, double decay)
    : domains_(domains),
      classes_(classes),
      dim_(dim),
      decay_(decay),
      prototypes_(RowMatrix::Zero(domains * classes, dim)),
      initialized_(static_cast<std::size_t>(domains * classes), false) {
  if (domains < 1 || classes < 1 || dim < 1) throw std::invalid_argument("PrototypeBank: bad dimensions");
  if (!(decay > 0.0 && decay < 1.0)) throw std::invalid_argument("PrototypeBank: decay must lie in (0, 1)");
}

void PrototypeBank::ema_update(const RowMatrix& local, const std::vector<bool>& present) {
  if (local.rows() != cells() || local.cols() != dim_ || static_cast<int>(present.size()) != cells()) {
    throw ShapeError("PrototypeBank::ema_update: expected " + std::to_string(cells()) + " x " + std::to_string(dim_));
  }
  for (int c = 0; c < cells(); ++c) {
    if (!present[static_cast<std::size_t>(c)]) continue;
    if (initialized_[static_cast<std::size_t>(c)]) {
      prototypes_.row(c) = decay_ * prototypes_.row(c) + (1.0 - decay_) * local.row(c);
    } else {
      prototypes_.row(c) = local.row(c);
      initialized_[static_cast<std::size_t>(c)] = true;
    }
  }
}

Tensor PrototypeBank::blend(const LocalPrototypes& local) const {
  if (local.prototypes.rank() != 2 || local.prototypes.dim(0) != cells() || local.prototypes.dim(1) != dim_) {
    throw ShapeError("PrototypeBank::blend: local prototypes have shape " + to_string(local.prototypes.shape()));
  }
  Array history_weight = Array::Zero(cells());
  Array local_weight = Array::Zero(cells());
  for (int c = 0; c < cells(); ++c) {
    const bool present = local.present[static_cast<std::size_t>(c)];
    const bool init = initialized_[static_cast<std::size_t>(c)];
    if (present && init) {
      history_weight[c] = decay_;
      local_weight[c] = 1.0 - decay_;
    } else if (present) {
      local_weight[c] = 1.0;
    } else if (init) {
      history_weight[c] = 1.0;
    }
  }
  const Tensor history = Tensor::from_rows(prototypes_);
  return history * Tensor({cells(), 1}, history_weight) + local.prototypes * Tensor({cells(), 1}, local_weight);
}

std::vector<bool> PrototypeBank::usable(const std::vector<bool>& present) const {
  std::vector<bool> out(static_cast<std::size_t>(cells()));
  for (std::size_t c = 0; c < out.size(); ++c) out[c] = present[c] || initialized_[c];
  return out;
}

void PrototypeBank::initialize(const RowMatrix& means, const std::vector<bool>& present) {
  if (means.rows() != cells() || means.cols() != dim_ || static_cast<int>(present.size()) != cells()) {
    throw ShapeError("PrototypeBank::initialize: shape mismatch");
  }
  for (int c = 0; c < cells(); ++c) {
    if (!present[static_cast<std::size_t>(c)]) continue;
    prototypes_.row(c) = means.row(c);
    initialized_[static_cast<std::size_t>(c)] = true;
  }
}

void PrototypeBank::restore(RowMatrix prototypes, std::vector<bool> initialized) {
  if (prototypes.rows() != cells() || prototypes.cols() != dim_ || static_cast<int>(initialized.size()) != cells()) {
    throw ShapeError("PrototypeBank::restore: shape mismatch");
  }
  prototypes_ = std::move(prototypes);
  initialized_ = std::move(initialized);
}

}  // namespace comen
