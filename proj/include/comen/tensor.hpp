#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace comen {

using Index = Eigen::Index;
using Shape = std::vector<Index>;
using Array = Eigen::ArrayXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowArray = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Index numel(const Shape& shape);
std::string to_string(const Shape& shape);

enum class OpKind {
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kMatmul,
  kExp,
  kLog,
  kSqrt,
  kRelu,
  kLeakyRelu,
  kClampMin,
  kSoftmax,
  kLogSoftmax,
  kSum,
  kMean,
  kConcat,
  kSlice,
  kBroadcast,
  kTranspose,
  kReshape,
  kConv2d,
  kAvgPool2d,
};

const char* to_string(OpKind kind);

// Everything a backward rule may read or write. input_grads[i] is null when
// input i does not require a gradient.
struct BackwardContext {
  const Array& grad_out;
  const Array& value_out;
  std::span<const Array* const> input_values;
  std::span<Array* const> input_grads;
};

using BackwardFn = std::function<void(const BackwardContext&)>;

namespace detail {

struct Node {
  std::uint64_t id = 0;
  OpKind kind = OpKind::kLeaf;
  Shape shape;
  Array value;
  Array grad;  // size 0 while absent
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;
};

}  // namespace detail

/// Dense row-major float64 array that records the ops producing it so that
/// `backward` can propagate gradients to every leaf with requires_grad set.
///
/// A Tensor is a shared handle; copies alias the same node. Values of a node
/// that participates in a graph are never mutated; only leaves may be
/// reassigned (optimizer steps) through `assign`.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, Array values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor ones(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor from_rows(const RowMatrix& m, bool requires_grad = false);

  // Builds the output of an op. The node (and its inputs) are recorded only
  // if at least one input requires a gradient.
  static Tensor make_result(OpKind kind, Shape shape, Array values,
                            std::initializer_list<Tensor> inputs, BackwardFn backward);
  static Tensor make_result(OpKind kind, Shape shape, Array values,
                            const std::vector<Tensor>& inputs, BackwardFn backward);

  const Shape& shape() const { return node_->shape; }
  Index rank() const { return static_cast<Index>(node_->shape.size()); }
  Index dim(Index axis) const;
  Index size() const { return node_->value.size(); }

  const Array& values() const { return node_->value; }
  double operator[](Index flat) const { return node_->value[flat]; }
  double at(std::initializer_list<Index> index) const;
  double item() const;

  // Row-major 2-D view of the values (rank must be 2).
  Eigen::Map<const RowMatrix> matrix() const;

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  const Array& grad() const;
  void zero_grad();

  bool is_leaf() const { return node_->kind == OpKind::kLeaf; }
  OpKind kind() const { return node_->kind; }
  std::uint64_t id() const { return node_->id; }

  // Same values, no history, no gradient requirement.
  Tensor detach() const;

  // Replaces the values of a leaf in place. Throws GradError on non-leaves.
  void assign(Array values);

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

/// Operation records reachable from a root, in topological order (every input
/// precedes its consumer). Node ids increase with creation time, so sorting
/// by id yields a valid order.
class ComputationGraph {
 public:
  struct Record {
    std::uint64_t id;
    OpKind kind;
    std::vector<std::uint64_t> inputs;
    Shape shape;
  };

  static ComputationGraph trace(const Tensor& root);

  std::span<const Record> records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  bool is_topologically_ordered() const;

 private:
  friend void backward(const Tensor& loss);
  std::vector<std::shared_ptr<detail::Node>> nodes_;
  std::vector<Record> records_;
};

/// Populates grad of every reachable leaf that requires it with d(loss)/d(leaf).
/// Leaf gradients accumulate across calls until zero_grad.
void backward(const Tensor& loss);

}  // namespace comen
