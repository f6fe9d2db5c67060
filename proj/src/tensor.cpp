#include "comen/tensor.hpp"

#include "comen/errors.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <unordered_set>

namespace comen {

namespace {

std::atomic<std::uint64_t> g_next_id{1};

std::shared_ptr<detail::Node> new_node(OpKind kind, Shape shape, Array values, bool requires_grad) {
  for (Index d : shape) {
    if (d <= 0) throw ShapeError("tensor: non-positive dimension in shape " + to_string(shape));
  }
  if (numel(shape) != values.size()) {
    throw ShapeError("tensor: shape " + to_string(shape) + " holds " + std::to_string(numel(shape)) +
                     " values, got " + std::to_string(values.size()));
  }
  auto node = std::make_shared<detail::Node>();
  node->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  node->kind = kind;
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return node;
}

}  // namespace

Index numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ']';
  return os.str();
}

const char* to_string(OpKind kind) {
  switch (kind) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kDiv: return "div";
    case OpKind::kMatmul: return "matmul";
    case OpKind::kExp: return "exp";
    case OpKind::kLog: return "log";
    case OpKind::kSqrt: return "sqrt";
    case OpKind::kRelu: return "relu";
    case OpKind::kLeakyRelu: return "leaky_relu";
    case OpKind::kClampMin: return "clamp_min";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kLogSoftmax: return "log_softmax";
    case OpKind::kSum: return "sum";
    case OpKind::kMean: return "mean";
    case OpKind::kConcat: return "concat";
    case OpKind::kSlice: return "slice";
    case OpKind::kBroadcast: return "broadcast";
    case OpKind::kTranspose: return "transpose";
    case OpKind::kReshape: return "reshape";
    case OpKind::kConv2d: return "conv2d";
    case OpKind::kAvgPool2d: return "avg_pool2d";
  }
  return "?";
}

Tensor::Tensor() : Tensor(Shape{}, Array::Zero(1)) {}

Tensor::Tensor(Shape shape, Array values, bool requires_grad)
    : node_(new_node(OpKind::kLeaf, std::move(shape), std::move(values), requires_grad)) {}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const Index n = numel(shape);
  return Tensor(std::move(shape), Array::Zero(n), requires_grad);
}

Tensor Tensor::ones(Shape shape, bool requires_grad) { return full(std::move(shape), 1.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const Index n = numel(shape);
  return Tensor(std::move(shape), Array::Constant(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(Shape{}, Array::Constant(1, value), requires_grad);
}

Tensor Tensor::from_rows(const RowMatrix& m, bool requires_grad) {
  Array values = Eigen::Map<const Array>(m.data(), m.size());
  return Tensor({m.rows(), m.cols()}, std::move(values), requires_grad);
}

Tensor Tensor::make_result(OpKind kind, Shape shape, Array values, std::initializer_list<Tensor> inputs,
                           BackwardFn backward) {
  return make_result(kind, std::move(shape), std::move(values), std::vector<Tensor>(inputs), std::move(backward));
}

Tensor Tensor::make_result(OpKind kind, Shape shape, Array values, const std::vector<Tensor>& inputs,
                           BackwardFn backward) {
  const bool needs_grad =
      std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  auto node = new_node(kind, std::move(shape), std::move(values), needs_grad);
  if (needs_grad) {
    node->inputs.reserve(inputs.size());
    for (const Tensor& t : inputs) node->inputs.push_back(t.node_);
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

Index Tensor::dim(Index axis) const {
  if (axis < 0) axis += rank();
  if (axis < 0 || axis >= rank()) {
    throw ShapeError("dim: axis " + std::to_string(axis) + " out of range for shape " + to_string(shape()));
  }
  return node_->shape[static_cast<std::size_t>(axis)];
}

double Tensor::at(std::initializer_list<Index> index) const {
  if (static_cast<Index>(index.size()) != rank()) {
    throw ShapeError("at: index rank does not match shape " + to_string(shape()));
  }
  Index flat = 0;
  std::size_t axis = 0;
  for (Index i : index) {
    const Index extent = node_->shape[axis++];
    if (i < 0 || i >= extent) throw ShapeError("at: index out of range for shape " + to_string(shape()));
    flat = flat * extent + i;
  }
  return node_->value[flat];
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item: tensor of shape " + to_string(shape()) + " is not a scalar");
  return node_->value[0];
}

Eigen::Map<const RowMatrix> Tensor::matrix() const {
  if (rank() != 2) throw ShapeError("matrix: expected rank 2, got shape " + to_string(shape()));
  return {node_->value.data(), node_->shape[0], node_->shape[1]};
}

const Array& Tensor::grad() const {
  if (!has_grad()) throw GradError("grad: no gradient has been populated for this tensor");
  return node_->grad;
}

void Tensor::zero_grad() { node_->grad.resize(0); }

Tensor Tensor::detach() const { return Tensor(node_->shape, node_->value, false); }

void Tensor::assign(Array values) {
  if (!is_leaf()) throw GradError("assign: only leaf tensors may be updated in place");
  if (values.size() != node_->value.size()) {
    throw ShapeError("assign: size mismatch for shape " + to_string(shape()));
  }
  node_->value = std::move(values);
}

ComputationGraph ComputationGraph::trace(const Tensor& root) {
  ComputationGraph graph;
  std::unordered_set<const detail::Node*> seen;
  std::vector<std::shared_ptr<detail::Node>> stack{root.node()};
  while (!stack.empty()) {
    auto node = std::move(stack.back());
    stack.pop_back();
    if (!seen.insert(node.get()).second) continue;
    for (const auto& in : node->inputs) stack.push_back(in);
    graph.nodes_.push_back(std::move(node));
  }
  std::sort(graph.nodes_.begin(), graph.nodes_.end(), [](const auto& a, const auto& b) { return a->id < b->id; });
  graph.records_.reserve(graph.nodes_.size());
  for (const auto& node : graph.nodes_) {
    Record r{node->id, node->kind, {}, node->shape};
    for (const auto& in : node->inputs) r.inputs.push_back(in->id);
    graph.records_.push_back(std::move(r));
  }
  return graph;
}

bool ComputationGraph::is_topologically_ordered() const {
  std::unordered_set<std::uint64_t> done;
  for (const Record& r : records_) {
    for (std::uint64_t in : r.inputs) {
      if (!done.count(in)) return false;
    }
    done.insert(r.id);
  }
  return true;
}

void backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw GradError("backward: loss must be scalar, got shape " + to_string(loss.shape()));
  }
  if (!loss.requires_grad()) throw GradError("backward: loss is detached from any graph");

  ComputationGraph graph = ComputationGraph::trace(loss);
  auto& nodes = graph.nodes_;
  for (auto& node : nodes) {
    if (!node->requires_grad) continue;
    if (node->kind != OpKind::kLeaf || node->grad.size() != node->value.size()) {
      node->grad = Array::Zero(node->value.size());
    }
  }
  nodes.back()->grad[0] += 1.0;

  std::vector<const Array*> in_values;
  std::vector<Array*> in_grads;
  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
    detail::Node& node = **it;
    if (!node.backward) continue;
    in_values.clear();
    in_grads.clear();
    for (const auto& in : node.inputs) {
      in_values.push_back(&in->value);
      in_grads.push_back(in->requires_grad ? &in->grad : nullptr);
    }
    node.backward(BackwardContext{node.grad, node.value, in_values, in_grads});
    node.grad.resize(0);  // intermediate gradients are not retained
  }
}

}  // namespace comen
