#pragma once

#include "comen/data.hpp"
#include "comen/discovery.hpp"
#include "comen/layers.hpp"
#include "comen/proto_graph.hpp"
#include "comen/prototype_bank.hpp"
#include "comen/style_norm.hpp"
#include "comen/tensor.hpp"

#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace comen {

struct ModelSpec {
  ImageShape image{};
  int classes = 5;
  int domains = 3;        // latent domains used by prototypes (and SDNorm when enabled)
  int embedding_dim = 64;
  bool sdnorm = true;     // false: both norm layers have a single branch (plain BN)
  int conv1_channels = 8;
  int conv2_channels = 16;
  int predictor_hidden = 64;
  double eps = kNormEps;

  int norm_branches() const { return sdnorm ? domains : 1; }
};

struct Conv {
  Tensor weight;  // Co x Ci x 3 x 3
  Tensor bias;    // Co
};

/// conv(3x3) -> SDNorm -> relu -> avgpool(2), twice, then flatten -> linear
/// embedding of width d (no activation).
struct Encoder {
  Conv conv1;
  SDNorm norm1;
  Conv conv2;
  SDNorm norm2;
  Linear projection;
};

/// The domain predictor F_d together with the first-layer convolution whose
/// raw output feeds its style vectors. Frozen at the end of stage 1.
struct DomainHead {
  Conv conv;
  DomainPredictor predictor;
};

struct ComenModel {
  ModelSpec spec;
  Encoder encoder;
  Linear classifier;
  std::optional<DomainHead> head;      // present once stage 1 ran with SDNorm
  std::optional<ProtoGR> protogr;
  std::optional<PrototypeBank> bank;
};

ComenModel make_model(const ModelSpec& spec, std::mt19937_64& rng);
// Fresh encoder and classifier weights; head, graph and bank are untouched.
void reinitialize_backbone(ComenModel& model, std::mt19937_64& rng);

// Stacks training views into a B x C x H x W tensor.
Tensor image_batch(std::span<const TrainingExample> examples, std::span<const std::size_t> rows, const ImageShape& shape);
Tensor image_batch(std::span<const TrainingExample> examples, const ImageShape& shape);

Tensor conv_forward(const Conv& conv, const Tensor& images);

// B x d embeddings; `norm_assignments` is B x norm_branches().
Tensor embed(ComenModel& model, const Tensor& images, const Tensor& norm_assignments, NormMode mode);
// Same, starting from the raw first-convolution output.
Tensor embed_from_first(ComenModel& model, const Tensor& first, const Tensor& norm_assignments, NormMode mode);
Tensor classify(const ComenModel& model, const Tensor& embeddings);

// F_d over style vectors of conv(images) (raw, pre-normalization output).
Tensor head_assignments(const DomainPredictor& predictor, const Conv& conv, const Tensor& images);

// Assignments used by the norm layers at inference: the frozen head's output,
// or a column of ones when SDNorm is off.
Tensor inference_assignments(const ComenModel& model, const Tensor& images);

std::vector<Tensor> backbone_parameters(const ComenModel& model);

// Named copies of every array that defines a model, for snapshots and
// checkpoints. Shapes are kept alongside the values.
struct NamedArray {
  Shape shape;
  Array values;
  bool operator==(const NamedArray& o) const {
    return shape == o.shape && values.size() == o.values.size() && (values == o.values).all();
  }
};
using StateDict = std::map<std::string, NamedArray>;

StateDict state_dict(const ComenModel& model);
// Rebuilds a model (including optional parts) from a state dict.
ComenModel model_from_state(const StateDict& state);
// Overwrites the values of an existing model of the same structure.
void load_state(ComenModel& model, const StateDict& state);

}  // namespace comen
