#include "comen/model.hpp"

#include "comen/errors.hpp"
#include "comen/ops.hpp"

#include <string>

namespace comen {

namespace {

constexpr Index kKernel = 3;
constexpr Index kPool = 2;

Conv make_conv(Index in, Index out, std::mt19937_64& rng) {
  return {he_normal({out, in, kKernel, kKernel}, in * kKernel * kKernel, rng), Tensor::zeros({out}, true)};
}

Index flat_width(const ModelSpec& spec) {
  return spec.conv2_channels * (spec.image.height / (kPool * kPool)) * (spec.image.width / (kPool * kPool));
}

Encoder make_encoder(const ModelSpec& spec, std::mt19937_64& rng) {
  const int branches = spec.norm_branches();
  Conv conv1 = make_conv(spec.image.channels, spec.conv1_channels, rng);
  Conv conv2 = make_conv(spec.conv1_channels, spec.conv2_channels, rng);
  Linear projection = Linear::init(flat_width(spec), spec.embedding_dim, rng);
  return {conv1, SDNorm(branches, spec.conv1_channels, spec.eps), conv2, SDNorm(branches, spec.conv2_channels, spec.eps),
          projection};
}

void check_spec(const ModelSpec& spec) {
  if (spec.image.channels < 1 || spec.image.height % 4 != 0 || spec.image.width % 4 != 0 || spec.image.height < 4 ||
      spec.image.width < 4) {
    throw std::invalid_argument("ModelSpec: image height and width must be positive multiples of 4");
  }
  if (spec.classes < 2 || spec.domains < 1 || spec.embedding_dim < 1) {
    throw std::invalid_argument("ModelSpec: need classes >= 2, domains >= 1, embedding_dim >= 1");
  }
}

}  // namespace

ComenModel make_model(const ModelSpec& spec, std::mt19937_64& rng) {
  check_spec(spec);
  Encoder encoder = make_encoder(spec, rng);
  Linear classifier = Linear::init(spec.embedding_dim, spec.classes, rng);
  return {spec, std::move(encoder), std::move(classifier), std::nullopt, std::nullopt, std::nullopt};
}

void reinitialize_backbone(ComenModel& model, std::mt19937_64& rng) {
  model.encoder = make_encoder(model.spec, rng);
  model.classifier = Linear::init(model.spec.embedding_dim, model.spec.classes, rng);
}

Tensor image_batch(std::span<const TrainingExample> examples, std::span<const std::size_t> rows,
                   const ImageShape& shape) {
  const Index per = static_cast<Index>(shape.channels) * shape.height * shape.width;
  Array v(static_cast<Index>(rows.size()) * per);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& pixels = examples[rows[r]].pixels;
    if (static_cast<Index>(pixels.size()) != per) throw ShapeError("image_batch: sample does not match image shape");
    for (Index j = 0; j < per; ++j) v[static_cast<Index>(r) * per + j] = pixels[static_cast<std::size_t>(j)];
  }
  return Tensor({static_cast<Index>(rows.size()), shape.channels, shape.height, shape.width}, std::move(v));
}

Tensor image_batch(std::span<const TrainingExample> examples, const ImageShape& shape) {
  std::vector<std::size_t> rows(examples.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  return image_batch(examples, rows, shape);
}

Tensor conv_forward(const Conv& conv, const Tensor& images) { return conv2d(images, conv.weight, conv.bias, 1); }

Tensor embed(ComenModel& model, const Tensor& images, const Tensor& norm_assignments, NormMode mode) {
  return embed_from_first(model, conv_forward(model.encoder.conv1, images), norm_assignments, mode);
}

Tensor embed_from_first(ComenModel& model, const Tensor& first, const Tensor& norm_assignments, NormMode mode) {
  Encoder& e = model.encoder;
  Tensor h = avg_pool2d(relu(e.norm1.forward(first, norm_assignments, mode)), kPool);
  h = avg_pool2d(relu(e.norm2.forward(conv_forward(e.conv2, h), norm_assignments, mode)), kPool);
  return e.projection.forward(reshape(h, {h.dim(0), h.size() / h.dim(0)}));
}

Tensor classify(const ComenModel& model, const Tensor& embeddings) { return model.classifier.forward(embeddings); }

Tensor head_assignments(const DomainPredictor& predictor, const Conv& conv, const Tensor& images) {
  return predictor.forward(style_vectors(conv_forward(conv, images)));
}

Tensor inference_assignments(const ComenModel& model, const Tensor& images) {
  if (!model.spec.sdnorm) return Tensor::ones({images.dim(0), 1});
  if (!model.head) throw std::logic_error("inference_assignments: SDNorm model has no domain head");
  return head_assignments(model.head->predictor, model.head->conv, images).detach();
}

std::vector<Tensor> backbone_parameters(const ComenModel& model) {
  const Encoder& e = model.encoder;
  std::vector<Tensor> params{e.conv1.weight, e.conv1.bias};
  for (const Tensor& t : e.norm1.parameters()) params.push_back(t);
  params.push_back(e.conv2.weight);
  params.push_back(e.conv2.bias);
  for (const Tensor& t : e.norm2.parameters()) params.push_back(t);
  params.push_back(e.projection.weight);
  params.push_back(e.projection.bias);
  params.push_back(model.classifier.weight);
  params.push_back(model.classifier.bias);
  return params;
}

// ---------------------------------------------------------------------------
// State dicts

namespace {

NamedArray named(const Tensor& t) { return {t.shape(), t.values()}; }

NamedArray named(const RowArray& a) {
  return {{a.rows(), a.cols()}, Eigen::Map<const Array>(a.data(), a.size())};
}

NamedArray named(const Eigen::VectorXd& v) { return {{v.size()}, v.array()}; }

NamedArray scalar_entry(double v) { return {{1}, Array::Constant(1, v)}; }

const NamedArray& lookup(const StateDict& s, const std::string& key) {
  const auto it = s.find(key);
  if (it == s.end()) throw FormatError("state: missing entry '" + key + "'");
  return it->second;
}

double scalar_of(const StateDict& s, const std::string& key) {
  const NamedArray& a = lookup(s, key);
  if (a.values.size() != 1) throw FormatError("state: entry '" + key + "' is not a scalar");
  return a.values[0];
}

void load_tensor(Tensor& t, const StateDict& s, const std::string& key) {
  const NamedArray& a = lookup(s, key);
  if (a.shape != t.shape()) {
    throw FormatError("state: entry '" + key + "' has shape " + to_string(a.shape) + ", expected " +
                      to_string(t.shape()));
  }
  t.assign(a.values);
}

RowArray load_rows(const StateDict& s, const std::string& key, Index rows, Index cols) {
  const NamedArray& a = lookup(s, key);
  if (a.values.size() != rows * cols) throw FormatError("state: entry '" + key + "' has the wrong size");
  return Eigen::Map<const RowArray>(a.values.data(), rows, cols);
}

void put_conv(StateDict& s, const std::string& prefix, const Conv& c) {
  s[prefix + ".weight"] = named(c.weight);
  s[prefix + ".bias"] = named(c.bias);
}

void put_norm(StateDict& s, const std::string& prefix, const SDNorm& n) {
  s[prefix + ".gain"] = named(n.gain());
  s[prefix + ".bias"] = named(n.bias());
  s[prefix + ".running_mean"] = named(n.running_mean());
  s[prefix + ".running_var"] = named(n.running_var());
}

void get_conv(Conv& c, const StateDict& s, const std::string& prefix) {
  load_tensor(c.weight, s, prefix + ".weight");
  load_tensor(c.bias, s, prefix + ".bias");
}

void get_norm(SDNorm& n, const StateDict& s, const std::string& prefix) {
  Tensor gain = n.gain();
  Tensor bias = n.bias();
  load_tensor(gain, s, prefix + ".gain");
  load_tensor(bias, s, prefix + ".bias");
  n.set_running(load_rows(s, prefix + ".running_mean", n.domains(), n.channels()),
                load_rows(s, prefix + ".running_var", n.domains(), n.channels()));
}

void put_gat(StateDict& s, const std::string& prefix, const GatLayer& g) {
  s[prefix + ".weight"] = named(g.weight);
  s[prefix + ".attention"] = named(g.attention);
}

void get_gat(GatLayer& g, const StateDict& s, const std::string& prefix) {
  load_tensor(g.weight, s, prefix + ".weight");
  load_tensor(g.attention, s, prefix + ".attention");
}

}  // namespace

StateDict state_dict(const ComenModel& model) {
  StateDict s;
  const ModelSpec& spec = model.spec;
  s["spec.image"] = {{3}, (Array(3) << spec.image.channels, spec.image.height, spec.image.width).finished()};
  s["spec.classes"] = scalar_entry(spec.classes);
  s["spec.domains"] = scalar_entry(spec.domains);
  s["spec.embedding_dim"] = scalar_entry(spec.embedding_dim);
  s["spec.sdnorm"] = scalar_entry(spec.sdnorm ? 1.0 : 0.0);
  s["spec.channels"] = {{2}, (Array(2) << spec.conv1_channels, spec.conv2_channels).finished()};
  s["spec.predictor_hidden"] = scalar_entry(spec.predictor_hidden);
  s["spec.eps"] = scalar_entry(spec.eps);

  put_conv(s, "encoder.conv1", model.encoder.conv1);
  put_norm(s, "encoder.norm1", model.encoder.norm1);
  put_conv(s, "encoder.conv2", model.encoder.conv2);
  put_norm(s, "encoder.norm2", model.encoder.norm2);
  s["encoder.projection.weight"] = named(model.encoder.projection.weight);
  s["encoder.projection.bias"] = named(model.encoder.projection.bias);
  s["classifier.weight"] = named(model.classifier.weight);
  s["classifier.bias"] = named(model.classifier.bias);

  if (model.head) {
    put_conv(s, "head.conv", model.head->conv);
    const std::vector<Tensor> p = model.head->predictor.parameters();
    s["head.predictor.w1"] = named(p[0]);
    s["head.predictor.b1"] = named(p[1]);
    s["head.predictor.w2"] = named(p[2]);
    s["head.predictor.b2"] = named(p[3]);
    s["head.predictor.input_mean"] = named(model.head->predictor.input_mean());
    s["head.predictor.input_scale"] = named(model.head->predictor.input_scale());
  }
  if (model.protogr) {
    put_gat(s, "protogr.first", model.protogr->first);
    put_gat(s, "protogr.second", model.protogr->second);
    s["protogr.classifier.weight"] = named(model.protogr->classifier.weight);
    s["protogr.classifier.bias"] = named(model.protogr->classifier.bias);
  }
  if (model.bank) {
    s["bank.prototypes"] = named(RowArray(model.bank->prototypes().array()));
    Array flags(model.bank->cells());
    for (int c = 0; c < model.bank->cells(); ++c) flags[c] = model.bank->initialized()[static_cast<std::size_t>(c)];
    s["bank.initialized"] = {{model.bank->cells()}, flags};
    s["bank.decay"] = scalar_entry(model.bank->decay());
  }
  return s;
}

void load_state(ComenModel& model, const StateDict& s) {
  get_conv(model.encoder.conv1, s, "encoder.conv1");
  get_norm(model.encoder.norm1, s, "encoder.norm1");
  get_conv(model.encoder.conv2, s, "encoder.conv2");
  get_norm(model.encoder.norm2, s, "encoder.norm2");
  load_tensor(model.encoder.projection.weight, s, "encoder.projection.weight");
  load_tensor(model.encoder.projection.bias, s, "encoder.projection.bias");
  load_tensor(model.classifier.weight, s, "classifier.weight");
  load_tensor(model.classifier.bias, s, "classifier.bias");

  if (model.head) {
    get_conv(model.head->conv, s, "head.conv");
    std::vector<Tensor> p = model.head->predictor.parameters();
    load_tensor(p[0], s, "head.predictor.w1");
    load_tensor(p[1], s, "head.predictor.b1");
    load_tensor(p[2], s, "head.predictor.w2");
    load_tensor(p[3], s, "head.predictor.b2");
    model.head->predictor.set_standardization(lookup(s, "head.predictor.input_mean").values.matrix(),
                                              lookup(s, "head.predictor.input_scale").values.matrix());
  }
  if (model.protogr) {
    get_gat(model.protogr->first, s, "protogr.first");
    get_gat(model.protogr->second, s, "protogr.second");
    load_tensor(model.protogr->classifier.weight, s, "protogr.classifier.weight");
    load_tensor(model.protogr->classifier.bias, s, "protogr.classifier.bias");
  }
  if (model.bank) {
    const int cells = model.bank->cells();
    const RowArray protos = load_rows(s, "bank.prototypes", cells, model.bank->dim());
    const NamedArray& flags = lookup(s, "bank.initialized");
    if (flags.values.size() != cells) throw FormatError("state: bank.initialized has the wrong size");
    std::vector<bool> init(static_cast<std::size_t>(cells));
    for (int c = 0; c < cells; ++c) init[static_cast<std::size_t>(c)] = flags.values[c] != 0.0;
    model.bank->restore(protos.matrix(), std::move(init));
  }
}

ComenModel model_from_state(const StateDict& s) {
  ModelSpec spec;
  const NamedArray& image = lookup(s, "spec.image");
  const NamedArray& channels = lookup(s, "spec.channels");
  if (image.values.size() != 3 || channels.values.size() != 2) throw FormatError("state: malformed spec entries");
  spec.image = {static_cast<int>(image.values[0]), static_cast<int>(image.values[1]), static_cast<int>(image.values[2])};
  spec.classes = static_cast<int>(scalar_of(s, "spec.classes"));
  spec.domains = static_cast<int>(scalar_of(s, "spec.domains"));
  spec.embedding_dim = static_cast<int>(scalar_of(s, "spec.embedding_dim"));
  spec.sdnorm = scalar_of(s, "spec.sdnorm") != 0.0;
  spec.conv1_channels = static_cast<int>(channels.values[0]);
  spec.conv2_channels = static_cast<int>(channels.values[1]);
  spec.predictor_hidden = static_cast<int>(scalar_of(s, "spec.predictor_hidden"));
  spec.eps = scalar_of(s, "spec.eps");

  std::mt19937_64 rng(0);
  try {
    check_spec(spec);
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("state: invalid model spec: ") + e.what());
  }
  ComenModel model = make_model(spec, rng);
  if (s.count("head.conv.weight")) {
    model.head = DomainHead{make_conv(spec.image.channels, spec.conv1_channels, rng),
                            DomainPredictor(2 * spec.conv1_channels, spec.domains, spec.predictor_hidden, rng)};
  }
  if (s.count("protogr.first.weight")) model.protogr = ProtoGR::init(spec.embedding_dim, spec.classes, rng);
  if (s.count("bank.prototypes")) {
    model.bank = PrototypeBank(spec.domains, spec.classes, spec.embedding_dim, scalar_of(s, "bank.decay"));
  }
  load_state(model, s);
  return model;
}

}  // namespace comen
