#include "comen/pipeline.hpp"

#include "comen/errors.hpp"
#include "comen/ops.hpp"
#include "comen/proto_contrast.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

namespace comen {

Tensor classification_loss(const Tensor& logits, const std::vector<int>& labels) {
  return cross_entropy(logits, labels);
}

Tensor total_loss(const Tensor& l_cls, const Tensor& l_protogr, const Tensor& l_protoccl, double lambda,
                  double gamma) {
  for (const Tensor* t : {&l_cls, &l_protogr, &l_protoccl}) {
    if (!t->values().allFinite()) throw DivergenceError("total_loss: non-finite loss term");
  }
  return l_cls + l_protogr * lambda + l_protoccl * gamma;
}

double total_loss(double l_cls, double l_protogr, double l_protoccl, double lambda, double gamma) {
  if (!std::isfinite(l_cls) || !std::isfinite(l_protogr) || !std::isfinite(l_protoccl)) {
    throw DivergenceError("total_loss: non-finite loss term");
  }
  return l_cls + lambda * l_protogr + gamma * l_protoccl;
}

std::mt19937_64 stage_rng(const TrainConfig& config, int stage) {
  std::seed_seq seq{static_cast<std::uint32_t>(config.seed), static_cast<std::uint32_t>(config.seed >> 32),
                    static_cast<std::uint32_t>(config.held_out), static_cast<std::uint32_t>(stage)};
  return std::mt19937_64(seq);
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, int batch_size, std::mt19937_64& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> batches;
  const auto step = static_cast<std::size_t>(batch_size);
  for (std::size_t start = 0; start < n; start += step) {
    const std::size_t stop = std::min(n, start + step);
    if (stop - start < 2) break;
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(stop));
  }
  return batches;
}

int latent_domains(const DatasetBundle& bundle, const TrainConfig& config) {
  return config.domains > 0 ? config.domains : std::max(1, bundle.num_domains - 1);
}

namespace {

void check_finite(double value, const char* where) {
  if (!std::isfinite(value)) throw DivergenceError(std::string(where) + ": loss became non-finite");
}

std::vector<int> labels_of(std::span<const TrainingExample> examples, std::span<const std::size_t> rows) {
  std::vector<int> out;
  out.reserve(rows.size());
  for (std::size_t r : rows) out.push_back(examples[r].label);
  return out;
}

std::vector<int> labels_of(std::span<const TrainingExample> examples) {
  std::vector<int> out;
  for (const TrainingExample& e : examples) out.push_back(e.label);
  return out;
}

RowMatrix gather_rows(const RowMatrix& m, std::span<const std::size_t> rows) {
  RowMatrix out(static_cast<Index>(rows.size()), m.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Index>(r)) = m.row(static_cast<Index>(rows[r]));
  return out;
}

Conv frozen_copy(const Conv& c) {
  return {Tensor(c.weight.shape(), c.weight.values()), Tensor(c.bias.shape(), c.bias.values())};
}

ModelSpec spec_for(const DatasetBundle& bundle, const TrainConfig& config) {
  ModelSpec spec;
  spec.image = bundle.image;
  spec.classes = bundle.num_classes;
  spec.domains = latent_domains(bundle, config);
  spec.embedding_dim = config.embedding_dim;
  spec.sdnorm = config.switches.sdnorm;
  spec.eps = config.eps;
  return spec;
}

SgdOptions sgd_options(const TrainConfig& c, double lr) { return {lr, c.momentum, c.weight_decay}; }

constexpr std::size_t kEvalChunk = 256;

// Frozen-head assignments for a set of examples, chunked for memory.
RowMatrix head_rows(const ComenModel& model, std::span<const TrainingExample> examples) {
  RowMatrix out(static_cast<Index>(examples.size()), model.spec.norm_branches());
  for (std::size_t start = 0; start < examples.size(); start += kEvalChunk) {
    const std::size_t stop = std::min(examples.size(), start + kEvalChunk);
    const Tensor images = image_batch(examples.subspan(start, stop - start), model.spec.image);
    out.middleRows(static_cast<Index>(start), static_cast<Index>(stop - start)) =
        inference_assignments(model, images).matrix();
  }
  return out;
}

double val_accuracy(ComenModel& model, const FoldSplit& split) {
  if (split.val.empty()) return 0.0;
  return evaluate(model, split.val, model.spec.classes).accuracy;
}

}  // namespace

// ---------------------------------------------------------------------------
// Stage 1

Stage1Result train_stage1(const DatasetBundle& bundle, const FoldSplit& split, const TrainConfig& config) {
  validate(config);
  if (split.train.size() < 2) throw InsufficientBatchError("train_stage1: need at least two training samples");
  std::mt19937_64 rng = stage_rng(config, 1);
  const ModelSpec spec = spec_for(bundle, config);
  const int m = spec.domains;
  Stage1Result result{make_model(spec, rng), {}, {}, {}, {}, {}};
  ComenModel& model = result.model;
  const std::span<const TrainingExample> train(split.train);

  std::optional<DomainPredictor> predictor;
  std::vector<Tensor> params = backbone_parameters(model);
  if (spec.sdnorm) {
    const Tensor all_images = image_batch(train, spec.image);
    const RowMatrix styles = style_vectors(conv_forward(model.encoder.conv1, all_images)).matrix();
    result.bootstrap_labels = bootstrap_pseudo_domains(styles, m, config.seed);

    predictor.emplace(static_cast<int>(styles.cols()), m, spec.predictor_hidden, rng);
    const Eigen::RowVectorXd mu = styles.colwise().mean();
    Eigen::VectorXd scale =
        ((styles.rowwise() - mu).array().square().colwise().sum() / static_cast<double>(styles.rows())).sqrt();
    scale = scale.cwiseMax(1e-8);
    predictor->set_standardization(mu.transpose(), scale);
    PretrainOptions pretrain;
    pretrain.epochs = config.pretrain_epochs;
    pretrain.portion = config.pretrain_portion;
    pretrain_predictor(*predictor, styles, result.bootstrap_labels, pretrain, rng);
    // F_d reads styles through a frozen copy of the first convolution, so its
    // input space stays the one the bootstrap clustered.
    model.head = DomainHead{frozen_copy(model.encoder.conv1), *predictor};
  }

  Sgd sgd(params, sgd_options(config, config.stage1.learning_rate));
  // No weight decay on F_d: shrinking its logits would work against L_d.
  std::optional<Sgd> head_sgd;
  if (predictor) head_sgd.emplace(predictor->parameters(), SgdOptions{config.stage1.learning_rate, config.momentum, 0.0});
  const double collapse_floor = 1.0 / (4.0 * m);
  for (int epoch = 0; epoch < config.stage1.epochs; ++epoch) {
    sgd.set_learning_rate(config.stage1.learning_rate_at(epoch));
    if (head_sgd) head_sgd->set_learning_rate(config.stage1.learning_rate_at(epoch));
    double loss_sum = 0.0;
    double entropy_sum = 0.0;
    std::size_t seen = 0;
    const auto batches = epoch_batches(train.size(), config.stage1.batch_size, rng);
    for (const auto& batch : batches) {
      const Tensor images = image_batch(train, batch, spec.image);
      const std::vector<int> labels = labels_of(train, batch);
      const auto b = static_cast<Index>(batch.size());
      sgd.zero_grad();
      if (head_sgd) head_sgd->zero_grad();
      Tensor loss;
      if (spec.sdnorm) {
        const Tensor p = head_assignments(*predictor, model.head->conv, images);
        const Tensor l_cls = classification_loss(classify(model, embed(model, images, p, NormMode::kTrain)), labels);
        const Tensor l_d = entropy_loss(p);
        loss = l_cls + l_d;
        const Eigen::RowVectorXd mass = p.matrix().colwise().mean();
        if (mass.minCoeff() < collapse_floor) loss = loss + balance_penalty(p) * config.balance_weight;
        entropy_sum += l_d.item() * static_cast<double>(b);
      } else {
        loss = classification_loss(classify(model, embed(model, images, Tensor::ones({b, 1}), NormMode::kTrain)), labels);
      }
      check_finite(loss.item(), "train_stage1");
      backward(loss);
      sgd.step();
      if (head_sgd) head_sgd->step();
      result.step_losses.push_back(loss.item());
      loss_sum += loss.item();
      seen += batch.size();
    }
    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.loss = batches.empty() ? 0.0 : loss_sum / static_cast<double>(batches.size());
    rec.entropy = seen == 0 ? 0.0 : entropy_sum / static_cast<double>(seen);
    rec.val_accuracy = val_accuracy(model, split);
    result.curve.push_back(rec);
  }

  // Source samples in ascending bundle order.
  result.source_index = split.train_index;
  result.source_index.insert(result.source_index.end(), split.val_index.begin(), split.val_index.end());
  std::sort(result.source_index.begin(), result.source_index.end());
  if (spec.sdnorm) {
    model.head->predictor = *predictor;
    std::vector<TrainingExample> source;
    for (std::size_t i : result.source_index) {
      const Sample& s = bundle.samples[i];
      source.push_back({std::span<const float>(s.pixels), s.class_label});
    }
    result.assignments = head_rows(model, source);
  } else {
    // Random balanced hard split into m domains.
    std::vector<std::size_t> order(result.source_index.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    result.assignments = RowMatrix::Zero(static_cast<Index>(order.size()), m);
    for (std::size_t pos = 0; pos < order.size(); ++pos) {
      result.assignments(static_cast<Index>(order[pos]), static_cast<Index>(pos % static_cast<std::size_t>(m))) = 1.0;
    }
  }
  return result;
}

RowMatrix assignments_for(const std::vector<std::size_t>& source_index, const RowMatrix& assignments,
                          const std::vector<std::size_t>& bundle_index) {
  if (static_cast<Index>(source_index.size()) != assignments.rows()) {
    throw ShapeError("assignments_for: " + std::to_string(assignments.rows()) + " rows for " +
                     std::to_string(source_index.size()) + " source samples");
  }
  std::vector<std::size_t> rows;
  rows.reserve(bundle_index.size());
  for (std::size_t i : bundle_index) {
    const auto it = std::lower_bound(source_index.begin(), source_index.end(), i);
    if (it == source_index.end() || *it != i) {
      throw std::out_of_range("assignments_for: sample " + std::to_string(i) + " is not a source sample");
    }
    rows.push_back(static_cast<std::size_t>(it - source_index.begin()));
  }
  return gather_rows(assignments, rows);
}

RowMatrix assignments_for(const Stage1Result& stage1, const std::vector<std::size_t>& bundle_index) {
  return assignments_for(stage1.source_index, stage1.assignments, bundle_index);
}

// ---------------------------------------------------------------------------
// Stage 2

Stage2Result train_stage2(ComenModel model, const FoldSplit& split, const RowMatrix& train_assignments,
                          const TrainConfig& config) {
  validate(config);
  const ModelSpec spec = model.spec;
  const AblationSwitches& sw = config.switches;
  if (sw.sdnorm != spec.sdnorm) throw ConfigError("train_stage2: ablation.sdnorm does not match the stage-1 model");
  if (static_cast<std::size_t>(train_assignments.rows()) != split.train.size() ||
      train_assignments.cols() != spec.domains) {
    throw ShapeError("train_stage2: assignments must be " + std::to_string(split.train.size()) + " x " +
                     std::to_string(spec.domains));
  }
  if (config.refine_predictor && !model.head) {
    throw ConfigError("train_stage2: refine_predictor needs a domain head (SDNorm on)");
  }
  std::mt19937_64 rng = stage_rng(config, 2);
  if (config.restart) reinitialize_backbone(model, rng);

  const std::span<const TrainingExample> train(split.train);
  const bool use_bank = sw.protogr || sw.protoccl;
  model.protogr.reset();
  model.bank.reset();
  if (sw.protogr) model.protogr = ProtoGR::init(spec.embedding_dim, spec.classes, rng);
  if (use_bank) {
    model.bank = PrototypeBank(spec.domains, spec.classes, spec.embedding_dim, config.rho);
    // Fill every cell from one inference pass over the training split.
    const Tensor emb = embed(model, image_batch(train, spec.image),
                             spec.sdnorm ? Tensor::from_rows(train_assignments) : Tensor::ones({static_cast<Index>(train.size()), 1}),
                             NormMode::kInfer);
    const LocalPrototypes init = local_prototypes(emb.detach(), labels_of(train), train_assignments, spec.classes);
    model.bank->initialize(init.prototypes.matrix(), init.present);
  }

  std::vector<Tensor> params = backbone_parameters(model);
  if (model.protogr) {
    for (const Tensor& p : model.protogr->parameters()) params.push_back(p);
  }
  if (config.refine_predictor) {
    for (const Tensor& p : model.head->predictor.parameters()) params.push_back(p);
  }
  Sgd sgd(params, sgd_options(config, config.stage2.learning_rate));
  const ContrastOptions contrast{config.tau, config.normalize_prototypes};

  Stage2Result result{model, {}, {}, -1, -1.0};
  ComenModel& live = result.model;
  StateDict best;
  for (int epoch = 0; epoch < config.stage2.epochs; ++epoch) {
    sgd.set_learning_rate(config.stage2.learning_rate_at(epoch));
    double loss_sum = 0.0;
    const auto batches = epoch_batches(train.size(), config.stage2.batch_size, rng);
    for (const auto& batch : batches) {
      const Tensor images = image_batch(train, batch, spec.image);
      const std::vector<int> labels = labels_of(train, batch);
      const RowMatrix q = gather_rows(train_assignments, batch);
      const auto b = static_cast<Index>(batch.size());
      sgd.zero_grad();

      Tensor norm_p;
      Tensor l_refine;
      if (config.refine_predictor) {
        norm_p = head_assignments(live.head->predictor, live.head->conv, images);
        l_refine = entropy_loss(norm_p);
      } else {
        norm_p = spec.sdnorm ? Tensor::from_rows(q) : Tensor::ones({b, 1});
      }
      const Tensor emb = embed(live, images, norm_p, NormMode::kTrain);
      Tensor loss = classification_loss(classify(live, emb), labels);
      LocalPrototypes local;
      if (use_bank) {
        local = local_prototypes(emb, labels, q, spec.classes);
        const PrototypeGraph graph =
            make_prototype_graph(live.bank->blend(local), live.bank->usable(local.present), spec.classes, config.delta);
        if (sw.protogr) loss = loss + live.protogr->loss(graph) * config.lambda;
        if (sw.protoccl) loss = loss + protoccl_loss(graph.features, graph.labels, contrast) * config.gamma;
      }
      if (config.refine_predictor) loss = loss + l_refine;
      check_finite(loss.item(), "train_stage2");
      backward(loss);
      sgd.step();
      if (use_bank) live.bank->ema_update(local.prototypes.matrix(), local.present);
      result.step_losses.push_back(loss.item());
      loss_sum += loss.item();
    }
    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.loss = batches.empty() ? 0.0 : loss_sum / static_cast<double>(batches.size());
    rec.val_accuracy = val_accuracy(live, split);
    result.curve.push_back(rec);
    if (rec.val_accuracy > result.best_val_accuracy) {
      result.best_val_accuracy = rec.val_accuracy;
      result.best_epoch = rec.epoch;
      best = state_dict(live);
    }
  }
  if (!best.empty()) load_state(live, best);
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation

FoldMetrics evaluate(ComenModel& model, std::span<const TrainingExample> examples, int classes) {
  FoldMetrics out;
  out.predictions.reserve(examples.size());
  for (std::size_t start = 0; start < examples.size(); start += kEvalChunk) {
    const std::size_t stop = std::min(examples.size(), start + kEvalChunk);
    const Tensor images = image_batch(examples.subspan(start, stop - start), model.spec.image);
    const Tensor p = inference_assignments(model, images);
    const RowMatrix logits = classify(model, embed(model, images, p, NormMode::kInfer)).matrix();
    for (Index i = 0; i < logits.rows(); ++i) {
      Eigen::Index best = 0;
      logits.row(i).maxCoeff(&best);
      out.predictions.push_back(static_cast<int>(best));
    }
  }
  std::vector<int> truth;
  truth.reserve(examples.size());
  for (const TrainingExample& e : examples) truth.push_back(e.label);
  out.confusion = confusion_matrix(truth, out.predictions, classes);
  out.accuracy = accuracy(out.confusion);
  return out;
}

DiscoveryQuality discovery_quality(const RowMatrix& assignments, const std::vector<int>& true_domains) {
  std::vector<int> clusters;
  clusters.reserve(static_cast<std::size_t>(assignments.rows()));
  for (Index i = 0; i < assignments.rows(); ++i) {
    Eigen::Index best = 0;
    assignments.row(i).maxCoeff(&best);
    clusters.push_back(static_cast<int>(best));
  }
  return {matched_accuracy(true_domains, clusters), normalized_mutual_information(true_domains, clusters)};
}

FoldRun run_fold(const DatasetBundle& bundle, const TrainConfig& config) {
  const FoldSplit split = leave_one_domain_out(bundle, config.held_out, config.seed);
  Stage1Result stage1 = train_stage1(bundle, split, config);
  const RowMatrix train_p = assignments_for(stage1, split.train_index);
  Stage2Result stage2 = train_stage2(model_from_state(state_dict(stage1.model)), split, train_p, config);
  FoldMetrics test = evaluate(stage2.model, split.test, bundle.num_classes);
  return {std::move(stage1), std::move(stage2), std::move(test)};
}

// ---------------------------------------------------------------------------
// Ablation

const std::array<AblationSwitches, 8>& ablation_grid() {
  static const std::array<AblationSwitches, 8> grid{{
      {false, false, false},
      {true, false, false},
      {false, true, false},
      {false, false, true},
      {false, true, true},
      {true, true, false},
      {true, false, true},
      {true, true, true},
  }};
  return grid;
}

double AblationRow::mean() const {
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& per_seed : accuracy) {
    for (double a : per_seed) {
      total += a;
      ++n;
    }
  }
  return n == 0 ? 0.0 : total / static_cast<double>(n);
}

std::vector<double> AblationRow::fold_means() const {
  if (accuracy.empty()) return {};
  std::vector<double> out(accuracy.front().size(), 0.0);
  for (const auto& per_seed : accuracy) {
    for (std::size_t f = 0; f < out.size(); ++f) out[f] += per_seed[f];
  }
  for (double& v : out) v /= static_cast<double>(accuracy.size());
  return out;
}

AblationReport run_ablation(const DatasetBundle& bundle, const TrainConfig& config,
                            const std::vector<std::uint64_t>& seeds, const std::vector<int>& folds,
                            const ProgressFn& progress) {
  const auto start = std::chrono::steady_clock::now();
  AblationReport report;
  report.seeds = seeds;
  report.folds = folds;
  for (const AblationSwitches& sw : ablation_grid()) {
    report.rows.push_back({sw, std::vector<std::vector<double>>(seeds.size(), std::vector<double>(folds.size(), 0.0))});
  }
  for (std::size_t si = 0; si < seeds.size(); ++si) {
    for (std::size_t fi = 0; fi < folds.size(); ++fi) {
      TrainConfig cfg = config;
      cfg.seed = seeds[si];
      cfg.held_out = folds[fi];
      const FoldSplit split = leave_one_domain_out(bundle, cfg.held_out, cfg.seed);
      for (bool sdnorm : {false, true}) {
        cfg.switches = {sdnorm, false, false};
        const Stage1Result stage1 = train_stage1(bundle, split, cfg);
        const StateDict start_state = state_dict(stage1.model);
        const RowMatrix train_p = assignments_for(stage1, split.train_index);
        for (AblationRow& row : report.rows) {
          if (row.switches.sdnorm != sdnorm) continue;
          cfg.switches = row.switches;
          Stage2Result stage2 = train_stage2(model_from_state(start_state), split, train_p, cfg);
          const double acc = evaluate(stage2.model, split.test, bundle.num_classes).accuracy;
          row.accuracy[si][fi] = acc;
          if (progress) {
            std::ostringstream msg;
            msg << "seed=" << cfg.seed << " fold=" << cfg.held_out << " sdnorm=" << row.switches.sdnorm
                << " protogr=" << row.switches.protogr << " protoccl=" << row.switches.protoccl
                << " accuracy=" << std::setprecision(6) << acc;
            progress(msg.str());
          }
        }
      }
    }
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

// ---------------------------------------------------------------------------
// Text outputs

std::string format_record(const Record& record) {
  std::string line;
  for (const auto& [key, value] : record) {
    if (key.empty() || key.find_first_of(" =\n") != std::string::npos || value.find_first_of(" \n") != std::string::npos) {
      throw std::invalid_argument("format_record: keys and values must not contain spaces or newlines");
    }
    if (!line.empty()) line += ' ';
    line += key + '=' + value;
  }
  return line;
}

Record parse_record(const std::string& line) {
  Record out;
  std::istringstream in(line);
  std::string token;
  while (in >> token) {
    const auto eq = token.find('=');
    if (eq == std::string::npos || eq == 0) throw FormatError("parse_record: malformed token '" + token + "'");
    out.emplace_back(token.substr(0, eq), token.substr(eq + 1));
  }
  return out;
}

std::string confusion_csv(const ConfusionMatrix& confusion) {
  std::ostringstream out;
  for (Index k = 0; k < confusion.cols(); ++k) out << (k ? "," : "") << k;
  out << '\n';
  for (Index r = 0; r < confusion.rows(); ++r) {
    for (Index k = 0; k < confusion.cols(); ++k) out << (k ? "," : "") << confusion(r, k);
    out << '\n';
  }
  return out.str();
}

std::string curve_csv(const std::vector<std::pair<int, double>>& points) {
  std::ostringstream out;
  out << "epoch,value\n";
  char buf[64];
  for (const auto& [epoch, value] : points) {
    std::snprintf(buf, sizeof buf, "%d,%.17g\n", epoch, value);
    out << buf;
  }
  return out.str();
}

std::vector<std::pair<int, double>> loss_points(const std::vector<EpochRecord>& curve) {
  std::vector<std::pair<int, double>> out;
  for (const EpochRecord& r : curve) out.emplace_back(r.epoch, r.loss);
  return out;
}

std::string format_assignments(const RowMatrix& assignments) {
  std::string out = "# M=" + std::to_string(assignments.cols()) + " N=" + std::to_string(assignments.rows()) + "\n";
  char buf[32];
  for (Index i = 0; i < assignments.rows(); ++i) {
    for (Index m = 0; m < assignments.cols(); ++m) {
      std::snprintf(buf, sizeof buf, "%.9g", assignments(i, m));
      if (m) out += ' ';
      out += buf;
    }
    out += '\n';
  }
  return out;
}

RowMatrix parse_assignments(const std::string& text) {
  std::istringstream in(text);
  std::string header;
  std::getline(in, header);
  long m = 0;
  long n = 0;
  if (std::sscanf(header.c_str(), "# M=%ld N=%ld", &m, &n) != 2 || m < 1 || n < 0) {
    throw MalformedHeaderError("assignments: expected '# M=<m> N=<n>' header");
  }
  RowMatrix out(n, m);
  for (long i = 0; i < n; ++i) {
    std::string line;
    if (!std::getline(in, line)) throw TruncatedPayloadError("assignments: file ends before row " + std::to_string(i));
    std::istringstream row(line);
    for (long j = 0; j < m; ++j) {
      if (!(row >> out(i, j))) throw FormatError("assignments: row " + std::to_string(i) + " has too few values");
    }
    std::string extra;
    if (row >> extra) throw FormatError("assignments: row " + std::to_string(i) + " has too many values");
  }
  std::string rest;
  while (std::getline(in, rest)) {
    if (rest.find_first_not_of(" \t\r") != std::string::npos) throw FormatError("assignments: trailing content");
  }
  return out;
}

void write_assignments(const std::filesystem::path& path, const RowMatrix& assignments) {
  write_text(path, format_assignments(assignments));
}

RowMatrix read_assignments(const std::filesystem::path& path) { return parse_assignments(read_text(path)); }

namespace {

std::string fixed(double v, int digits = 9) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string switch_name(const AblationSwitches& s) {
  return std::string(s.sdnorm ? "1" : "0") + (s.protogr ? "1" : "0") + (s.protoccl ? "1" : "0");
}

}  // namespace

std::vector<Record> ablation_records(const AblationReport& report) {
  std::vector<Record> out;
  for (const AblationRow& row : report.rows) {
    for (std::size_t si = 0; si < report.seeds.size(); ++si) {
      for (std::size_t fi = 0; fi < report.folds.size(); ++fi) {
        out.push_back({{"kind", "ablation"},
                       {"sdnorm", row.switches.sdnorm ? "1" : "0"},
                       {"protogr", row.switches.protogr ? "1" : "0"},
                       {"protoccl", row.switches.protoccl ? "1" : "0"},
                       {"seed", std::to_string(report.seeds[si])},
                       {"fold", std::to_string(report.folds[fi])},
                       {"accuracy", fixed(row.accuracy[si][fi])}});
      }
    }
  }
  return out;
}

AblationReport report_from_records(const std::vector<Record>& records) {
  std::set<std::uint64_t> seeds;
  std::set<int> folds;
  std::map<std::string, std::map<std::pair<std::uint64_t, int>, double>> values;
  for (const Record& r : records) {
    std::map<std::string, std::string> kv(r.begin(), r.end());
    if (kv["kind"] != "ablation") continue;
    try {
      const std::uint64_t seed = std::stoull(kv.at("seed"));
      const int fold = std::stoi(kv.at("fold"));
      const std::string key = kv.at("sdnorm") + kv.at("protogr") + kv.at("protoccl");
      values[key][{seed, fold}] = std::stod(kv.at("accuracy"));
      seeds.insert(seed);
      folds.insert(fold);
    } catch (const std::exception& e) {
      throw FormatError(std::string("report: malformed ablation record: ") + e.what());
    }
  }
  AblationReport report;
  report.seeds.assign(seeds.begin(), seeds.end());
  report.folds.assign(folds.begin(), folds.end());
  for (const AblationSwitches& sw : ablation_grid()) {
    const auto it = values.find(switch_name(sw));
    if (it == values.end()) continue;
    AblationRow row{sw, std::vector<std::vector<double>>(seeds.size(), std::vector<double>(folds.size(), 0.0))};
    std::size_t si = 0;
    for (std::uint64_t seed : seeds) {
      std::size_t fi = 0;
      for (int fold : folds) {
        const auto cell = it->second.find({seed, fold});
        if (cell == it->second.end()) {
          throw FormatError("report: row " + switch_name(sw) + " lacks seed " + std::to_string(seed) + " fold " +
                            std::to_string(fold));
        }
        row.accuracy[si][fi++] = cell->second;
      }
      ++si;
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

std::string ablation_table(const AblationReport& report) {
  std::ostringstream out;
  out << "| SDNorm | ProtoGR | ProtoCCL |";
  for (int f : report.folds) out << " fold " << f << " |";
  out << " mean |\n|---|---|---|";
  for (std::size_t f = 0; f < report.folds.size(); ++f) out << "---|";
  out << "---|\n";
  auto mark = [](bool on) { return on ? "x" : "-"; };
  for (const AblationRow& row : report.rows) {
    out << "| " << mark(row.switches.sdnorm) << " | " << mark(row.switches.protogr) << " | "
        << mark(row.switches.protoccl) << " |";
    for (double v : row.fold_means()) out << ' ' << fixed(100.0 * v, 1) << " |";
    out << ' ' << fixed(100.0 * row.mean(), 1) << " |\n";
  }
  return out.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace comen
