// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include "comen/checkpoint.hpp"
#include "comen/data.hpp"
#include "comen/discovery.hpp"
#include "comen/errors.hpp"
#include "comen/gradcheck.hpp"
#include "comen/ops.hpp"
#include "comen/pipeline.hpp"
#include "comen/proto_contrast.hpp"
#include "comen/proto_graph.hpp"
#include "comen/style_norm.hpp"
#include "micro.hpp"
#include "oracles.hpp"
#include "plain_trainer.hpp"
#include "support.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>

using namespace comen;
using namespace comen::testing;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string num(double v, int digits = 3) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

// Collects sub-check outcomes and a short reason for the first failure.
struct Verdict {
  bool ok = true;
  std::vector<std::string> notes;
  std::string failure;

  void require(bool condition, const std::string& what) {
    if (!condition && ok) failure = what;
    ok = ok && condition;
  }
  void note(const std::string& s) { notes.push_back(s); }
};

int failures = 0;

void report(int id, const std::string& title, const std::function<void(Verdict&)>& body) {
  Verdict v;
  const auto start = Clock::now();
  try {
    body(v);
  } catch (const std::exception& e) {
    v.require(false, std::string("exception: ") + e.what());
  }
  std::ostringstream line;
  line << "criterion " << id << ": " << (v.ok ? "PASS" : "FAIL") << "  " << title << " ("
       << num(seconds_since(start), 3) << " s";
  for (const std::string& n : v.notes) line << "; " << n;
  line << ")";
  if (!v.ok) line << "  first failure: " << v.failure;
  std::cout << line.str() << std::endl;
  if (!v.ok) ++failures;
}

const DatasetBundle& default_bundle() {
  static const DatasetBundle bundle = generate_benchmark({});
  return bundle;
}

const DatasetBundle& small_bundle() {
  static const DatasetBundle bundle = [] {
    BenchmarkParams p;
    p.seed = 5;
    p.domains = 3;
    p.classes = 3;
    p.per_cell = 12;
    p.image = {3, 8, 8};
    return generate_benchmark(p);
  }();
  return bundle;
}

TrainConfig small_config() {
  TrainConfig c;
  c.embedding_dim = 8;
  c.stage1.epochs = 3;
  c.stage2.epochs = 3;
  c.stage1.batch_size = 16;
  c.stage2.batch_size = 16;
  c.pretrain_epochs = 10;
  return c;
}

std::vector<TrainingExample> all_examples(const DatasetBundle& b) {
  std::vector<TrainingExample> out;
  for (const Sample& s : b.samples) out.push_back({std::span<const float>(s.pixels), s.class_label});
  return out;
}

std::vector<int> random_labels(std::mt19937_64& rng, Index n, int classes) {
  std::uniform_int_distribution<int> pick(0, classes - 1);
  std::vector<int> out(static_cast<std::size_t>(n));
  for (int& y : out) y = pick(rng);
  return out;
}

// ---------------------------------------------------------------------------

void gradient_suite(Verdict& v) {
  constexpr int kInstances = 20;
  std::mt19937_64 rng(101);
  double worst = 0.0;
  auto track = [&](double err, const char* what) {
    worst = std::max(worst, err);
    v.require(err < 1e-4, std::string(what) + " error " + num(err));
  };
  const auto start = Clock::now();
  for (int t = 0; t < kInstances; ++t) {
    const Index b = 4 + t % 5;
    const int m = 1 + t % 4;
    const int k = 2 + t % 4;
    const Index d = 3 + t % 6;

    const Tensor logits = random_tensor(rng, {b, m}, -2, 2, true);
    track(finite_difference_check([&](const Tensor& z) { return entropy_loss(softmax(z, 1)); }, logits), "entropy");

    const MicroInstance micro(rng, b * 2, m, k, d);
    const auto params = micro.parameters();
    track(finite_difference_check([&] { return micro.cls(); }, params), "cross-entropy");
    track(finite_difference_check([&] { return micro.protogr(); }, params), "ProtoGR");
    track(finite_difference_check([&] { return micro.protoccl(); }, params), "ProtoCCL");
    track(finite_difference_check([&] { return micro.total(); }, params), "total");

    SDNorm layer(m, 2);
    Tensor gain = layer.gain();
    Tensor bias = layer.bias();
    gain.assign(random_tensor(rng, {m, 2}, 0.5, 1.5).values());
    bias.assign(random_tensor(rng, {m, 2}).values());
    const Tensor x = random_tensor(rng, {b, 2, 2, 2}, -1, 1, true);
    const Tensor p_logits = random_tensor(rng, {b, m}, -1, 1, true);
    const Tensor w = random_tensor(rng, {b, 2, 2, 2});
    track(finite_difference_check(
              [&] { return sum(layer.forward(x, softmax(p_logits, 1), NormMode::kTrain) * w); },
              {x, p_logits, gain, bias}),
          "SDNorm forward");
  }
  const double elapsed = seconds_since(start);
  v.require(elapsed < 60.0, "runtime " + num(elapsed) + " s");
  v.note(std::to_string(kInstances) + " instances x 6 functions, max rel error " + num(worst));
}

void oracle_suite(Verdict& v) {
  std::mt19937_64 rng(202);
  double worst = 0.0;
  auto track = [&](double err, const char* what) {
    worst = std::max(worst, err);
    v.require(err < 1e-10, std::string(what) + " error " + num(err));
  };
  for (int t = 0; t < 20; ++t) {
    const int m = 1 + t % 4;
    const int k = 2 + t % 5;
    const Index d = 2 + (3 * t) % 15;

    const Tensor batch = random_tensor(rng, {7, 3, 2, 2}, -2, 2);
    const Tensor p = random_assignments(rng, 7, m);
    const DomainStats s = weighted_domain_stats(batch, p);
    const OracleStats o = oracle_weighted_stats(batch, p);
    track((s.mean.matrix().array() - o.mean).abs().maxCoeff(), "weighted_domain_stats mean");
    track((s.var.matrix().array() - o.var).abs().maxCoeff(), "weighted_domain_stats var");

    const Tensor emb = random_tensor(rng, {12, d}, -2, 2);
    const std::vector<int> labels = random_labels(rng, 12, k);
    const RowMatrix q = random_assignments(rng, 12, m).matrix();
    track((local_prototypes(emb, labels, q, k).prototypes.matrix() - oracle_local(emb, labels, q, k))
              .cwiseAbs()
              .maxCoeff(),
          "local_prototypes");

    const Index n = 2 + t % 10;
    const RowMatrix xr = random_tensor(rng, {n, d}).matrix();
    const RowMatrix adj = build_adjacency(xr, 0.1);
    const GatLayer g = GatLayer::init(d, d, rng);
    const RowMatrix expect =
        oracle_gat(xr, adj, g.weight.matrix(), g.attention.values().matrix(), 0.2, t % 2 == 0);
    track((g.forward(Tensor::from_rows(xr), adj, t % 2 == 0).matrix() - expect).cwiseAbs().maxCoeff(), "gat_layer");

    const Tensor query = random_tensor(rng, {d});
    const Tensor pos = random_tensor(rng, {d});
    const Tensor negs = random_tensor(rng, {1 + t % 6, d});
    track(std::abs(info_nce(query, pos, negs, 0.5).item() -
                   oracle_info_nce(query.values().matrix(), pos.values().matrix(), negs.matrix(), 0.5)),
          "info_nce");

    const Tensor nodes = random_tensor(rng, {m * k, d}, -2, 2);
    std::vector<int> node_labels;
    for (int c = 0; c < m * k; ++c) node_labels.push_back(c % k);
    for (bool normalize : {true, false}) {
      track(std::abs(protoccl_loss(nodes, node_labels, {0.5, normalize}).item() -
                     oracle_protoccl(nodes.matrix(), node_labels, 0.5, normalize)),
            "protoccl_loss");
    }

    const Tensor z = random_tensor(rng, {9, k}, -3, 3);
    const std::vector<int> y = random_labels(rng, 9, k);
    track(std::abs(classification_loss(z, y).item() - oracle_cross_entropy(z.matrix(), y)), "classification_loss");
  }
  v.note("20 instances per function, max abs error " + num(worst));
}

void reduction_suite(Verdict& v) {
  std::mt19937_64 rng(303);
  double worst = 0.0;
  for (int t = 0; t < 10; ++t) {
    const Index b = 2 + t;
    const Tensor batch = random_tensor(rng, {b, 3, 4, 4}, -3, 3);
    SDNorm layer(1, 3);
    const Tensor out = layer.forward(batch, Tensor::ones({b, 1}), NormMode::kTrain);
    std::vector<Index> members(static_cast<std::size_t>(b));
    std::iota(members.begin(), members.end(), Index{0});
    worst = std::max(worst, (out.values() - oracle_batch_norm(batch, members, kNormEps)).abs().maxCoeff());
  }
  v.require(worst < 1e-10, "M=1 SDNorm differs from batch norm by " + num(worst));
  v.note("M=1 vs BN max error " + num(worst));

  TrainConfig config;
  config.switches = {false, false, false};
  const DatasetBundle& bundle = default_bundle();
  const FoldSplit split = leave_one_domain_out(bundle, 0, config.seed);
  const Stage1Result stage1 = train_stage1(bundle, split, config);
  const std::vector<double> plain1 = plain_stage1_losses(bundle, split, config);
  v.require(plain1 == stage1.step_losses, "stage-1 loss sequence differs from plain cross-entropy");
  const StateDict start = state_dict(stage1.model);
  const Stage2Result stage2 =
      train_stage2(model_from_state(start), split, assignments_for(stage1, split.train_index), config);
  const std::vector<double> plain2 = plain_ce_losses(model_from_state(start), split, config);
  v.require(plain2 == stage2.step_losses, "stage-2 loss sequence differs from plain cross-entropy");
  v.note(std::to_string(plain1.size() + plain2.size()) + " step losses bit-identical");
}

void closed_form_suite(Verdict& v) {
  const double h = entropy_loss(Tensor::from_rows(RowMatrix::Constant(4, 3, 1.0 / 3.0))).item();
  v.require(std::abs(h - std::log(3.0)) <= 1e-12, "uniform entropy " + num(h, 17));

  PrototypeBank bank(1, 2, 1, 0.7);
  RowMatrix prev(2, 1);
  prev << 1.0, 0.0;
  bank.initialize(prev, {true, true});
  RowMatrix target(2, 1);
  target << 0.0, 1.0;
  bank.ema_update(target, {true, true});
  const RowMatrix& c = bank.prototypes();
  v.require(c(0, 0) == 0.7 && c(1, 0) == 1.0 - 0.7, "EMA step gave (" + num(c(0, 0), 17) + ", " + num(c(1, 0), 17) + ")");

  v.require(total_loss(1.0, 2.0, 3.0) == 1.5, "total_loss(1,2,3) = " + num(total_loss(1.0, 2.0, 3.0), 17));

  Array unit(2);
  unit << 1.0, 0.0;
  const Tensor q({2}, unit);
  const double nce = info_nce(q, q, Tensor({1, 2}, unit), 0.5).item();
  v.require(std::abs(nce - std::log(2.0)) <= 1e-12, "symmetric InfoNCE " + num(nce, 17));
  v.note("ln3, EMA, 1.5 and ln2 exact");
}

void structure_suite(Verdict& v) {
  std::mt19937_64 rng(505);
  double attention_err = 0.0;
  double adjacency_err = 0.0;
  for (int t = 0; t < 20; ++t) {
    const Index n = 2 + t % 9;
    const Index d = 2 + t % 6;
    const RowMatrix x = random_tensor(rng, {n, d}).matrix();
    const RowMatrix adj = build_adjacency(x, 0.2 * (t % 4));
    adjacency_err = std::max(adjacency_err, (adj - adj.transpose()).cwiseAbs().maxCoeff());
    adjacency_err = std::max(adjacency_err, (adj.diagonal().array() - 1.0).abs().maxCoeff());
    const GatLayer g = GatLayer::init(d, d, rng);
    const RowMatrix alpha = g.attention_weights(Tensor::from_rows(x), adj).matrix();
    attention_err = std::max(attention_err, (alpha.rowwise().sum().array() - 1.0).abs().maxCoeff());
  }
  v.require(attention_err <= 1e-9, "attention row sum error " + num(attention_err));
  v.require(adjacency_err == 0.0, "adjacency asymmetry or non-unit diagonal " + num(adjacency_err));

  const TrainConfig config = small_config();
  const FoldRun a = run_fold(small_bundle(), config);
  const FoldRun b = run_fold(small_bundle(), config);
  const RowMatrix& p = a.stage1.assignments;
  const double row_err = (p.rowwise().sum().array() - 1.0).abs().maxCoeff();
  v.require(row_err <= 1e-9 && (p.array() >= 0.0).all(), "assignment row sum error " + num(row_err));

  const ConfusionMatrix& cm = a.test.confusion;
  long correct = 0;
  for (std::size_t i = 0; i < a.test.predictions.size(); ++i) {
    correct += a.test.predictions[i] == small_bundle().samples[leave_one_domain_out(small_bundle(), config.held_out, config.seed).test_index[i]].class_label;
  }
  v.require(cm.trace() == correct && cm.sum() == static_cast<long>(a.test.predictions.size()),
            "confusion trace does not count correct predictions");
  v.require(std::abs(a.test.accuracy - static_cast<double>(cm.trace()) / static_cast<double>(cm.sum())) < 1e-15,
            "accuracy is not trace / total");

  v.require(a.stage1.step_losses == b.stage1.step_losses && a.stage2.step_losses == b.stage2.step_losses &&
                a.stage1.assignments == b.stage1.assignments && a.test.predictions == b.test.predictions &&
                serialize_checkpoint(state_dict(a.stage2.model)) == serialize_checkpoint(state_dict(b.stage2.model)),
            "two runs with the same seed differ");
  v.require(serialize_bundle(generate_benchmark({})) == serialize_bundle(default_bundle()),
            "dataset generation is not deterministic");
  v.note("attention row error " + num(attention_err) + ", assignment row error " + num(row_err) +
         ", repeated runs identical");
}

void discovery_suite(Verdict& v) {
  const DatasetBundle& bundle = default_bundle();
  TrainConfig config;
  // The bootstrap exactly as stage 1 runs it, on every sample of the bundle.
  std::mt19937_64 rng = stage_rng(config, 1);
  ModelSpec spec;
  spec.image = bundle.image;
  spec.classes = bundle.num_classes;
  spec.domains = bundle.num_domains;
  spec.embedding_dim = config.embedding_dim;
  const ComenModel model = make_model(spec, rng);
  const std::vector<TrainingExample> examples = all_examples(bundle);
  const RowMatrix styles = style_vectors(conv_forward(model.encoder.conv1, image_batch(examples, bundle.image))).matrix();
  const std::vector<int> clusters = bootstrap_pseudo_domains(styles, bundle.num_domains, config.seed);
  std::vector<int> truth;
  for (const Sample& s : bundle.samples) truth.push_back(s.true_domain);
  const double matched = matched_accuracy(truth, clusters);
  v.require(matched >= 0.9, "bootstrap matched accuracy " + num(matched));

  const FoldSplit split = leave_one_domain_out(bundle, 0, config.seed);
  const Stage1Result stage1 = train_stage1(bundle, split, config);
  const double first = stage1.curve.front().entropy;
  const double last = stage1.curve.back().entropy;
  v.require(last < first, "entropy rose from " + num(first) + " to " + num(last));
  std::vector<int> source_truth;
  for (std::size_t i : stage1.source_index) source_truth.push_back(bundle.samples[i].true_domain);
  const DiscoveryQuality q = discovery_quality(stage1.assignments, source_truth);
  v.note("bootstrap matched accuracy " + num(matched) + ", entropy epoch 1 " + num(first) + " -> epoch " +
         std::to_string(stage1.curve.back().epoch) + " " + num(last) + ", stage-1 assignments matched " +
         num(q.matched_accuracy) + " NMI " + num(q.nmi));
}

void ablation_suite(Verdict& v, const std::filesystem::path& out_dir) {
  const std::vector<std::uint64_t> seeds{7, 8, 9};
  const std::vector<int> folds{0, 1, 2, 3};
  const AblationReport report = run_ablation(default_bundle(), TrainConfig{}, seeds, folds);
  std::string records;
  for (const Record& r : ablation_records(report)) records += format_record(r) + '\n';
  records += format_record({{"kind", "timing"}, {"seconds", num(report.seconds, 6)}}) + '\n';
  write_text(out_dir / "ablation.txt", records);
  write_text(out_dir / "ablation.md", ablation_table(report));
  std::cout << ablation_table(report);

  const AblationRow* deep_all = nullptr;
  const AblationRow* full = nullptr;
  std::vector<const AblationRow*> singles;
  for (const AblationRow& row : report.rows) {
    const int on = row.switches.sdnorm + row.switches.protogr + row.switches.protoccl;
    if (on == 0) deep_all = &row;
    if (on == 1) singles.push_back(&row);
    if (on == 3) full = &row;
  }
  const std::vector<double> full_folds = full->fold_means();
  const std::vector<double> base_folds = deep_all->fold_means();
  int wins = 0;
  for (std::size_t f = 0; f < full_folds.size(); ++f) wins += full_folds[f] >= base_folds[f];
  v.require(wins >= 3, "full >= DeepAll on " + std::to_string(wins) + "/4 folds");
  for (const AblationRow* row : singles) {
    v.require(full->mean() >= row->mean(), "full mean " + num(full->mean(), 4) + " < single-component mean " +
                                               num(row->mean(), 4));
  }
  v.require(report.seconds < 1800.0, "grid took " + num(report.seconds) + " s");
  v.note("full >= DeepAll on " + std::to_string(wins) + "/4 folds, full mean " + num(full->mean(), 4) +
         ", DeepAll mean " + num(deep_all->mean(), 4) + ", grid " + num(report.seconds, 4) + " s");
}

template <typename Error, typename Fn>
bool rejects(Fn&& fn) {
  try {
    fn();
  } catch (const Error&) {
    return true;
  } catch (...) {
    return false;
  }
  return false;
}

void round_trip_suite(Verdict& v) {
  const auto dir = std::filesystem::temp_directory_path() / "comen_acceptance";
  std::filesystem::create_directories(dir);

  const std::vector<std::uint8_t> data = serialize_bundle(default_bundle());
  write_bundle(default_bundle(), dir / "bundle.bin");
  const DatasetBundle back = read_bundle(dir / "bundle.bin");
  v.require(read_file(dir / "bundle.bin") == data && serialize_bundle(back) == data, "dataset round-trip differs");

  auto data_bad = data;
  data_bad[0] = 'X';
  v.require(rejects<MalformedHeaderError>([&] { deserialize_bundle(data_bad); }), "dataset bad magic accepted");
  data_bad = data;
  std::fill(data_bad.begin() + 8, data_bad.begin() + 12, 0);  // M = 0
  v.require(rejects<MalformedHeaderError>([&] { deserialize_bundle(data_bad); }), "dataset M=0 accepted");
  v.require(rejects<TruncatedPayloadError>([&] { deserialize_bundle(std::span(data).first(data.size() - 100)); }),
            "truncated dataset accepted");
  data_bad = data;
  data_bad[data.size() / 2] ^= 0x10;
  v.require(rejects<ChecksumError>([&] { deserialize_bundle(data_bad); }), "corrupted dataset accepted");

  const FoldRun run = run_fold(small_bundle(), small_config());
  const StateDict state = state_dict(run.stage2.model);
  const std::vector<std::uint8_t> ck = serialize_checkpoint(state);
  write_checkpoint(state, dir / "model.ck");
  v.require(read_file(dir / "model.ck") == ck, "checkpoint file differs from its serialization");
  v.require(serialize_checkpoint(state_dict(model_from_state(read_checkpoint(dir / "model.ck")))) == ck,
            "checkpoint round-trip differs");

  auto ck_bad = ck;
  ck_bad[3] ^= 0x01;
  v.require(rejects<MalformedHeaderError>([&] { deserialize_checkpoint(ck_bad); }), "checkpoint bad magic accepted");
  ck_bad = ck;
  ck_bad[8] = 9;
  v.require(rejects<MalformedHeaderError>([&] { deserialize_checkpoint(ck_bad); }), "checkpoint bad version accepted");
  v.require(rejects<TruncatedPayloadError>([&] { deserialize_checkpoint(std::span(ck).first(ck.size() - 9)); }),
            "truncated checkpoint accepted");
  ck_bad = ck;
  ck_bad[ck.size() - 20] ^= 0x04;
  v.require(rejects<ChecksumError>([&] { deserialize_checkpoint(ck_bad); }), "corrupted checkpoint accepted");

  const std::string assignments = format_assignments(run.stage1.assignments);
  v.require(format_assignments(parse_assignments(assignments)) == assignments, "assignments file round-trip differs");
  std::filesystem::remove_all(dir);
  v.note("dataset " + std::to_string(data.size()) + " B and checkpoint " + std::to_string(ck.size()) +
         " B identical; corruptions rejected");
}

}  // namespace

int main(int argc, char** argv) {
  const std::filesystem::path out_dir = argc > 1 ? argv[1] : ".";
  report(1, "gradient checks", gradient_suite);
  report(2, "oracle agreement", oracle_suite);
  report(3, "reductions", reduction_suite);
  report(4, "closed forms", closed_form_suite);
  report(5, "structural invariants and determinism", structure_suite);
  report(6, "discovery quality", discovery_suite);
  report(7, "ablation trend and runtime", [&](Verdict& v) { ablation_suite(v, out_dir); });
  report(8, "round-trips and corruption", round_trip_suite);
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
