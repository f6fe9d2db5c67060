#include "CLI11.hpp"

#include "comen/checkpoint.hpp"
#include "comen/config.hpp"
#include "comen/data.hpp"
#include "comen/errors.hpp"
#include "comen/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

using namespace comen;
namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config_path;
  std::uint64_t seed = 0;
  int held_out = -1;
  std::string out_dir;
};

void add_common(CLI::App* cmd, Common& c, bool with_config = true) {
  if (with_config) cmd->add_option("--config", c.config_path, "INI file with [section] key = value settings");
  cmd->add_option("--seed", c.seed, "Random seed (overrides the config)");
  cmd->add_option("--held-out", c.held_out, "Held-out domain id (overrides the config)");
  cmd->add_option("--out-dir", c.out_dir, "Directory for metrics and curves");
}

TrainConfig resolve_config(const Common& c, const CLI::App* cmd) {
  TrainConfig config = c.config_path.empty() ? TrainConfig{} : load_config(c.config_path);
  if (cmd->count("--seed") > 0) config.seed = c.seed;
  if (c.held_out >= 0) config.held_out = c.held_out;
  validate(config);
  return config;
}

NamedArray scalar(double v) { return {{}, (Array(1) << v).finished()}; }

double meta_value(const StateDict& state, const std::string& key, double fallback) {
  const auto it = state.find(key);
  return it == state.end() || it->second.values.size() != 1 ? fallback : it->second.values[0];
}

std::vector<std::size_t> source_index_of(const FoldSplit& split) {
  std::vector<std::size_t> out = split.train_index;
  out.insert(out.end(), split.val_index.begin(), split.val_index.end());
  std::sort(out.begin(), out.end());
  return out;
}

void write_curves(const fs::path& dir, const std::string& prefix, const std::vector<EpochRecord>& curve,
                  bool with_entropy) {
  write_text(dir / (prefix + "_loss.csv"), curve_csv(loss_points(curve)));
  std::vector<std::pair<int, double>> val;
  std::vector<std::pair<int, double>> entropy;
  for (const EpochRecord& r : curve) {
    val.emplace_back(r.epoch, r.val_accuracy);
    entropy.emplace_back(r.epoch, r.entropy);
  }
  write_text(dir / (prefix + "_val_accuracy.csv"), curve_csv(val));
  if (with_entropy) write_text(dir / (prefix + "_entropy.csv"), curve_csv(entropy));
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9f", v);
  return buf;
}

template <typename T>
std::vector<T> parse_list(const std::string& text) {
  std::vector<T> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    std::istringstream v(item);
    T x{};
    if (!(v >> x) || !v.eof()) throw ConfigError("cannot parse list item '" + item + "'");
    out.push_back(x);
  }
  if (out.empty()) throw ConfigError("empty list");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-stage domain generalization with latent domain discovery and prototype learning"};
  app.require_subcommand(1);

  // generate
  BenchmarkParams gen;
  std::string gen_out;
  auto* g = app.add_subcommand("generate", "Write a synthetic multi-domain benchmark");
  g->add_option("--seed", gen.seed, "Generator seed");
  g->add_option("--domains", gen.domains, "Number of domains");
  g->add_option("--classes", gen.classes, "Number of classes");
  g->add_option("--per-cell", gen.per_cell, "Samples per (domain, class) cell");
  g->add_option("--channels", gen.image.channels, "Image channels");
  g->add_option("--height", gen.image.height, "Image height");
  g->add_option("--width", gen.image.width, "Image width");
  g->add_option("--out", gen_out, "Output dataset file")->required();

  // train-stage1
  Common s1c;
  std::string s1_data, s1_ckpt, s1_assign;
  auto* s1 = app.add_subcommand("train-stage1", "Discover latent domains and train with SDNorm");
  s1->add_option("--data", s1_data, "Dataset file")->required();
  s1->add_option("--out-checkpoint", s1_ckpt, "Checkpoint to write")->required();
  s1->add_option("--out-assignments", s1_assign, "Assignments file for the source samples")->required();
  add_common(s1, s1c);

  // train-stage2
  Common s2c;
  std::string s2_data, s2_in, s2_assign, s2_ckpt;
  auto* s2 = app.add_subcommand("train-stage2", "Train with prototype graph and contrastive losses");
  s2->add_option("--data", s2_data, "Dataset file")->required();
  s2->add_option("--checkpoint", s2_in, "Stage-1 checkpoint")->required();
  s2->add_option("--assignments", s2_assign, "Stage-1 assignments file")->required();
  s2->add_option("--out-checkpoint", s2_ckpt, "Checkpoint to write")->required();
  add_common(s2, s2c);

  // evaluate
  Common evc;
  std::string ev_data, ev_ckpt;
  auto* ev = app.add_subcommand("evaluate", "Accuracy and confusion matrix on the held-out domain");
  ev->add_option("--data", ev_data, "Dataset file")->required();
  ev->add_option("--checkpoint", ev_ckpt, "Model checkpoint")->required();
  add_common(ev, evc, false);

  // ablate
  Common abc;
  std::string ab_data, ab_seeds = "7,8,9", ab_folds;
  auto* ab = app.add_subcommand("ablate", "Run the 8-row component grid over seeds and folds");
  ab->add_option("--data", ab_data, "Dataset file")->required();
  ab->add_option("--seeds", ab_seeds, "Comma-separated seeds");
  ab->add_option("--folds", ab_folds, "Comma-separated held-out domains (default: all)");
  add_common(ab, abc);

  // report
  std::vector<std::string> rp_inputs;
  std::string rp_out;
  auto* rp = app.add_subcommand("report", "Aggregate ablation records into a table");
  rp->add_option("inputs", rp_inputs, "Record files written by ablate")->required();
  rp->add_option("--out", rp_out, "Write the table here instead of stdout");

  CLI11_PARSE(app, argc, argv);

  try {
    if (g->parsed()) {
      write_bundle(generate_benchmark(gen), gen_out);
      std::cout << format_record({{"kind", "dataset"}, {"path", gen_out}, {"samples", std::to_string(gen.domains * gen.classes * gen.per_cell)}}) << '\n';
    } else if (s1->parsed()) {
      const TrainConfig config = resolve_config(s1c, s1);
      const DatasetBundle bundle = read_bundle(s1_data);
      const FoldSplit split = leave_one_domain_out(bundle, config.held_out, config.seed);
      const Stage1Result r = train_stage1(bundle, split, config);
      StateDict state = state_dict(r.model);
      state["meta.stage"] = scalar(1);
      state["meta.seed"] = scalar(static_cast<double>(config.seed));
      state["meta.held_out"] = scalar(config.held_out);
      write_checkpoint(state, s1_ckpt);
      write_assignments(s1_assign, r.assignments);
      Record rec{{"kind", "stage1"}, {"seed", std::to_string(config.seed)}, {"fold", std::to_string(config.held_out)},
                 {"final_loss", fmt(r.curve.empty() ? 0.0 : r.curve.back().loss)}};
      if (!r.curve.empty()) rec.emplace_back("final_entropy", fmt(r.curve.back().entropy));
      if (r.model.spec.sdnorm) {
        std::vector<int> domains;
        for (std::size_t i : r.source_index) domains.push_back(bundle.samples[i].true_domain);
        const DiscoveryQuality q = discovery_quality(r.assignments, domains);
        rec.emplace_back("discovery_matched_accuracy", fmt(q.matched_accuracy));
        rec.emplace_back("discovery_nmi", fmt(q.nmi));
      }
      std::cout << format_record(rec) << '\n';
      if (!s1c.out_dir.empty()) {
        write_curves(s1c.out_dir, "stage1", r.curve, r.model.spec.sdnorm);
        write_text(fs::path(s1c.out_dir) / "stage1_metrics.txt", format_record(rec) + "\n");
      }
    } else if (s2->parsed()) {
      const TrainConfig config = resolve_config(s2c, s2);
      const DatasetBundle bundle = read_bundle(s2_data);
      const StateDict stage1 = read_checkpoint(s2_in);
      const FoldSplit split = leave_one_domain_out(bundle, config.held_out, config.seed);
      const RowMatrix all = read_assignments(s2_assign);
      const RowMatrix train_p = assignments_for(source_index_of(split), all, split.train_index);
      const Stage2Result r = train_stage2(model_from_state(stage1), split, train_p, config);
      StateDict state = state_dict(r.model);
      state["meta.stage"] = scalar(2);
      state["meta.seed"] = scalar(static_cast<double>(config.seed));
      state["meta.held_out"] = scalar(config.held_out);
      write_checkpoint(state, s2_ckpt);
      const Record rec{{"kind", "stage2"},
                       {"seed", std::to_string(config.seed)},
                       {"fold", std::to_string(config.held_out)},
                       {"best_epoch", std::to_string(r.best_epoch)},
                       {"best_val_accuracy", fmt(r.best_val_accuracy)}};
      std::cout << format_record(rec) << '\n';
      if (!s2c.out_dir.empty()) {
        write_curves(s2c.out_dir, "stage2", r.curve, false);
        write_text(fs::path(s2c.out_dir) / "stage2_metrics.txt", format_record(rec) + "\n");
      }
    } else if (ev->parsed()) {
      const DatasetBundle bundle = read_bundle(ev_data);
      const StateDict state = read_checkpoint(ev_ckpt);
      const std::uint64_t seed =
          ev->count("--seed") > 0 ? evc.seed : static_cast<std::uint64_t>(meta_value(state, "meta.seed", 7));
      const int held_out = evc.held_out >= 0 ? evc.held_out : static_cast<int>(meta_value(state, "meta.held_out", 0));
      ComenModel model = model_from_state(state);
      const FoldSplit split = leave_one_domain_out(bundle, held_out, seed);
      const FoldMetrics m = evaluate(model, split.test, bundle.num_classes);
      const Record rec{{"kind", "evaluate"},
                       {"seed", std::to_string(seed)},
                       {"fold", std::to_string(held_out)},
                       {"samples", std::to_string(split.test.size())},
                       {"accuracy", fmt(m.accuracy)}};
      std::cout << format_record(rec) << '\n';
      if (!evc.out_dir.empty()) {
        write_text(fs::path(evc.out_dir) / "metrics.txt", format_record(rec) + "\n");
        write_text(fs::path(evc.out_dir) / "confusion.csv", confusion_csv(m.confusion));
      }
    } else if (ab->parsed()) {
      const TrainConfig config = resolve_config(abc, ab);
      const DatasetBundle bundle = read_bundle(ab_data);
      const auto seeds = parse_list<std::uint64_t>(ab_seeds);
      std::vector<int> folds;
      if (ab_folds.empty()) {
        for (int d = 0; d < bundle.num_domains; ++d) folds.push_back(d);
      } else {
        folds = parse_list<int>(ab_folds);
      }
      const AblationReport report =
          run_ablation(bundle, config, seeds, folds, [](const std::string& line) { std::cerr << line << '\n'; });
      std::string records;
      for (const Record& r : ablation_records(report)) records += format_record(r) + '\n';
      const std::string table = ablation_table(report);
      std::cout << table;
      std::cout << format_record({{"kind", "timing"}, {"seconds", fmt(report.seconds)}}) << '\n';
      if (!abc.out_dir.empty()) {
        write_text(fs::path(abc.out_dir) / "ablation.txt", records);
        write_text(fs::path(abc.out_dir) / "ablation.md", table);
      }
    } else if (rp->parsed()) {
      std::vector<Record> records;
      for (const std::string& path : rp_inputs) {
        std::istringstream in(read_text(path));
        std::string line;
        while (std::getline(in, line)) {
          if (line.find_first_not_of(" \t\r") != std::string::npos) records.push_back(parse_record(line));
        }
      }
      const std::string table = ablation_table(report_from_records(records));
      if (rp_out.empty()) {
        std::cout << table;
      } else {
        write_text(rp_out, table);
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
