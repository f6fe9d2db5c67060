#pragma once

#include "comen/config.hpp"
#include "comen/data.hpp"
#include "comen/metrics.hpp"
#include "comen/model.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace comen {

// Mean softmax cross-entropy of B x K logits; labels outside [0, K) throw.
Tensor classification_loss(const Tensor& logits, const std::vector<int>& labels);

/// l_cls + lambda * l_protogr + gamma * l_protoccl. Non-finite inputs raise
/// DivergenceError.
Tensor total_loss(const Tensor& l_cls, const Tensor& l_protogr, const Tensor& l_protoccl, double lambda = 0.1,
                  double gamma = 0.1);
double total_loss(double l_cls, double l_protogr, double l_protoccl, double lambda = 0.1, double gamma = 0.1);

// Random stream for one stage of one fold: seed_seq{seed, held_out, stage}.
std::mt19937_64 stage_rng(const TrainConfig& config, int stage);

/// Minibatch schedule of both stages: each epoch shuffles 0..n-1 with the
/// stage stream and cuts consecutive chunks of batch_size; a trailing chunk of
/// one sample is dropped (normalization needs two).
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, int batch_size, std::mt19937_64& rng);

// Latent domains used for a fold: config.domains, or the fold's source domain count.
int latent_domains(const DatasetBundle& bundle, const TrainConfig& config);

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;     // mean training objective over the epoch's batches
  double entropy = 0.0;  // mean per-sample assignment entropy (stage 1 with SDNorm)
  double val_accuracy = 0.0;
};

struct Stage1Result {
  ComenModel model;
  // Frozen assignments, one row per source sample in ascending bundle order.
  std::vector<std::size_t> source_index;
  RowMatrix assignments;
  std::vector<int> bootstrap_labels;  // aligned with split.train (empty without SDNorm)
  std::vector<EpochRecord> curve;
  std::vector<double> step_losses;
};

/// Stage 1. With SDNorm: k-means bootstrap on style vectors of the initial
/// first-layer output, F_d pretraining, then joint L_cls + L_d training; the
/// first convolution and F_d are frozen into the domain head, which produces
/// the assignments. Without SDNorm: plain cross-entropy with single-branch
/// normalization, and assignments are a random balanced hard split.
Stage1Result train_stage1(const DatasetBundle& bundle, const FoldSplit& split, const TrainConfig& config);

struct Stage2Result {
  ComenModel model;  // best-validation weights
  std::vector<EpochRecord> curve;
  std::vector<double> step_losses;
  int best_epoch = -1;
  double best_val_accuracy = -1.0;
};

// Rows of `stage1.assignments` for the given bundle indices.
RowMatrix assignments_for(const Stage1Result& stage1, const std::vector<std::size_t>& bundle_index);
RowMatrix assignments_for(const std::vector<std::size_t>& source_index, const RowMatrix& assignments,
                          const std::vector<std::size_t>& bundle_index);

/// Stage 2: minimizes l_cls + lambda l_protogr + gamma l_protoccl with the
/// enabled components, updating the prototype bank by EMA each batch, and
/// returns the epoch with the best validation accuracy. `train_assignments`
/// is aligned with split.train.
Stage2Result train_stage2(ComenModel model, const FoldSplit& split, const RowMatrix& train_assignments,
                          const TrainConfig& config);

struct FoldMetrics {
  double accuracy = 0.0;
  ConfusionMatrix confusion;
  std::vector<int> predictions;
};

// Inference-mode predictions on a split, with head-supplied assignments.
FoldMetrics evaluate(ComenModel& model, std::span<const TrainingExample> examples, int classes);

struct DiscoveryQuality {
  double matched_accuracy = 0.0;
  double nmi = 0.0;
};
// Argmax of assignment rows against hidden domain ids (evaluation only).
DiscoveryQuality discovery_quality(const RowMatrix& assignments, const std::vector<int>& true_domains);

// Stage 1 then stage 2 on one fold.
struct FoldRun {
  Stage1Result stage1;
  Stage2Result stage2;
  FoldMetrics test;
};
FoldRun run_fold(const DatasetBundle& bundle, const TrainConfig& config);

// Rows in the order DeepAll, single components, pairs, full.
const std::array<AblationSwitches, 8>& ablation_grid();

struct AblationRow {
  AblationSwitches switches;
  std::vector<std::vector<double>> accuracy;  // [seed][fold]
  double mean() const;
  std::vector<double> fold_means() const;
};

struct AblationReport {
  std::vector<std::uint64_t> seeds;
  std::vector<int> folds;
  std::vector<AblationRow> rows;
  double seconds = 0.0;
};

using ProgressFn = std::function<void(const std::string&)>;

/// Runs the 8-row grid over folds x seeds. Stage 1 is trained once per
/// (fold, seed, sdnorm) and shared by the four rows with the same SDNorm switch.
AblationReport run_ablation(const DatasetBundle& bundle, const TrainConfig& config,
                            const std::vector<std::uint64_t>& seeds, const std::vector<int>& folds,
                            const ProgressFn& progress = {});

// ---------------------------------------------------------------------------
// Text outputs

using Record = std::vector<std::pair<std::string, std::string>>;
// One line of space-separated key=value pairs.
std::string format_record(const Record& record);
Record parse_record(const std::string& line);

std::string confusion_csv(const ConfusionMatrix& confusion);
std::string curve_csv(const std::vector<std::pair<int, double>>& points);
std::vector<std::pair<int, double>> loss_points(const std::vector<EpochRecord>& curve);

// "# M=<m> N=<n>" then N rows of M values at 9 significant digits.
std::string format_assignments(const RowMatrix& assignments);
RowMatrix parse_assignments(const std::string& text);
void write_assignments(const std::filesystem::path& path, const RowMatrix& assignments);
RowMatrix read_assignments(const std::filesystem::path& path);

std::vector<Record> ablation_records(const AblationReport& report);
// Markdown table of per-fold and mean accuracy for each row.
std::string ablation_table(const AblationReport& report);
AblationReport report_from_records(const std::vector<Record>& records);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace comen
