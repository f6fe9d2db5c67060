#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace comen {

struct StageSchedule {
  int epochs = 30;
  double learning_rate = 0.05;
  int decay_epoch = 20;  // lr *= decay_factor from this epoch on (0-based)
  double decay_factor = 0.1;
  int batch_size = 64;

  double learning_rate_at(int epoch) const {
    return epoch >= decay_epoch ? learning_rate * decay_factor : learning_rate;
  }
};

struct AblationSwitches {
  bool sdnorm = true;
  bool protogr = true;
  bool protoccl = true;

  bool operator==(const AblationSwitches&) const = default;
};

/// Every tunable of the two-stage trainer. Sections of the config file map to
/// the groups below: [general], [optimizer], [stage1], [stage2], [loss],
/// [ablation].
struct TrainConfig {
  // [general]
  std::uint64_t seed = 7;
  int domains = 0;  // latent domains; 0 = number of source domains in the fold
  int embedding_dim = 64;
  int held_out = 0;

  // [optimizer]
  double momentum = 0.9;
  double weight_decay = 5e-4;

  // [stage1]
  StageSchedule stage1{};
  int pretrain_epochs = 60;
  double pretrain_portion = 0.5;
  double balance_weight = 0.1;

  // [stage2]
  StageSchedule stage2{};
  bool restart = false;           // re-initialize encoder and classifier
  bool refine_predictor = false;  // keep training F_d with the entropy loss

  // [loss]
  double lambda = 0.1;  // ProtoGR weight
  double gamma = 0.1;   // ProtoCCL weight
  double tau = 0.5;
  double rho = 0.7;
  double delta = 0.5;
  double eps = 1e-5;
  bool normalize_prototypes = true;

  // [ablation]
  AblationSwitches switches{};
};

/// Parses "key = value" lines grouped under [section] headers. Unknown sections
/// or keys, unparsable values and out-of-range settings raise ConfigError.
TrainConfig parse_config(std::string_view text, TrainConfig base = {});
TrainConfig load_config(const std::filesystem::path& path, TrainConfig base = {});
std::string format_config(const TrainConfig& config);

// Throws ConfigError if any setting is out of range.
void validate(const TrainConfig& config);

}  // namespace comen
