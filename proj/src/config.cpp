#include "comen/config.hpp"

#include "comen/errors.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace comen {

namespace {

std::string describe(const CLI::ConfigItem& item) { return item.fullname(); }

std::string single_value(const CLI::ConfigItem& item) {
  if (item.inputs.size() != 1) throw ConfigError("config: " + describe(item) + " expects exactly one value");
  return item.inputs.front();
}

template <typename T>
T parse_number(const CLI::ConfigItem& item) {
  const std::string text = single_value(item);
  T value{};
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("config: cannot parse '" + text + "' for " + describe(item));
  }
  return value;
}

bool parse_bool(const CLI::ConfigItem& item) {
  const std::string text = single_value(item);
  if (text == "true" || text == "1" || text == "on" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "off" || text == "no") return false;
  throw ConfigError("config: '" + text + "' is not a boolean for " + describe(item));
}

using Setter = std::function<void(TrainConfig&, const CLI::ConfigItem&)>;

template <typename T>
Setter number(T TrainConfig::*field) {
  return [field](TrainConfig& c, const CLI::ConfigItem& item) { c.*field = parse_number<T>(item); };
}

Setter flag(bool TrainConfig::*field) {
  return [field](TrainConfig& c, const CLI::ConfigItem& item) { c.*field = parse_bool(item); };
}

template <typename T>
Setter stage(StageSchedule TrainConfig::*which, T StageSchedule::*field) {
  return [which, field](TrainConfig& c, const CLI::ConfigItem& item) { (c.*which).*field = parse_number<T>(item); };
}

Setter ablation(bool AblationSwitches::*field) {
  return [field](TrainConfig& c, const CLI::ConfigItem& item) { c.switches.*field = parse_bool(item); };
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"general.seed", number(&TrainConfig::seed)},
      {"general.domains", number(&TrainConfig::domains)},
      {"general.embedding_dim", number(&TrainConfig::embedding_dim)},
      {"general.held_out", number(&TrainConfig::held_out)},
      {"optimizer.momentum", number(&TrainConfig::momentum)},
      {"optimizer.weight_decay", number(&TrainConfig::weight_decay)},
      {"stage1.epochs", stage(&TrainConfig::stage1, &StageSchedule::epochs)},
      {"stage1.learning_rate", stage(&TrainConfig::stage1, &StageSchedule::learning_rate)},
      {"stage1.decay_epoch", stage(&TrainConfig::stage1, &StageSchedule::decay_epoch)},
      {"stage1.decay_factor", stage(&TrainConfig::stage1, &StageSchedule::decay_factor)},
      {"stage1.batch_size", stage(&TrainConfig::stage1, &StageSchedule::batch_size)},
      {"stage1.pretrain_epochs", number(&TrainConfig::pretrain_epochs)},
      {"stage1.pretrain_portion", number(&TrainConfig::pretrain_portion)},
      {"stage1.balance_weight", number(&TrainConfig::balance_weight)},
      {"stage2.epochs", stage(&TrainConfig::stage2, &StageSchedule::epochs)},
      {"stage2.learning_rate", stage(&TrainConfig::stage2, &StageSchedule::learning_rate)},
      {"stage2.decay_epoch", stage(&TrainConfig::stage2, &StageSchedule::decay_epoch)},
      {"stage2.decay_factor", stage(&TrainConfig::stage2, &StageSchedule::decay_factor)},
      {"stage2.batch_size", stage(&TrainConfig::stage2, &StageSchedule::batch_size)},
      {"stage2.restart", flag(&TrainConfig::restart)},
      {"stage2.refine_predictor", flag(&TrainConfig::refine_predictor)},
      {"loss.lambda", number(&TrainConfig::lambda)},
      {"loss.gamma", number(&TrainConfig::gamma)},
      {"loss.tau", number(&TrainConfig::tau)},
      {"loss.rho", number(&TrainConfig::rho)},
      {"loss.delta", number(&TrainConfig::delta)},
      {"loss.eps", number(&TrainConfig::eps)},
      {"loss.normalize_prototypes", flag(&TrainConfig::normalize_prototypes)},
      {"ablation.sdnorm", ablation(&AblationSwitches::sdnorm)},
      {"ablation.protogr", ablation(&AblationSwitches::protogr)},
      {"ablation.protoccl", ablation(&AblationSwitches::protoccl)},
  };
  return table;
}

void check_stage(const StageSchedule& s, const char* name) {
  const std::string prefix = std::string("config: ") + name;
  if (s.epochs < 1) throw ConfigError(prefix + ".epochs must be >= 1");
  if (!(s.learning_rate > 0.0)) throw ConfigError(prefix + ".learning_rate must be positive");
  if (s.decay_epoch < 0) throw ConfigError(prefix + ".decay_epoch must be >= 0");
  if (!(s.decay_factor > 0.0)) throw ConfigError(prefix + ".decay_factor must be positive");
  if (s.batch_size < 2) throw ConfigError(prefix + ".batch_size must be >= 2");
}

}  // namespace

void validate(const TrainConfig& c) {
  if (c.domains < 0) throw ConfigError("config: general.domains must be >= 0");
  if (c.embedding_dim < 1) throw ConfigError("config: general.embedding_dim must be >= 1");
  if (c.held_out < 0) throw ConfigError("config: general.held_out must be >= 0");
  if (!(c.momentum >= 0.0 && c.momentum < 1.0)) throw ConfigError("config: optimizer.momentum must lie in [0, 1)");
  if (!(c.weight_decay >= 0.0)) throw ConfigError("config: optimizer.weight_decay must be >= 0");
  check_stage(c.stage1, "stage1");
  check_stage(c.stage2, "stage2");
  if (c.pretrain_epochs < 0) throw ConfigError("config: stage1.pretrain_epochs must be >= 0");
  if (!(c.pretrain_portion > 0.0 && c.pretrain_portion <= 1.0)) {
    throw ConfigError("config: stage1.pretrain_portion must lie in (0, 1]");
  }
  if (!(c.balance_weight >= 0.0)) throw ConfigError("config: stage1.balance_weight must be >= 0");
  if (!(c.lambda >= 0.0) || !(c.gamma >= 0.0)) throw ConfigError("config: loss.lambda and loss.gamma must be >= 0");
  if (!(c.tau > 0.0)) throw ConfigError("config: loss.tau must be positive");
  if (!(c.rho > 0.0 && c.rho < 1.0)) throw ConfigError("config: loss.rho must lie in (0, 1)");
  if (!(c.delta >= -1.0 && c.delta <= 1.0)) throw ConfigError("config: loss.delta must lie in [-1, 1]");
  if (!(c.eps > 0.0)) throw ConfigError("config: loss.eps must be positive");
}

TrainConfig parse_config(std::string_view text, TrainConfig base) {
  std::istringstream input{std::string(text)};
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigINI().from_config(input);
  } catch (const CLI::Error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  for (const CLI::ConfigItem& item : items) {
    // Section enter/leave markers.
    if (item.name == "++" || item.name == "--") continue;
    if (item.parents.size() != 1) {
      throw ConfigError("config: key '" + describe(item) + "' must sit inside one [section]");
    }
    const auto it = setters().find(describe(item));
    if (it == setters().end()) throw ConfigError("config: unknown key '" + describe(item) + "'");
    it->second(base, item);
  }
  validate(base);
  return base;
}

TrainConfig load_config(const std::filesystem::path& path, TrainConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str(), base);
}

std::string format_config(const TrainConfig& c) {
  std::ostringstream out;
  out.precision(17);
  auto b = [](bool v) { return v ? "true" : "false"; };
  auto stage_lines = [&](const StageSchedule& s) {
    out << "epochs = " << s.epochs << "\nlearning_rate = " << s.learning_rate << "\ndecay_epoch = " << s.decay_epoch
        << "\ndecay_factor = " << s.decay_factor << "\nbatch_size = " << s.batch_size << "\n";
  };
  out << "[general]\nseed = " << c.seed << "\ndomains = " << c.domains << "\nembedding_dim = " << c.embedding_dim
      << "\nheld_out = " << c.held_out << "\n\n";
  out << "[optimizer]\nmomentum = " << c.momentum << "\nweight_decay = " << c.weight_decay << "\n\n";
  out << "[stage1]\n";
  stage_lines(c.stage1);
  out << "pretrain_epochs = " << c.pretrain_epochs << "\npretrain_portion = " << c.pretrain_portion
      << "\nbalance_weight = " << c.balance_weight << "\n\n";
  out << "[stage2]\n";
  stage_lines(c.stage2);
  out << "restart = " << b(c.restart) << "\nrefine_predictor = " << b(c.refine_predictor) << "\n\n";
  out << "[loss]\nlambda = " << c.lambda << "\ngamma = " << c.gamma << "\ntau = " << c.tau << "\nrho = " << c.rho
      << "\ndelta = " << c.delta << "\neps = " << c.eps << "\nnormalize_prototypes = " << b(c.normalize_prototypes)
      << "\n\n";
  out << "[ablation]\nsdnorm = " << b(c.switches.sdnorm) << "\nprotogr = " << b(c.switches.protogr)
      << "\nprotoccl = " << b(c.switches.protoccl) << "\n";
  return out.str();
}

}  // namespace comen
