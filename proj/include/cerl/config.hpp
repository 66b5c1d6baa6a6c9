#pragma once

// Experiment configuration files (JSON). Every key is optional except "scenario" and
// "seeds"; unknown keys are rejected with their path.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "cerl/suite.hpp"

namespace cerl::app {

// Raised for anything wrong with a configuration: syntax, schema, values, flag overrides.
class ConfigError : public InvalidInput {
 public:
  using InvalidInput::InvalidInput;
};

struct SweepConfig {
  std::vector<double> alpha{0.1, 0.3, 1.0, 3.0, 10.0};
  std::vector<double> delta{0.1, 0.3, 1.0, 3.0, 10.0};
  std::vector<double> memory{100, 500, 1000};
  std::size_t sources = 5;  // sequence length used by sweeps

  friend bool operator==(const SweepConfig&, const SweepConfig&) = default;
};

struct ExperimentConfig {
  eval::ScenarioSpec scenario;
  eval::RunSettings settings;  // hyper, memory capacity, network, training, continual options
  std::vector<std::uint64_t> seeds;
  std::filesystem::path output_dir;  // empty: environment default
  std::vector<eval::StrategyKind> strategies{eval::StrategyKind::freeze, eval::StrategyKind::finetune,
                                             eval::StrategyKind::retrain_all, eval::StrategyKind::cerl};
  std::vector<eval::StrategyKind> ablations{eval::StrategyKind::cerl, eval::StrategyKind::cerl_no_cosine,
                                            eval::StrategyKind::cerl_no_herding, eval::StrategyKind::cerl_no_frt};
  SweepConfig sweep;
  int jobs = 1;

  void validate() const;
  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

// `origin` names the source in diagnostics.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig parse_config_text(const std::string& text, const std::string& origin = "<config>");
ExperimentConfig parse_config(const std::filesystem::path& path);

// Complete form with every default written out.
nlohmann::json to_json(const ExperimentConfig& cfg);

// Hash of the settings that determine a trained stage: scenario, layout, hyper-parameters,
// memory, network, training and continual options. Seeds and strategies select
// sub-directories instead, so adding either reuses earlier bundles.
std::string config_hash(const ExperimentConfig& cfg);
// Hash of the fields that determine generated data only.
std::string data_hash(const ExperimentConfig& cfg);

}  // namespace cerl::app
