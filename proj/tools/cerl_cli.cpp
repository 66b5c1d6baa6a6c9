// cerl: command-line driver for data generation, continual training and evaluation.
//
//   cerl generate --config exp.json
//   cerl train    --config exp.json [--strategy CERL] [--stage 2]
//   cerl evaluate --config exp.json
//   cerl sweep | ablate | report --config exp.json
//
// Exit codes: 0 success, 2 configuration error, 3 runtime failure.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "cerl/pipeline.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct Flags {
  std::string command;
  std::string config;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> strategies;
  std::optional<std::int64_t> memory;
  std::optional<double> alpha;
  std::optional<double> delta;
  std::optional<std::size_t> stage;
  std::optional<int> jobs;
  std::string out;
  bool quiet = false;
  bool print_config = false;
};

cerl::app::ExperimentConfig load(const Flags& f) {
  using cerl::app::ConfigError;
  cerl::app::ExperimentConfig cfg;
  if (!f.config.empty()) {
    cfg = cerl::app::parse_config(f.config);
  } else {
    cfg.seeds = {1};
  }
  // flags > file > defaults
  if (!f.seeds.empty()) cfg.seeds = f.seeds;
  if (!f.strategies.empty()) {
    std::vector<cerl::eval::StrategyKind> kinds;
    for (const auto& s : f.strategies) {
      try {
        kinds.push_back(cerl::eval::strategy_from_string(s));
      } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("--strategy: ") + e.what());
      }
    }
    (f.command == "ablate" ? cfg.ablations : cfg.strategies) = kinds;
  }
  if (f.memory) {
    if (*f.memory < 0) throw ConfigError(fmt::format("--memory: must be non-negative, got {}", *f.memory));
    cfg.settings.memory_capacity = static_cast<std::size_t>(*f.memory);
  }
  if (f.alpha) cfg.settings.hyper.alpha = *f.alpha;
  if (f.delta) cfg.settings.hyper.delta = *f.delta;
  if (f.jobs) cfg.jobs = *f.jobs;
  if (!f.out.empty()) cfg.output_dir = f.out;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continual causal effect representation learning"};
  Flags f;
  app.add_option("command", f.command, "generate, train, evaluate, sweep, ablate or report")
      ->required()
      ->check(CLI::IsMember({"generate", "train", "evaluate", "sweep", "ablate", "report"}));
  app.add_option("--config,-c", f.config, "Experiment config (JSON)");
  app.add_option("--seed", f.seeds, "Replicate seed; repeat to run several");
  app.add_option("--strategy", f.strategies,
                 "A, B, C, CERL, CERL-no-FRT, CERL-no-herding or CERL-no-cosine; repeatable");
  app.add_option("--memory", f.memory, "Memory capacity M");
  app.add_option("--alpha", f.alpha, "Balance weight");
  app.add_option("--delta", f.delta, "Feature transformation weight");
  app.add_option("--stage", f.stage, "train: run only this stage (1-based)");
  app.add_option("--jobs", f.jobs, "Concurrent suite cells for ablate");
  app.add_option("--out,-o", f.out, fmt::format("Output root (default ${} or ./cerl-output)", cerl::app::kOutputRootEnv));
  app.add_flag("--quiet,-q", f.quiet, "No progress messages");
  app.add_flag("--print-config", f.print_config, "Print the resolved config and exit");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  cerl::app::ExperimentConfig cfg;
  try {
    cfg = load(f);
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  }
  if (f.print_config) {
    std::cout << cerl::app::to_json(cfg).dump(2) << '\n';
    return 0;
  }

  cerl::app::PipelineOptions opt;
  opt.stage = f.stage;
  opt.log = f.quiet ? nullptr : &std::cerr;
  try {
    const auto command = cerl::app::command_from_string(f.command);
    const auto res = cerl::app::run_pipeline(cfg, command, opt);
    if (!res.text.empty()) std::cout << res.text;
    return 0;
  } catch (const cerl::app::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}
