#pragma once

// File-based pipeline: generate -> train -> evaluate, plus sweeps, ablations and reports.
//
// Layout under the output root:
//   data/<data-hash>/seed-<s>/source-<k>.csv        full source, with .meta.json manifest
//   data/<data-hash>/seed-<s>/source-<k>.test.csv   test split only, used for scoring
//   runs/<config-hash>/config.json
//   runs/<config-hash>/seed-<s>/<strategy>/stage-<d>/   stage bundle
//   runs/<config-hash>/report/     metrics.csv, table.txt
//   runs/<config-hash>/sweep/      series-<parameter>.csv, series.txt
//   runs/<config-hash>/ablation/   metrics.csv, table.txt, sign_tests.csv

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cerl/config.hpp"

namespace cerl::app {

// Raised when a command's inputs are missing on disk.
class MissingInput : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised when stage d of a strategy is requested before stage d-1 exists.
class StageOrderError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Command { generate, train, evaluate, sweep, ablate, report };
Command command_from_string(std::string_view s);
std::string_view to_string(Command c);

inline constexpr const char* kOutputRootEnv = "CERL_OUTPUT_ROOT";

// $CERL_OUTPUT_ROOT when set and non-empty, else "cerl-output".
std::filesystem::path default_output_root();

class Workspace {
 public:
  // An empty cfg.output_dir falls back to default_output_root().
  explicit Workspace(const ExperimentConfig& cfg);

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path data_dir(std::uint64_t seed) const;
  std::filesystem::path source_csv(std::uint64_t seed, std::size_t k) const;
  std::filesystem::path test_csv(std::uint64_t seed, std::size_t k) const;
  std::filesystem::path run_dir() const;
  std::filesystem::path stage_dir(std::uint64_t seed, eval::StrategyKind kind, std::size_t stage) const;
  std::filesystem::path report_dir() const { return run_dir() / "report"; }
  std::filesystem::path sweep_dir() const { return run_dir() / "sweep"; }
  std::filesystem::path ablation_dir() const { return run_dir() / "ablation"; }

 private:
  std::filesystem::path root_;
  std::string config_hash_;
  std::string data_hash_;
};

struct PipelineOptions {
  std::optional<std::size_t> stage;  // train only this stage (1-based)
  std::ostream* log = nullptr;
};

struct PipelineResult {
  std::vector<std::filesystem::path> artifacts;
  std::size_t report_rows = 0;
  std::size_t reused = 0;  // cached datasets or bundles left untouched
  std::string text;        // rendered output for report-like commands
};

PipelineResult generate(const ExperimentConfig& cfg, const PipelineOptions& opt = {});
PipelineResult train(const ExperimentConfig& cfg, const PipelineOptions& opt = {});
PipelineResult evaluate(const ExperimentConfig& cfg, const PipelineOptions& opt = {});
PipelineResult sweep(const ExperimentConfig& cfg, const PipelineOptions& opt = {});
PipelineResult ablate(const ExperimentConfig& cfg, const PipelineOptions& opt = {});
PipelineResult report(const ExperimentConfig& cfg, const PipelineOptions& opt = {});

PipelineResult run_pipeline(const ExperimentConfig& cfg, Command command, const PipelineOptions& opt = {});

// Source k of a generated sequence: the full file, or only its test split.
synth::SourceData load_source(const std::filesystem::path& csv);
synth::SourceData load_test_source(const std::filesystem::path& test_csv);

}  // namespace cerl::app
