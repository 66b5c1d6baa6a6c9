#pragma once

// Replicated experiments: scenarios x strategies x seeds, aggregation over seeds,
// hyper-parameter and memory sweeps, and report files.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "cerl/strategy.hpp"
#include "cerl/synthgen.hpp"

namespace cerl::eval {

struct ScenarioSpec {
  std::string name = "substantial";
  synth::ShiftPreset preset = synth::ShiftPreset::substantial;
  std::size_t sources = 2;
  std::size_t n_per_source = 2000;
  double covariate_scale = 1.0;
  synth::VariableLayout layout;
  // Replaces the preset when non-empty; seeds inside are offset per replicate.
  std::vector<synth::SourceSpec> explicit_specs;

  void validate() const;
  friend bool operator==(const ScenarioSpec&, const ScenarioSpec&) = default;
};

// Source specs and structural weights for one replicate seed.
std::vector<synth::SourceSpec> scenario_specs(const ScenarioSpec& scenario, std::uint64_t seed);
std::vector<synth::SourceData> build_sequence(const ScenarioSpec& scenario, std::uint64_t seed);

struct SuiteSpec {
  std::vector<ScenarioSpec> scenarios;
  std::vector<StrategyKind> strategies;
  std::vector<std::uint64_t> seeds;
  RunSettings settings;  // seed field is replaced per replicate
  int jobs = 1;
};

struct CellFailure {
  std::string scenario;
  std::string strategy;
  std::uint64_t seed = 0;
  std::string message;
};

struct SuiteResult {
  std::vector<MetricsRow> rows;
  std::vector<CellFailure> failures;
};

// Runs every (scenario, seed) cell; strategies within a cell share the data and first-stage
// models. A failing strategy is recorded and the suite continues.
SuiteResult run_suite(const SuiteSpec& spec);

struct AggregateRow {
  std::string scenario;
  std::string strategy;
  std::size_t stage = 0;
  std::size_t eval_dataset = 0;
  std::size_t replicates = 0;
  double pehe_mean = 0.0, pehe_std = 0.0;
  double ate_mean = 0.0, ate_std = 0.0;
};

// Mean and sample standard deviation over seeds per (scenario, strategy, stage, dataset).
std::vector<AggregateRow> aggregate(const std::vector<MetricsRow>& rows);

// seed -> value for one (scenario, strategy, stage, dataset) cell.
std::map<std::uint64_t, double> pehe_by_seed(const std::vector<MetricsRow>& rows, const std::string& scenario,
                                             const std::string& strategy, std::size_t stage, std::size_t eval_dataset);
// seed -> mean sqrt-PEHE over all datasets scored at the last stage.
std::map<std::uint64_t, double> final_stage_average(const std::vector<MetricsRow>& rows, const std::string& scenario,
                                                    const std::string& strategy);

double seed_mean(const std::map<std::uint64_t, double>& values);

struct SignTest {
  int wins = 0;  // seeds where the first value is strictly lower
  int trials = 0;
  double p_value = 1.0;
};
// Paired over seeds present in both maps.
SignTest sign_test(const std::map<std::uint64_t, double>& lower, const std::map<std::uint64_t, double>& higher);

enum class SweepParameter { alpha, delta, memory };
std::string_view to_string(SweepParameter p);
SweepParameter sweep_parameter_from_string(std::string_view s);

struct SeriesPoint {
  std::string parameter;
  double value = 0.0;
  std::uint64_t seed = 0;
  double final_pehe = 0.0;  // mean over datasets at the last stage
  double final_ate = 0.0;
};

// CERL on one scenario for every value x seed.
std::vector<SeriesPoint> run_sweep(const ScenarioSpec& scenario, const RunSettings& settings,
                                   const std::vector<std::uint64_t>& seeds, SweepParameter parameter,
                                   const std::vector<double>& values, StrategyKind kind = StrategyKind::cerl);

// Report files. Numbers use shortest round-trip formatting, so identical runs produce
// identical files apart from runtime columns.
void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRow>& rows);
std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path);
void write_series_csv(const std::filesystem::path& path, const std::vector<SeriesPoint>& points);
std::vector<SeriesPoint> read_series_csv(const std::filesystem::path& path);
void write_failures_csv(const std::filesystem::path& path, const std::vector<CellFailure>& failures);

// Text table per scenario: one line per strategy, sqrt-PEHE and ATE error (mean +- std over
// seeds) for each dataset scored at the last stage.
std::string render_table(const std::vector<MetricsRow>& rows);
// Per parameter value: mean +- std of the final-stage average.
std::string render_series(const std::vector<SeriesPoint>& points);

}  // namespace cerl::eval
