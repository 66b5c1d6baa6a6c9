#include "cerl/suite.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include <fmt/format.h>

#include "cerl/checkpoint.hpp"
#include "cerl/errors.hpp"

namespace cerl::eval {

void ScenarioSpec::validate() const {
  if (name.empty() || name.find_first_of(",\n\"") != std::string::npos) {
    throw InvalidInput("scenario name must be non-empty and free of commas, quotes and newlines");
  }
  if (explicit_specs.empty() && sources < 1) throw InvalidInput("scenario needs at least one source");
  if (n_per_source < 10) throw InvalidInput("scenario: n_per_source must be at least 10");
  if (!(covariate_scale > 0.0)) throw InvalidInput("scenario: covariate_scale must be positive");
  for (const auto& s : explicit_specs) s.validate(layout);
}

std::vector<synth::SourceSpec> scenario_specs(const ScenarioSpec& scenario, std::uint64_t seed) {
  scenario.validate();
  if (scenario.explicit_specs.empty()) {
    return synth::make_scenario(scenario.layout, scenario.preset, scenario.sources, seed, scenario.covariate_scale);
  }
  std::vector<synth::SourceSpec> specs = scenario.explicit_specs;
  for (std::size_t k = 0; k < specs.size(); ++k) specs[k].seed = seed * 1000003ull + specs[k].seed + k + 1;
  return specs;
}

std::vector<synth::SourceData> build_sequence(const ScenarioSpec& scenario, std::uint64_t seed) {
  const auto specs = scenario_specs(scenario, seed);
  const auto weights = synth::StructuralWeights::draw(scenario.layout, seed);
  return synth::make_sequence(scenario.layout, specs, weights, scenario.n_per_source);
}

namespace {

struct CellOutput {
  std::vector<MetricsRow> rows;
  std::vector<CellFailure> failures;
};

CellOutput run_cell(const ScenarioSpec& scenario, std::uint64_t seed, const SuiteSpec& spec) {
  CellOutput out;
  RunSettings settings = spec.settings;
  settings.seed = seed;
  std::vector<synth::SourceData> sequence;
  try {
    sequence = build_sequence(scenario, seed);
  } catch (const std::exception& e) {
    for (StrategyKind k : spec.strategies) out.failures.push_back({scenario.name, std::string(to_string(k)), seed, e.what()});
    return out;
  }
  std::map<bool, model::RepresentationModel> stage1;  // keyed by cosine output
  for (StrategyKind kind : spec.strategies) {
    try {
      const model::Architecture arch = settings.arch_for(kind);
      auto it = stage1.find(arch.cosine_output);
      if (it == stage1.end()) it = stage1.emplace(arch.cosine_output, train_first_stage(sequence[0], settings, arch)).first;
      auto rows = run_strategy(kind, sequence, settings, scenario.name, &it->second);
      out.rows.insert(out.rows.end(), rows.begin(), rows.end());
    } catch (const std::exception& e) {
      out.failures.push_back({scenario.name, std::string(to_string(kind)), seed, e.what()});
    }
  }
  return out;
}

std::string num(double v) { return fmt::format("{}", v); }

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace

SuiteResult run_suite(const SuiteSpec& spec) {
  if (spec.scenarios.empty() || spec.strategies.empty() || spec.seeds.empty()) {
    throw InvalidInput("suite needs at least one scenario, strategy and seed");
  }
  for (const auto& s : spec.scenarios) s.validate();
  spec.settings.validate();
  struct Cell {
    const ScenarioSpec* scenario;
    std::uint64_t seed;
  };
  std::vector<Cell> cells;
  for (const auto& sc : spec.scenarios)
    for (std::uint64_t seed : spec.seeds) cells.push_back({&sc, seed});
  std::vector<CellOutput> outputs(cells.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) outputs[i] = run_cell(*cells[i].scenario, cells[i].seed, spec);
  };
  const int jobs = std::clamp<int>(spec.jobs, 1, static_cast<int>(cells.size()));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  SuiteResult result;
  for (auto& o : outputs) {
    result.rows.insert(result.rows.end(), o.rows.begin(), o.rows.end());
    result.failures.insert(result.failures.end(), o.failures.begin(), o.failures.end());
  }
  return result;
}

std::vector<AggregateRow> aggregate(const std::vector<MetricsRow>& rows) {
  using Key = std::tuple<std::string, std::string, std::size_t, std::size_t>;
  std::vector<Key> order;
  std::map<Key, std::pair<std::vector<double>, std::vector<double>>> groups;
  for (const auto& r : rows) {
    Key k{r.scenario, r.strategy, r.stage, r.eval_dataset};
    auto [it, inserted] = groups.try_emplace(k);
    if (inserted) order.push_back(k);
    it->second.first.push_back(r.sqrt_pehe);
    it->second.second.push_back(r.ate_error);
  }
  std::vector<AggregateRow> out;
  for (const Key& k : order) {
    const auto& [pehe, ate] = groups.at(k);
    out.push_back(AggregateRow{std::get<0>(k), std::get<1>(k), std::get<2>(k), std::get<3>(k), pehe.size(),
                               mean_of(pehe), std_of(pehe), mean_of(ate), std_of(ate)});
  }
  return out;
}

std::map<std::uint64_t, double> pehe_by_seed(const std::vector<MetricsRow>& rows, const std::string& scenario,
                                             const std::string& strategy, std::size_t stage, std::size_t eval_dataset) {
  std::map<std::uint64_t, double> out;
  for (const auto& r : rows) {
    if (r.scenario == scenario && r.strategy == strategy && r.stage == stage && r.eval_dataset == eval_dataset) {
      out[r.seed] = r.sqrt_pehe;
    }
  }
  return out;
}

std::map<std::uint64_t, double> final_stage_average(const std::vector<MetricsRow>& rows, const std::string& scenario,
                                                    const std::string& strategy) {
  std::map<std::uint64_t, std::size_t> last;
  for (const auto& r : rows)
    if (r.scenario == scenario && r.strategy == strategy) last[r.seed] = std::max(last[r.seed], r.stage);
  std::map<std::uint64_t, std::vector<double>> vals;
  for (const auto& r : rows)
    if (r.scenario == scenario && r.strategy == strategy && r.stage == last[r.seed]) vals[r.seed].push_back(r.sqrt_pehe);
  std::map<std::uint64_t, double> out;
  for (const auto& [seed, v] : vals) out[seed] = mean_of(v);
  return out;
}

double seed_mean(const std::map<std::uint64_t, double>& values) {
  if (values.empty()) throw InvalidInput("seed_mean: no values");
  double s = 0.0;
  for (const auto& [seed, v] : values) s += v;
  return s / static_cast<double>(values.size());
}

SignTest sign_test(const std::map<std::uint64_t, double>& lower, const std::map<std::uint64_t, double>& higher) {
  SignTest t;
  for (const auto& [seed, v] : lower) {
    auto it = higher.find(seed);
    if (it == higher.end()) continue;
    ++t.trials;
    if (v < it->second) ++t.wins;
  }
  if (t.trials > 0) t.p_value = sign_test_p_value(t.wins, t.trials);
  return t;
}

std::string_view to_string(SweepParameter p) {
  switch (p) {
    case SweepParameter::alpha: return "alpha";
    case SweepParameter::delta: return "delta";
    case SweepParameter::memory: return "memory";
  }
  throw InvalidInput("unknown sweep parameter");
}

SweepParameter sweep_parameter_from_string(std::string_view s) {
  if (s == "alpha") return SweepParameter::alpha;
  if (s == "delta") return SweepParameter::delta;
  if (s == "memory") return SweepParameter::memory;
  throw InvalidInput("unknown sweep parameter '" + std::string(s) + "' (expected alpha, delta or memory)");
}

std::vector<SeriesPoint> run_sweep(const ScenarioSpec& scenario, const RunSettings& settings,
                                   const std::vector<std::uint64_t>& seeds, SweepParameter parameter,
                                   const std::vector<double>& values, StrategyKind kind) {
  if (values.empty() || seeds.empty()) throw InvalidInput("sweep needs at least one value and one seed");
  std::vector<SeriesPoint> out;
  for (std::uint64_t seed : seeds) {
    const auto sequence = build_sequence(scenario, seed);
    RunSettings base = settings;
    base.seed = seed;
    // alpha also weights the first-stage objective; the other parameters leave it unchanged.
    std::optional<model::RepresentationModel> shared;
    if (parameter != SweepParameter::alpha) shared = train_first_stage(sequence[0], base, base.arch_for(kind));
    for (double v : values) {
      RunSettings s = base;
      switch (parameter) {
        case SweepParameter::alpha: s.hyper.alpha = v; break;
        case SweepParameter::delta: s.hyper.delta = v; break;
        case SweepParameter::memory:
          if (v < 2 || v != std::floor(v)) throw InvalidInput("memory sweep values must be integers >= 2");
          s.memory_capacity = static_cast<std::size_t>(v);
          break;
      }
      const auto rows = run_strategy(kind, sequence, s, scenario.name, shared ? &*shared : nullptr);
      const std::size_t last = rows.back().stage;
      std::vector<double> pehe, ate;
      for (const auto& r : rows) {
        if (r.stage != last) continue;
        pehe.push_back(r.sqrt_pehe);
        ate.push_back(r.ate_error);
      }
      out.push_back(SeriesPoint{std::string(to_string(parameter)), v, seed, mean_of(pehe), mean_of(ate)});
    }
  }
  return out;
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRow>& rows) {
  std::string s = "scenario,strategy,stage,eval_dataset,seed,sqrt_pehe,ate_error,runtime_seconds,stored_floats,raw_covariate_rows\n";
  for (const auto& r : rows) {
    s += fmt::format("{},{},{},{},{},{},{},{},{},{}\n", r.scenario, r.strategy, r.stage, r.eval_dataset, r.seed,
                     num(r.sqrt_pehe), num(r.ate_error), num(r.runtime_seconds), r.stored_floats,
                     r.raw_covariate_rows);
  }
  io::write_atomic(path, s);
}

std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path) {
  std::stringstream in(io::read_file(path));
  std::string line;
  std::getline(in, line);
  if (line.rfind("scenario,strategy,stage,eval_dataset,seed,sqrt_pehe", 0) != 0) {
    throw InvalidInput(path.string() + ": not a metrics report");
  }
  std::vector<MetricsRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto c = split_csv_line(line);
    if (c.size() != 10) throw InvalidInput(fmt::format("{}:{}: expected 10 columns, got {}", path.string(), lineno, c.size()));
    try {
      rows.push_back(MetricsRow{c[0], c[1], std::stoull(c[2]), std::stoull(c[3]), std::stoull(c[4]), std::stod(c[5]),
                                std::stod(c[6]), std::stod(c[7]), std::stoull(c[8]), std::stoull(c[9])});
    } catch (const std::logic_error&) {
      throw InvalidInput(fmt::format("{}:{}: malformed number", path.string(), lineno));
    }
  }
  return rows;
}

void write_series_csv(const std::filesystem::path& path, const std::vector<SeriesPoint>& points) {
  std::string s = "parameter,value,seed,final_sqrt_pehe,final_ate_error\n";
  for (const auto& p : points) {
    s += fmt::format("{},{},{},{},{}\n", p.parameter, num(p.value), p.seed, num(p.final_pehe), num(p.final_ate));
  }
  io::write_atomic(path, s);
}

std::vector<SeriesPoint> read_series_csv(const std::filesystem::path& path) {
  std::stringstream in(io::read_file(path));
  std::string line;
  std::getline(in, line);
  if (line.rfind("parameter,value,seed", 0) != 0) throw InvalidInput(path.string() + ": not a series file");
  std::vector<SeriesPoint> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto c = split_csv_line(line);
    if (c.size() != 5) throw InvalidInput(fmt::format("{}:{}: expected 5 columns", path.string(), lineno));
    try {
      out.push_back(SeriesPoint{c[0], std::stod(c[1]), std::stoull(c[2]), std::stod(c[3]), std::stod(c[4])});
    } catch (const std::logic_error&) {
      throw InvalidInput(fmt::format("{}:{}: malformed number", path.string(), lineno));
    }
  }
  return out;
}

void write_failures_csv(const std::filesystem::path& path, const std::vector<CellFailure>& failures) {
  std::string s = "scenario,strategy,seed,message\n";
  for (const auto& f : failures) {
    std::string msg = f.message;
    std::replace_if(msg.begin(), msg.end(), [](char ch) { return ch == ',' || ch == '\n'; }, ';');
    s += fmt::format("{},{},{},{}\n", f.scenario, f.strategy, f.seed, msg);
  }
  io::write_atomic(path, s);
}

std::string render_table(const std::vector<MetricsRow>& rows) {
  const auto agg = aggregate(rows);
  std::vector<std::string> scenarios;
  for (const auto& a : agg)
    if (std::find(scenarios.begin(), scenarios.end(), a.scenario) == scenarios.end()) scenarios.push_back(a.scenario);
  std::string out;
  for (const auto& sc : scenarios) {
    std::size_t last = 0;
    std::vector<std::string> strategies;
    for (const auto& a : agg) {
      if (a.scenario != sc) continue;
      last = std::max(last, a.stage);
      if (std::find(strategies.begin(), strategies.end(), a.strategy) == strategies.end()) strategies.push_back(a.strategy);
    }
    auto label = [&](std::size_t d) -> std::string {
      if (last == 2) return d == 0 ? "Previous data" : "New data";
      return fmt::format("Dataset {}", d + 1);
    };
    out += fmt::format("Scenario: {} (stage {}, mean +- std over seeds)\n", sc, last);
    std::string header = fmt::format("{:<16}", "Strategy");
    for (std::size_t d = 0; d < last; ++d) header += fmt::format(" | {:^33}", label(d));
    out += header + "\n";
    std::string sub = fmt::format("{:<16}", "");
    for (std::size_t d = 0; d < last; ++d) sub += fmt::format(" | {:>16} {:>16}", "sqrt(PEHE)", "ATE error");
    out += sub + "\n" + std::string(header.size(), '-') + "\n";
    for (const auto& st : strategies) {
      std::string line = fmt::format("{:<16}", st);
      for (std::size_t d = 0; d < last; ++d) {
        auto it = std::find_if(agg.begin(), agg.end(), [&](const AggregateRow& a) {
          return a.scenario == sc && a.strategy == st && a.stage == last && a.eval_dataset == d;
        });
        if (it == agg.end()) {
          line += fmt::format(" | {:>16} {:>16}", "-", "-");
        } else {
          line += fmt::format(" | {:>16} {:>16}", fmt::format("{:.3f}+-{:.3f}", it->pehe_mean, it->pehe_std),
                              fmt::format("{:.3f}+-{:.3f}", it->ate_mean, it->ate_std));
        }
      }
      out += line + "\n";
    }
    out += "\n";
  }
  return out;
}

std::string render_series(const std::vector<SeriesPoint>& points) {
  std::map<std::pair<std::string, double>, std::vector<double>> groups;
  std::vector<std::pair<std::string, double>> order;
  for (const auto& p : points) {
    auto [it, inserted] = groups.try_emplace({p.parameter, p.value});
    if (inserted) order.push_back(it->first);
    it->second.push_back(p.final_pehe);
  }
  std::string out = fmt::format("{:<20} {:>10} {:>8} {:>20}\n", "parameter", "value", "seeds", "final sqrt(PEHE)");
  for (const auto& k : order) {
    const auto& v = groups.at(k);
    out += fmt::format("{:<20} {:>10} {:>8} {:>20}\n", k.first, num(k.second), v.size(),
                       fmt::format("{:.4f}+-{:.4f}", mean_of(v), std_of(v)));
  }
  return out;
}

}  // namespace cerl::eval
