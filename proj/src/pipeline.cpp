#include "cerl/pipeline.hpp"

#include <chrono>
#include <cstdlib>
#include <map>
#include <memory>
#include <numeric>
#include <ostream>

#include <fmt/format.h>

#include "cerl/checkpoint.hpp"
#include "cerl/dataset_io.hpp"

namespace cerl::app {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::pair<Command, std::string_view> kCommands[] = {
    {Command::generate, "generate"}, {Command::train, "train"},   {Command::evaluate, "evaluate"},
    {Command::sweep, "sweep"},       {Command::ablate, "ablate"}, {Command::report, "report"},
};

void say(const PipelineOptions& opt, const std::string& line) {
  if (opt.log) *opt.log << line << '\n';
}

eval::RunSettings settings_for(const ExperimentConfig& cfg, std::uint64_t seed) {
  eval::RunSettings s = cfg.settings;
  s.seed = seed;
  return s;
}

std::size_t source_count(const ExperimentConfig& cfg) {
  return cfg.scenario.explicit_specs.empty() ? cfg.scenario.sources : cfg.scenario.explicit_specs.size();
}

json stamp_for(const ExperimentConfig& cfg, std::uint64_t seed) {
  return {{"config_hash", config_hash(cfg)}, {"data_hash", data_hash(cfg)}, {"seed", seed}};
}

bool bundle_complete(const fs::path& dir, const std::string& hash) {
  if (!fs::exists(dir / "bundle.json")) return false;
  try {
    return io::load_container(dir / "bundle.json", "stage-bundle").at("stamp").at("config_hash") == hash;
  } catch (const std::exception&) {
    return false;
  }
}

json bundle_stamp(const fs::path& dir) { return io::load_container(dir / "bundle.json", "stage-bundle").at("stamp"); }

std::shared_ptr<const eval::StageData> stage_data(const synth::SourceData& src) {
  return std::make_shared<const eval::StageData>(model::UnitData::from(src.data, src.split.train),
                                                 model::UnitData::from(src.data, src.split.validation),
                                                 src.data.source_id);
}

void write_config(const ExperimentConfig& cfg, const Workspace& ws) {
  fs::create_directories(ws.run_dir());
  io::write_atomic(ws.run_dir() / "config.json", to_json(cfg).dump(2) + "\n");
}

}  // namespace

Command command_from_string(std::string_view s) {
  for (const auto& [c, name] : kCommands)
    if (name == s) return c;
  throw ConfigError("unknown command '" + std::string(s) + "'");
}

std::string_view to_string(Command c) {
  for (const auto& [cmd, name] : kCommands)
    if (cmd == c) return name;
  throw ConfigError("unknown command");
}

fs::path default_output_root() {
  const char* env = std::getenv(kOutputRootEnv);
  return env != nullptr && *env != '\0' ? fs::path(env) : fs::path("cerl-output");
}

Workspace::Workspace(const ExperimentConfig& cfg)
    : root_(cfg.output_dir.empty() ? default_output_root() : cfg.output_dir),
      config_hash_(config_hash(cfg)),
      data_hash_(data_hash(cfg)) {}

fs::path Workspace::data_dir(std::uint64_t seed) const {
  return root_ / "data" / data_hash_ / fmt::format("seed-{}", seed);
}
fs::path Workspace::source_csv(std::uint64_t seed, std::size_t k) const {
  return data_dir(seed) / fmt::format("source-{}.csv", k);
}
fs::path Workspace::test_csv(std::uint64_t seed, std::size_t k) const {
  return data_dir(seed) / fmt::format("source-{}.test.csv", k);
}
fs::path Workspace::run_dir() const { return root_ / "runs" / config_hash_; }
fs::path Workspace::stage_dir(std::uint64_t seed, eval::StrategyKind kind, std::size_t stage) const {
  return run_dir() / fmt::format("seed-{}", seed) / std::string(eval::to_string(kind)) / fmt::format("stage-{}", stage);
}

synth::SourceData load_source(const fs::path& csv) {
  if (!fs::exists(csv)) throw MissingInput("missing dataset " + csv.string() + " (run generate first)");
  synth::SourceData s;
  s.data = io::read_dataset(csv);
  s.split = io::read_manifest(csv).split;
  return s;
}

synth::SourceData load_test_source(const fs::path& test_csv) {
  if (!fs::exists(test_csv)) throw MissingInput("missing test split " + test_csv.string() + " (run generate first)");
  synth::SourceData s;
  s.data = io::read_dataset(test_csv);
  s.split.test.resize(s.data.size());
  std::iota(s.split.test.begin(), s.split.test.end(), std::size_t{0});
  return s;
}

PipelineResult generate(const ExperimentConfig& cfg, const PipelineOptions& opt) {
  cfg.validate();
  const Workspace ws(cfg);
  const std::string dhash = data_hash(cfg);
  const std::size_t D = source_count(cfg);
  PipelineResult res;
  for (std::uint64_t seed : cfg.seeds) {
    bool cached = true;
    for (std::size_t k = 0; k < D && cached; ++k) {
      const fs::path csv = ws.source_csv(seed, k);
      cached = fs::exists(csv) && fs::exists(io::manifest_path(csv)) && fs::exists(ws.test_csv(seed, k)) &&
               io::read_manifest(csv).config_hash == dhash;
    }
    if (cached) {
      for (std::size_t k = 0; k < D; ++k) res.artifacts.push_back(ws.source_csv(seed, k));
      res.reused += D;
      say(opt, fmt::format("seed {}: reusing {} cached sources in {}", seed, D, ws.data_dir(seed).string()));
      continue;
    }
    const auto specs = eval::scenario_specs(cfg.scenario, seed);
    const auto weights = synth::StructuralWeights::draw(cfg.scenario.layout, seed);
    const auto seq = synth::make_sequence(cfg.scenario.layout, specs, weights, cfg.scenario.n_per_source);
    fs::create_directories(ws.data_dir(seed));
    for (std::size_t k = 0; k < D; ++k) {
      io::DatasetManifest m{cfg.scenario.layout, specs[k], weights, seq[k].split, cfg.scenario.n_per_source,
                            specs[k].seed, static_cast<int>(k), dhash};
      // The test file carries the full manifest: regenerate the source, then take split.test.
      io::write_dataset(ws.test_csv(seed, k), seq[k].data.subset(seq[k].split.test), m);
      io::write_dataset(ws.source_csv(seed, k), seq[k].data, m);
      res.artifacts.push_back(ws.source_csv(seed, k));
    }
    say(opt, fmt::format("seed {}: wrote {} sources to {}", seed, D, ws.data_dir(seed).string()));
  }
  return res;
}

namespace {

// Trains stages [first, last] of one strategy for one seed. Stage d reads only source d-1,
// except strategy C, which re-reads every earlier source.
void train_strategy(const ExperimentConfig& cfg, const Workspace& ws, std::uint64_t seed, eval::StrategyKind kind,
                    std::size_t first, std::size_t last, std::map<bool, model::RepresentationModel>& stage1,
                    PipelineResult& res, const PipelineOptions& opt) {
  const eval::RunSettings settings = settings_for(cfg, seed);
  const std::string hash = config_hash(cfg);
  const std::string name(eval::to_string(kind));
  std::unique_ptr<eval::Learner> learner;

  auto shared_stage1 = [&]() -> const model::RepresentationModel* {
    const model::Architecture arch = kind == eval::StrategyKind::retrain_all ? settings.arch : settings.arch_for(kind);
    auto it = stage1.find(arch.cosine_output);
    if (it == stage1.end()) {
      it = stage1.emplace(arch.cosine_output, eval::train_first_stage(load_source(ws.source_csv(seed, 0)), settings, arch))
               .first;
    }
    return &it->second;
  };

  for (std::size_t d = first; d <= last; ++d) {
    const fs::path dir = ws.stage_dir(seed, kind, d);
    if (bundle_complete(dir, hash)) {
      learner.reset();
      ++res.reused;
      res.artifacts.push_back(dir);
      continue;
    }
    if (!learner) {
      if (d == 1) {
        learner = eval::make_learner(kind, settings, shared_stage1());
      } else if (kind == eval::StrategyKind::retrain_all) {
        learner = eval::make_learner(kind, settings, shared_stage1());
        for (std::size_t k = 0; k + 1 < d; ++k) learner->fit_stage(stage_data(load_source(ws.source_csv(seed, k))));
      } else {
        const fs::path prev = ws.stage_dir(seed, kind, d - 1);
        if (!bundle_complete(prev, hash)) {
          throw StageOrderError(fmt::format("{} stage {} for seed {} needs stage {} first ({} is missing)", name, d,
                                            seed, d - 1, prev.string()));
        }
        learner = eval::resume_learner(eval::load_bundle(prev), settings);
      }
    }
    auto data = stage_data(load_source(ws.source_csv(seed, d - 1)));
    std::weak_ptr<const eval::StageData> watch = data;
    const auto t0 = std::chrono::steady_clock::now();
    learner->fit_stage(std::move(data));
    const double runtime = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!eval::keeps_raw_data(kind) && (!watch.expired() || learner->raw_covariate_rows() != 0)) {
      throw eval::FirewallViolation(name + " kept raw data past stage " + std::to_string(d));
    }
    eval::StageBundle b = learner->bundle();
    b.runtime_seconds = runtime;
    json stamp = stamp_for(cfg, seed);
    stamp["stage"] = d;
    stamp["dataset_fingerprint"] = io::fingerprint(io::read_file(ws.source_csv(seed, d - 1)));
    stamp["stored_floats"] = learner->stored_floats();
    stamp["raw_covariate_rows"] = learner->raw_covariate_rows();
    eval::save_bundle(dir, b, stamp);
    res.artifacts.push_back(dir);
    say(opt, fmt::format("seed {} {} stage {}: {:.1f}s", seed, name, d, runtime));
  }
}

}  // namespace

PipelineResult train(const ExperimentConfig& cfg, const PipelineOptions& opt) {
  cfg.validate();
  const Workspace ws(cfg);
  const std::size_t D = source_count(cfg);
  if (opt.stage && (*opt.stage < 1 || *opt.stage > D)) {
    throw ConfigError(fmt::format("stage must lie in [1, {}], got {}", D, *opt.stage));
  }
  write_config(cfg, ws);
  PipelineResult res;
  for (std::uint64_t seed : cfg.seeds) {
    std::map<bool, model::RepresentationModel> stage1;
    for (eval::StrategyKind kind : cfg.strategies) {
      const std::size_t first = opt.stage.value_or(1), last = opt.stage.value_or(D);
      train_strategy(cfg, ws, seed, kind, first, last, stage1, res, opt);
    }
  }
  return res;
}

namespace {

std::vector<eval::MetricsRow> score_bundles(const ExperimentConfig& cfg, const Workspace& ws,
                                            const std::vector<eval::StrategyKind>& kinds) {
  const std::size_t D = source_count(cfg);
  const std::string hash = config_hash(cfg);
  std::vector<eval::MetricsRow> rows;
  for (std::uint64_t seed : cfg.seeds) {
    std::vector<synth::SourceData> tests;
    for (std::size_t k = 0; k < D; ++k) tests.push_back(load_test_source(ws.test_csv(seed, k)));
    for (eval::StrategyKind kind : kinds) {
      for (std::size_t d = 1; d <= D; ++d) {
        const fs::path dir = ws.stage_dir(seed, kind, d);
        if (!bundle_complete(dir, hash)) {
          throw MissingInput(fmt::format("no stage {} bundle for {} seed {} in {} (run train first)", d,
                                         eval::to_string(kind), seed, dir.string()));
        }
        const eval::StageBundle b = eval::load_bundle(dir);
        const json stamp = bundle_stamp(dir);
        for (std::size_t e = 0; e < d; ++e) {
          const eval::EffectMetrics m = eval::score(b.model, tests[e]);
          rows.push_back(eval::MetricsRow{cfg.scenario.name, std::string(eval::to_string(kind)), d, e, seed,
                                          m.sqrt_pehe, m.ate_error, b.runtime_seconds,
                                          stamp.at("stored_floats").get<std::size_t>(),
                                          stamp.at("raw_covariate_rows").get<std::size_t>()});
        }
      }
    }
  }
  return rows;
}

}  // namespace

PipelineResult evaluate(const ExperimentConfig& cfg, const PipelineOptions& opt) {
  cfg.validate();
  const Workspace ws(cfg);
  const auto rows = score_bundles(cfg, ws, cfg.strategies);
  fs::create_directories(ws.report_dir());
  eval::write_metrics_csv(ws.report_dir() / "metrics.csv", rows);
  PipelineResult res;
  res.text = eval::render_table(rows);
  io::write_atomic(ws.report_dir() / "table.txt", res.text);
  io::save_container(ws.report_dir() / "report.json", "report",
                     {{"config_hash", config_hash(cfg)}, {"seeds", cfg.seeds}, {"rows", rows.size()}});
  res.report_rows = rows.size();
  res.artifacts = {ws.report_dir() / "metrics.csv", ws.report_dir() / "table.txt"};
  say(opt, fmt::format("wrote {} rows to {}", rows.size(), (ws.report_dir() / "metrics.csv").string()));
  return res;
}

PipelineResult sweep(const ExperimentConfig& cfg, const PipelineOptions& opt) {
  cfg.validate();
  const Workspace ws(cfg);
  write_config(cfg, ws);
  eval::ScenarioSpec scenario = cfg.scenario;
  if (scenario.explicit_specs.empty()) scenario.sources = cfg.sweep.sources;
  fs::create_directories(ws.sweep_dir());
  PipelineResult res;
  std::vector<eval::SeriesPoint> all;
  const std::pair<eval::SweepParameter, const std::vector<double>*> grids[] = {
      {eval::SweepParameter::alpha, &cfg.sweep.alpha},
      {eval::SweepParameter::delta, &cfg.sweep.delta},
      {eval::SweepParameter::memory, &cfg.sweep.memory},
  };
  for (const auto& [param, values] : grids) {
    if (values->empty()) continue;
    say(opt, fmt::format("sweeping {} over {} values", eval::to_string(param), values->size()));
    auto points = eval::run_sweep(scenario, cfg.settings, cfg.seeds, param, *values);
    if (param == eval::SweepParameter::memory) {
      // Reference: strategy C with every source kept.
      for (std::uint64_t seed : cfg.seeds) {
        const auto rows = eval::run_strategy(eval::StrategyKind::retrain_all, eval::build_sequence(scenario, seed),
                                             settings_for(cfg, seed), scenario.name);
        const auto avg = eval::final_stage_average(rows, scenario.name, "C");
        points.push_back(eval::SeriesPoint{"memory-reference-C", 0.0, seed, avg.at(seed), 0.0});
      }
    }
    const fs::path path = ws.sweep_dir() / fmt::format("series-{}.csv", eval::to_string(param));
    eval::write_series_csv(path, points);
    res.artifacts.push_back(path);
    all.insert(all.end(), points.begin(), points.end());
  }
  res.text = eval::render_series(all);
  io::write_atomic(ws.sweep_dir() / "series.txt", res.text);
  res.report_rows = all.size();
  return res;
}

PipelineResult ablate(const ExperimentConfig& cfg, const PipelineOptions& opt) {
  cfg.validate();
  const Workspace ws(cfg);
  write_config(cfg, ws);
  eval::SuiteSpec spec{{cfg.scenario}, cfg.ablations, cfg.seeds, cfg.settings, cfg.jobs};
  say(opt, fmt::format("ablation: {} strategies x {} seeds", cfg.ablations.size(), cfg.seeds.size()));
  const eval::SuiteResult r = eval::run_suite(spec);
  fs::create_directories(ws.ablation_dir());
  eval::write_metrics_csv(ws.ablation_dir() / "metrics.csv", r.rows);
  if (!r.failures.empty()) eval::write_failures_csv(ws.ablation_dir() / "failures.csv", r.failures);

  std::string tests = "reference,other,stage,eval_dataset,wins,trials,p_value\n";
  std::string summary;
  const std::string ref(eval::to_string(eval::StrategyKind::cerl));
  const std::size_t D = source_count(cfg);
  for (eval::StrategyKind k : cfg.ablations) {
    const std::string other(eval::to_string(k));
    if (other == ref) continue;
    const auto t = eval::sign_test(eval::pehe_by_seed(r.rows, cfg.scenario.name, ref, D, 0),
                                   eval::pehe_by_seed(r.rows, cfg.scenario.name, other, D, 0));
    tests += fmt::format("{},{},{},0,{},{},{}\n", ref, other, D, t.wins, t.trials, t.p_value);
    summary += fmt::format("{} below {} on previous data in {}/{} seeds, sign test p = {:.4f}\n", ref, other, t.wins,
                           t.trials, t.p_value);
  }
  io::write_atomic(ws.ablation_dir() / "sign_tests.csv", tests);
  PipelineResult res;
  res.text = eval::render_table(r.rows) + summary;
  for (const auto& f : r.failures) res.text += fmt::format("FAILED {} seed {}: {}\n", f.strategy, f.seed, f.message);
  io::write_atomic(ws.ablation_dir() / "table.txt", res.text);
  res.report_rows = r.rows.size();
  res.artifacts = {ws.ablation_dir() / "metrics.csv", ws.ablation_dir() / "table.txt",
                   ws.ablation_dir() / "sign_tests.csv"};
  if (!r.failures.empty()) {
    throw std::runtime_error(fmt::format("{} ablation cells failed; see {}", r.failures.size(),
                                         (ws.ablation_dir() / "failures.csv").string()));
  }
  return res;
}

PipelineResult report(const ExperimentConfig& cfg, const PipelineOptions& opt) {
  cfg.validate();
  const Workspace ws(cfg);
  PipelineResult res;
  bool any = false;
  if (fs::exists(ws.report_dir() / "metrics.csv")) {
    const auto rows = eval::read_metrics_csv(ws.report_dir() / "metrics.csv");
    res.text += eval::render_table(rows);
    res.report_rows += rows.size();
    any = true;
  }
  if (fs::exists(ws.ablation_dir() / "metrics.csv")) {
    const auto rows = eval::read_metrics_csv(ws.ablation_dir() / "metrics.csv");
    res.text += "Ablations\n" + eval::render_table(rows);
    res.report_rows += rows.size();
    any = true;
  }
  if (fs::exists(ws.sweep_dir())) {
    std::vector<eval::SeriesPoint> points;
    for (const char* p : {"alpha", "delta", "memory"}) {
      const fs::path f = ws.sweep_dir() / fmt::format("series-{}.csv", p);
      if (!fs::exists(f)) continue;
      auto s = eval::read_series_csv(f);
      points.insert(points.end(), s.begin(), s.end());
    }
    if (!points.empty()) {
      res.text += "Sweeps\n" + eval::render_series(points);
      res.report_rows += points.size();
      any = true;
    }
  }
  if (!any) throw MissingInput("nothing to report in " + ws.run_dir().string() + " (run evaluate, sweep or ablate)");
  fs::create_directories(ws.run_dir());
  io::write_atomic(ws.run_dir() / "report.txt", res.text);
  res.artifacts.push_back(ws.run_dir() / "report.txt");
  say(opt, "wrote " + (ws.run_dir() / "report.txt").string());
  return res;
}

PipelineResult run_pipeline(const ExperimentConfig& cfg, Command command, const PipelineOptions& opt) {
  switch (command) {
    case Command::generate: return generate(cfg, opt);
    case Command::train: return train(cfg, opt);
    case Command::evaluate: return evaluate(cfg, opt);
    case Command::sweep: return sweep(cfg, opt);
    case Command::ablate: return ablate(cfg, opt);
    case Command::report: return report(cfg, opt);
  }
  throw ConfigError("unknown command");
}

}  // namespace cerl::app
