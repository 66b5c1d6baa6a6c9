#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include <gtest/gtest.h>

#include "cerl/metrics.hpp"
#include "cerl/suite.hpp"

using namespace cerl;
using namespace cerl::eval;

namespace {

ScenarioSpec tiny_scenario(std::size_t sources, synth::ShiftPreset preset = synth::ShiftPreset::substantial) {
  ScenarioSpec s;
  s.name = "tiny";
  s.preset = preset;
  s.sources = sources;
  s.n_per_source = 150;
  s.covariate_scale = 0.1;
  s.layout = synth::VariableLayout{4, 2, 2, 4};
  return s;
}

RunSettings tiny_settings(std::size_t memory = 30) {
  RunSettings r;
  r.train.epochs = 2;
  r.train.batch_size = 32;
  r.arch.rep_hidden = {10};
  r.arch.rep_dim = 6;
  r.arch.head_hidden = {6};
  r.arch.transform_hidden = {8};
  r.options.identity_init_epochs = 2;
  r.memory_capacity = memory;
  return r;
}

// Keeps every stage's data although it is not allowed to.
class LeakyLearner : public Learner {
 public:
  explicit LeakyLearner(const RunSettings& s) : inner_(make_learner(StrategyKind::finetune, s)) {}
  void fit_stage(std::shared_ptr<const StageData> data) override {
    kept_.push_back(data);
    inner_->fit_stage(std::move(data));
  }
  const model::RepresentationModel& model() const override { return inner_->model(); }
  std::size_t stages_completed() const override { return inner_->stages_completed(); }
  std::size_t stored_floats() const override { return inner_->stored_floats(); }
  std::size_t raw_covariate_rows() const override { return 0; }
  StageBundle bundle() const override { return inner_->bundle(); }

 private:
  std::unique_ptr<Learner> inner_;
  std::vector<std::shared_ptr<const StageData>> kept_;
};

}  // namespace

TEST(Metrics, HandComputedExamples) {
  const std::vector<double> v{0.3, -1.2, 2.0};
  const auto same = metrics(v, v);
  EXPECT_EQ(same.sqrt_pehe, 0.0);
  EXPECT_EQ(same.ate_error, 0.0);

  const std::vector<double> shifted{0.3 - 0.75, -1.2 - 0.75, 2.0 - 0.75};
  const auto off = metrics(v, shifted);
  EXPECT_NEAR(off.sqrt_pehe, 0.75, 1e-12);
  EXPECT_NEAR(off.ate_error, 0.75, 1e-12);

  const std::vector<double> truth{1.0, 3.0}, est{2.0, 1.0};
  const auto m = metrics(truth, est);
  EXPECT_NEAR(m.sqrt_pehe, std::sqrt(2.5), 1e-12);
  EXPECT_NEAR(m.sqrt_pehe, 1.5811388300841898, 1e-12);
  EXPECT_NEAR(m.ate_error, 0.5, 1e-12);
}

TEST(Metrics, JointPermutationInvariance) {
  std::vector<double> a{0.1, 0.9, -0.4, 2.2, 1.3}, b{0.0, 1.1, -0.2, 1.7, 1.0};
  const auto before = metrics(a, b);
  std::vector<std::size_t> p{3, 0, 4, 1, 2};
  std::vector<double> pa, pb;
  for (std::size_t i : p) pa.push_back(a[i]), pb.push_back(b[i]);
  const auto after = metrics(pa, pb);
  EXPECT_NEAR(after.sqrt_pehe, before.sqrt_pehe, 1e-15);
  EXPECT_NEAR(after.ate_error, before.ate_error, 1e-15);
}

TEST(Metrics, RejectsEmptyOrUnequal) {
  EXPECT_THROW(metrics(std::vector<double>{}, std::vector<double>{}), InvalidInput);
  EXPECT_THROW(metrics(std::vector<double>{1.0}, std::vector<double>{1.0, 2.0}), InvalidInput);
}

TEST(SignTest, BinomialTail) {
  EXPECT_NEAR(sign_test_p_value(10, 10), 1.0 / 1024.0, 1e-15);
  EXPECT_NEAR(sign_test_p_value(9, 10), 11.0 / 1024.0, 1e-15);
  EXPECT_NEAR(sign_test_p_value(0, 10), 1.0, 1e-15);
  std::map<std::uint64_t, double> lo{{1, 0.1}, {2, 0.5}, {3, 0.2}}, hi{{1, 0.2}, {2, 0.4}, {3, 0.3}, {4, 9.0}};
  const auto t = sign_test(lo, hi);
  EXPECT_EQ(t.trials, 3);
  EXPECT_EQ(t.wins, 2);
  EXPECT_NEAR(t.p_value, 0.5, 1e-15);
}

TEST(Strategy, NamesRoundTrip) {
  for (auto k : {StrategyKind::freeze, StrategyKind::finetune, StrategyKind::retrain_all, StrategyKind::cerl,
                 StrategyKind::cerl_no_frt, StrategyKind::cerl_no_herding, StrategyKind::cerl_no_cosine}) {
    EXPECT_EQ(strategy_from_string(to_string(k)), k);
  }
  EXPECT_THROW(strategy_from_string("D"), std::invalid_argument);
}

TEST(Strategy, AblationsChangeOnlyTheirComponent) {
  const RunSettings s = tiny_settings();
  EXPECT_FALSE(s.options_for(StrategyKind::cerl_no_frt).use_transform);
  EXPECT_EQ(s.options_for(StrategyKind::cerl_no_herding).selection, memory::Selection::random);
  EXPECT_FALSE(s.arch_for(StrategyKind::cerl_no_cosine).cosine_output);
  EXPECT_EQ(s.options_for(StrategyKind::cerl), s.options);
  EXPECT_EQ(s.arch_for(StrategyKind::cerl), s.arch);
}

TEST(Suite, TwoStrategiesThreeSeedsGiveSixCells) {
  SuiteSpec spec;
  spec.scenarios = {tiny_scenario(2)};
  spec.strategies = {StrategyKind::freeze, StrategyKind::cerl};
  spec.seeds = {4, 5, 6};
  spec.settings = tiny_settings();
  const auto res = run_suite(spec);
  EXPECT_TRUE(res.failures.empty());
  // Stage 1 scores one dataset, stage 2 scores two.
  EXPECT_EQ(res.rows.size(), 2u * 3u * 3u);
  std::set<std::pair<std::string, std::uint64_t>> cells;
  for (const auto& r : res.rows)
    if (r.stage == 2 && r.eval_dataset == 1) cells.insert({r.strategy, r.seed});
  EXPECT_EQ(cells.size(), 6u);
  std::set<std::uint64_t> seeds;
  for (const auto& c : cells) seeds.insert(c.second);
  EXPECT_EQ(seeds, (std::set<std::uint64_t>{4, 5, 6}));
}

TEST(Suite, ConcurrentCellsMatchSequential) {
  SuiteSpec spec;
  spec.scenarios = {tiny_scenario(2)};
  spec.strategies = {StrategyKind::finetune, StrategyKind::cerl};
  spec.seeds = {1, 2, 3};
  spec.settings = tiny_settings();
  const auto seq = run_suite(spec);
  spec.jobs = 3;
  const auto par = run_suite(spec);
  ASSERT_EQ(seq.rows.size(), par.rows.size());
  for (std::size_t i = 0; i < seq.rows.size(); ++i) {
    EXPECT_EQ(seq.rows[i].strategy, par.rows[i].strategy);
    EXPECT_EQ(seq.rows[i].seed, par.rows[i].seed);
    EXPECT_EQ(seq.rows[i].sqrt_pehe, par.rows[i].sqrt_pehe);
  }
}

TEST(Suite, FailingCellIsRecordedAndSuiteContinues) {
  SuiteSpec spec;
  ScenarioSpec bad = tiny_scenario(2);
  bad.name = "bad";
  synth::SourceSpec broken;
  broken.inter_type_level = 0.99;  // not positive definite for this layout
  bad.explicit_specs = {broken, broken};
  spec.scenarios = {bad, tiny_scenario(2)};
  spec.strategies = {StrategyKind::freeze};
  spec.seeds = {1};
  spec.settings = tiny_settings();
  const auto res = run_suite(spec);
  ASSERT_FALSE(res.failures.empty());
  EXPECT_EQ(res.failures.front().scenario, "bad");
  EXPECT_EQ(res.rows.size(), 3u);
}

TEST(Aggregate, DuplicateSeedsGiveTheSingleValue) {
  MetricsRow r{"s", "CERL", 2, 0, 7, 1.25, 0.5, 1.0, 10, 0};
  const auto agg = aggregate({r, r, r});
  ASSERT_EQ(agg.size(), 1u);
  EXPECT_DOUBLE_EQ(agg[0].pehe_mean, 1.25);
  EXPECT_DOUBLE_EQ(agg[0].ate_mean, 0.5);
  EXPECT_EQ(agg[0].pehe_std, 0.0);
  EXPECT_EQ(agg[0].replicates, 3u);
}

TEST(Aggregate, MeanAndSampleStd) {
  std::vector<MetricsRow> rows;
  for (double v : {1.0, 2.0, 4.0}) rows.push_back({"s", "A", 1, 0, static_cast<std::uint64_t>(v), v, v, 0, 0, 0});
  const auto agg = aggregate(rows);
  EXPECT_NEAR(agg[0].pehe_mean, 7.0 / 3.0, 1e-15);
  EXPECT_NEAR(agg[0].pehe_std, std::sqrt((16.0 / 9 + 1.0 / 9 + 25.0 / 9) / 2.0), 1e-14);
}

TEST(RunStrategy, FiveStageCerlScoresEverySeenDataset) {
  RunSettings settings = tiny_settings(5000);
  settings.seed = 3;
  const auto seq = build_sequence(tiny_scenario(5), 3);
  const auto rows = run_strategy(StrategyKind::cerl, seq, settings, "five");
  EXPECT_EQ(rows.size(), 15u);
  for (std::size_t stage = 1; stage <= 5; ++stage) {
    std::set<std::size_t> seen;
    for (const auto& r : rows)
      if (r.stage == stage) seen.insert(r.eval_dataset);
    EXPECT_EQ(seen.size(), stage);
    EXPECT_EQ(*seen.rbegin(), stage - 1);
  }
  for (const auto& r : rows) {
    EXPECT_TRUE(std::isfinite(r.sqrt_pehe));
    EXPECT_GE(r.sqrt_pehe, 0.0);
    EXPECT_GE(r.ate_error, 0.0);
  }
}

TEST(Firewall, OnlyRetrainAllKeepsRawData) {
  const auto seq = build_sequence(tiny_scenario(3), 2);
  const RunSettings settings = tiny_settings();
  for (auto kind : {StrategyKind::freeze, StrategyKind::finetune, StrategyKind::cerl, StrategyKind::cerl_no_frt,
                    StrategyKind::cerl_no_herding, StrategyKind::cerl_no_cosine, StrategyKind::retrain_all}) {
    const std::size_t before = StageData::live_instances();
    auto learner = make_learner(kind, settings);
    std::vector<std::size_t> live;
    run_stages(*learner, kind, seq, 0, 2, "fw",
               [&](const Learner& l, std::size_t, double) { live.push_back(StageData::live_instances() - before); });
    for (std::size_t s = 0; s < live.size(); ++s) {
      if (keeps_raw_data(kind)) {
        EXPECT_EQ(live[s], s + 1);
      } else {
        EXPECT_EQ(live[s], 0u) << to_string(kind);
      }
    }
    if (!keeps_raw_data(kind)) EXPECT_EQ(learner->raw_covariate_rows(), 0u);
  }
}

TEST(Firewall, LeakyLearnerIsCaught) {
  const auto seq = build_sequence(tiny_scenario(2), 2);
  LeakyLearner leaky(tiny_settings());
  EXPECT_THROW(run_stages(leaky, StrategyKind::finetune, seq, 0, 2), FirewallViolation);
}

TEST(Resources, CerlStorageIsConstantWhileRetrainGrows) {
  const auto seq = build_sequence(tiny_scenario(4), 5);
  RunSettings settings = tiny_settings(40);
  const auto cerl = run_strategy(StrategyKind::cerl, seq, settings);
  const auto c = run_strategy(StrategyKind::retrain_all, seq, settings);
  std::vector<std::size_t> cerl_floats, c_floats;
  for (const auto& r : cerl)
    if (r.eval_dataset == 0) cerl_floats.push_back(r.stored_floats);
  for (const auto& r : c)
    if (r.eval_dataset == 0) c_floats.push_back(r.stored_floats);
  const std::size_t mem = 40 * (settings.arch.rep_dim + 2);
  for (std::size_t s = 1; s < cerl_floats.size(); ++s) EXPECT_EQ(cerl_floats[s], cerl_floats[1]);
  EXPECT_GE(cerl_floats[1], mem);
  for (std::size_t s = 2; s < c_floats.size(); ++s)
    EXPECT_EQ(c_floats[s] - c_floats[s - 1], c_floats[1] - c_floats[0]);
  EXPECT_GT(c_floats[1], c_floats[0]);
}

TEST(Resume, CerlContinuesFromItsBundleAlone) {
  const auto seq = build_sequence(tiny_scenario(3), 8);
  RunSettings settings = tiny_settings();
  settings.seed = 8;
  auto full = make_learner(StrategyKind::cerl, settings);
  const auto rows_full = run_stages(*full, StrategyKind::cerl, seq, 0, 8);

  auto first = make_learner(StrategyKind::cerl, settings);
  std::vector<synth::SourceData> only_first{seq[0]};
  run_stages(*first, StrategyKind::cerl, only_first, 0, 8);
  const auto dir = std::filesystem::temp_directory_path() / "cerl_eval_resume";
  std::filesystem::remove_all(dir);
  save_bundle(dir, first->bundle(), {{"seed", 8}});
  const auto bundle = load_bundle(dir);
  auto resumed = resume_learner(bundle, settings);
  const auto rows_resumed = run_stages(*resumed, StrategyKind::cerl, seq, 1, 8);
  EXPECT_EQ(resumed->model(), full->model());
  ASSERT_EQ(rows_resumed.size(), 5u);
  EXPECT_EQ(rows_resumed.back().sqrt_pehe, rows_full.back().sqrt_pehe);
  std::filesystem::remove_all(dir);
  EXPECT_THROW(resume_learner(StageBundle{StrategyKind::retrain_all, 1}, settings), InvalidInput);
}

TEST(Reports, MetricsCsvRoundTripAndTable) {
  std::vector<MetricsRow> rows;
  for (std::uint64_t seed : {1, 2})
    for (const char* s : {"A", "CERL"})
      for (std::size_t e = 0; e < 2; ++e)
        rows.push_back({"sub", s, 2, e, seed, 0.1 * static_cast<double>(seed) + 1.0 / 3.0, 0.2, 1.5, 100, 0});
  const auto dir = std::filesystem::temp_directory_path() / "cerl_eval_reports";
  std::filesystem::create_directories(dir);
  write_metrics_csv(dir / "m.csv", rows);
  const auto back = read_metrics_csv(dir / "m.csv");
  ASSERT_EQ(back.size(), rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(back[i].sqrt_pehe, rows[i].sqrt_pehe);
    EXPECT_EQ(back[i].strategy, rows[i].strategy);
    EXPECT_EQ(back[i].seed, rows[i].seed);
  }
  const std::string table = render_table(rows);
  EXPECT_NE(table.find("Previous data"), std::string::npos);
  EXPECT_NE(table.find("CERL"), std::string::npos);

  std::vector<SeriesPoint> pts{{"alpha", 0.1, 1, 1.5, 0.2}, {"alpha", 1.0, 1, 1.25, 0.1}};
  write_series_csv(dir / "s.csv", pts);
  const auto sp = read_series_csv(dir / "s.csv");
  ASSERT_EQ(sp.size(), 2u);
  EXPECT_EQ(sp[1].value, 1.0);
  EXPECT_EQ(sp[1].final_pehe, 1.25);
  EXPECT_NE(render_series(pts).find("alpha"), std::string::npos);
  std::filesystem::remove_all(dir);
}

TEST(Sweep, OnePointPerValueAndSeed) {
  RunSettings settings = tiny_settings();
  const auto pts = run_sweep(tiny_scenario(2), settings, {1, 2}, SweepParameter::memory, {10, 20});
  ASSERT_EQ(pts.size(), 4u);
  for (const auto& p : pts) {
    EXPECT_EQ(p.parameter, "memory");
    EXPECT_TRUE(std::isfinite(p.final_pehe));
  }
  EXPECT_THROW(run_sweep(tiny_scenario(2), settings, {1}, SweepParameter::memory, {1.5}), InvalidInput);
}
