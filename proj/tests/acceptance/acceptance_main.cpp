// Acceptance run: one PASS/FAIL line per criterion. Pass criterion numbers as arguments to
// run a subset. Exit status is non-zero when any selected criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <iterator>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "cerl/balance.hpp"
#include "cerl/memory.hpp"
#include "cerl/metrics.hpp"
#include "cerl/pipeline.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace cerl;
using namespace cerl::eval;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

app::ExperimentConfig desk() { return app::parse_config(CERL_DESK_CONFIG); }

SuiteSpec desk_suite(const app::ExperimentConfig& cfg, std::vector<StrategyKind> strategies) {
  SuiteSpec s;
  s.scenarios = {cfg.scenario};
  s.strategies = std::move(strategies);
  s.seeds = cfg.seeds;
  s.settings = cfg.settings;
  return s;
}

// Number of seeds where `a` is strictly larger than `b`.
int count_greater(const std::map<std::uint64_t, double>& a, const std::map<std::uint64_t, double>& b) {
  int n = 0;
  for (const auto& [seed, v] : a)
    if (b.count(seed) && v > b.at(seed)) ++n;
  return n;
}

std::string failures_text(const SuiteResult& r) {
  std::string s;
  for (const auto& f : r.failures) s += fmt::format(" [{} seed {}: {}]", f.strategy, f.seed, f.message);
  return s;
}

double mean_over(const std::vector<SeriesPoint>& pts, double value) {
  double s = 0.0;
  int n = 0;
  for (const auto& p : pts)
    if (p.value == value) s += p.final_pehe, ++n;
  return s / n;
}

Outcome gradients() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::string worst_name;
  bool connected = true;
  for (std::uint64_t seed : {1, 2, 3}) {
    for (const auto& c : testkit::loss_term_gradient_checks(seed)) {
      connected = connected && c.result.connected && c.result.scalars > 0;
      if (c.result.max_rel_error >= worst) worst = c.result.max_rel_error, worst_name = c.name;
    }
  }
  const double t = seconds_since(t0);
  return {connected && worst < 1e-6 && t < 30.0,
          fmt::format("7 loss terms x 3 seeds, max rel error {:.2e} ({}), {:.1f}s", worst, worst_name, t)};
}

Outcome ot_oracle() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Matrix a = testkit::random_normal(6, 3, 100 + s), b = testkit::random_normal(6, 3, 200 + s);
    balance::IPMConfig cfg;
    cfg.epsilon = 0.01;
    cfg.relative_to_median = true;
    cfg.max_iterations = 5000;
    cfg.tolerance = 1e-9;
    const double exact = balance::exact_ot_small(a, b);
    worst = std::max(worst, std::abs(balance::wasserstein_ipm(a, b, cfg) - exact) / exact);
  }
  const double t = seconds_since(t0);
  return {worst < 0.05 && t < 10.0, fmt::format("20 instances, max relative gap {:.4f}, {:.2f}s", worst, t)};
}

Outcome herding() {
  int wins = 0, first_ok = 0;
  for (std::uint64_t s = 0; s < 50; ++s) {
    const Matrix pts = testkit::random_normal(100, 5, 7000 + s);
    std::vector<double> mu(5, 0.0);
    for (std::size_t i = 0; i < 100; ++i)
      for (std::size_t c = 0; c < 5; ++c) mu[c] += pts(i, c) / 100.0;
    auto err = [&](const std::vector<std::size_t>& idx) {
      double d = 0.0;
      for (std::size_t c = 0; c < 5; ++c) {
        double m = 0.0;
        for (std::size_t i : idx) m += pts(i, c) / static_cast<double>(idx.size());
        d += (m - mu[c]) * (m - mu[c]);
      }
      return std::sqrt(d);
    };
    const auto herded = memory::herding_select(pts, 10);
    std::vector<std::size_t> all(100), random;
    std::iota(all.begin(), all.end(), 0);
    std::mt19937_64 rng(s);
    std::sample(all.begin(), all.end(), std::back_inserter(random), 10, rng);
    if (err(herded) < err(random)) ++wins;
    std::size_t best = 0;
    double best_d = INFINITY;
    for (std::size_t i = 0; i < 100; ++i) {
      const double d = err({i});
      if (d < best_d) best_d = d, best = i;
    }
    if (herded.front() == best) ++first_ok;
  }
  return {wins >= 45 && first_ok == 50, fmt::format("beats random in {}/50, first pick exact in {}/50", wins, first_ok)};
}

Outcome generator() {
  const synth::VariableLayout layout;
  const synth::SourceSpec spec;
  const auto w = synth::StructuralWeights::draw(layout, 11);
  const auto d = synth::generate_source(layout, spec, w, 100000, 12);
  const double corr = testkit::max_abs_diff(testkit::empirical_correlation(d.X), synth::assemble_correlation(layout, spec));
  const double oracle = testkit::monte_carlo_ate(layout, spec, w, 1000000, 13);
  const double rel = std::abs(d.true_ate() - oracle) / oracle;
  return {corr < 0.02 && rel < 0.005,
          fmt::format("correlation max-abs {:.4f}, ATE {:.5f} vs oracle {:.5f} ({:.3f}%)", corr, d.true_ate(), oracle,
                      100 * rel)};
}

Outcome metric_examples() {
  const std::vector<double> truth{1.0, 3.0}, est{2.0, 1.0};
  const auto a = metrics(truth, est);
  const std::vector<double> v{0.3, -1.2, 2.0};
  const auto b = metrics(v, v);
  const std::vector<double> shifted{0.3 - 0.75, -1.2 - 0.75, 2.0 - 0.75};
  const auto c = metrics(v, shifted);
  const bool ok = std::abs(a.sqrt_pehe - std::sqrt(2.5)) < 1e-12 && std::abs(a.ate_error - 0.5) < 1e-12 &&
                  b.sqrt_pehe == 0.0 && b.ate_error == 0.0 && std::abs(c.sqrt_pehe - 0.75) < 1e-12 &&
                  std::abs(c.ate_error - 0.75) < 1e-12;
  return {ok, fmt::format("sqrt-PEHE {:.10f} ATE {:.3f}; exact 0/0; offset {:.3f}/{:.3f}", a.sqrt_pehe, a.ate_error,
                          c.sqrt_pehe, c.ate_error)};
}

Outcome desk_ordering() {
  const auto cfg = desk();
  const auto t0 = Clock::now();
  const auto res = run_suite(desk_suite(
      cfg, {StrategyKind::freeze, StrategyKind::finetune, StrategyKind::retrain_all, StrategyKind::cerl}));
  const double t = seconds_since(t0);
  const std::string& sc = cfg.scenario.name;
  const auto a_new = pehe_by_seed(res.rows, sc, "A", 2, 1), b_prev = pehe_by_seed(res.rows, sc, "B", 2, 0);
  const auto c_prev = pehe_by_seed(res.rows, sc, "C", 2, 0);
  const auto cerl_prev = pehe_by_seed(res.rows, sc, "CERL", 2, 0), cerl_new = pehe_by_seed(res.rows, sc, "CERL", 2, 1);
  const int wa = count_greater(b_prev, cerl_prev), wb = count_greater(a_new, cerl_new);
  const double ratio = seed_mean(cerl_prev) / seed_mean(c_prev);
  const bool ok = res.failures.empty() && wa >= 8 && wb >= 8 && std::abs(ratio - 1.0) <= 0.15 && t < 900.0;
  return {ok, fmt::format("(a) B>CERL prev {}/10 (b) A>CERL new {}/10 (c) CERL/C prev {:.3f}; "
                          "prev A {:.3f} B {:.3f} C {:.3f} CERL {:.3f}; {:.0f}s{}",
                          wa, wb, ratio, seed_mean(pehe_by_seed(res.rows, sc, "A", 2, 0)), seed_mean(b_prev),
                          seed_mean(c_prev), seed_mean(cerl_prev), t, failures_text(res))};
}

Outcome no_shift_parity() {
  auto cfg = desk();
  cfg.scenario.name = "noshift";
  cfg.scenario.preset = synth::ShiftPreset::none;
  const auto res = run_suite(desk_suite(
      cfg, {StrategyKind::freeze, StrategyKind::finetune, StrategyKind::retrain_all, StrategyKind::cerl}));
  std::string detail;
  bool ok = res.failures.empty();
  for (std::size_t e : {0, 1}) {
    double lo = INFINITY, hi = 0.0;
    for (const char* s : {"A", "B", "C", "CERL"}) {
      const double m = seed_mean(pehe_by_seed(res.rows, cfg.scenario.name, s, 2, e));
      lo = std::min(lo, m), hi = std::max(hi, m);
      detail += fmt::format("{}{} {:.3f} ", s, e == 0 ? "prev" : "new", m);
    }
    ok = ok && hi <= 1.10 * lo;
    detail += fmt::format("(spread {:.1f}%) ", 100 * (hi / lo - 1));
  }
  return {ok, detail + failures_text(res)};
}

Outcome ablation_directions() {
  const auto cfg = desk();
  const auto res = run_suite(desk_suite(cfg, {StrategyKind::cerl, StrategyKind::cerl_no_cosine,
                                              StrategyKind::cerl_no_herding, StrategyKind::cerl_no_frt}));
  const std::string& sc = cfg.scenario.name;
  std::vector<double> means;
  std::string detail;
  for (const char* s : {"CERL", "CERL-no-cosine", "CERL-no-herding", "CERL-no-FRT"}) {
    means.push_back(seed_mean(pehe_by_seed(res.rows, sc, s, 2, 0)));
    detail += fmt::format("{} {:.3f} ", s, means.back());
  }
  const auto st = sign_test(pehe_by_seed(res.rows, sc, "CERL", 2, 0), pehe_by_seed(res.rows, sc, "CERL-no-FRT", 2, 0));
  const bool chain = std::is_sorted(means.begin(), means.end());
  return {res.failures.empty() && chain && st.p_value < 0.05,
          detail + fmt::format("; chain {}; CERL<no-FRT in {}/{} seeds, p = {:.4f}{}", chain ? "holds" : "broken",
                               st.wins, st.trials, st.p_value, failures_text(res))};
}

Outcome memory_sweep() {
  const auto cfg = desk();
  ScenarioSpec sc = cfg.scenario;
  sc.name = "five";
  sc.sources = 5;
  const std::vector<std::uint64_t> seeds{1, 2, 3};
  const std::vector<double> sizes{100, 500, 1000};
  const auto pts = run_sweep(sc, cfg.settings, seeds, SweepParameter::memory, sizes);
  std::vector<double> m;
  for (double v : sizes) m.push_back(mean_over(pts, v));

  SuiteSpec c = desk_suite(cfg, {StrategyKind::retrain_all});
  c.scenarios = {sc};
  c.seeds = seeds;
  const auto cres = run_suite(c);
  const double c_final = seed_mean(final_stage_average(cres.rows, sc.name, "C"));

  // Resources from one instrumented seed.
  RunSettings s = cfg.settings;
  s.seed = 1;
  const auto seq = build_sequence(sc, 1);
  const auto cerl_rows = run_strategy(StrategyKind::cerl, seq, s, sc.name);
  std::vector<std::size_t> cerl_f, c_f;
  for (const auto& r : cerl_rows)
    if (r.eval_dataset == 0) cerl_f.push_back(r.stored_floats);
  for (const auto& r : cres.rows)
    if (r.seed == 1 && r.eval_dataset == 0) c_f.push_back(r.stored_floats);
  bool constant = cerl_f.size() == 5, linear = c_f.size() == 5;
  for (std::size_t k = 2; constant && k < cerl_f.size(); ++k) constant = cerl_f[k] == cerl_f[1];
  for (std::size_t k = 1; linear && k < c_f.size(); ++k) linear = c_f[k] - c_f[k - 1] == c_f[1] - c_f[0] && c_f[1] > c_f[0];

  const bool monotone = m[0] >= m[1] && m[1] >= m[2];
  const double ratio = m[2] / c_final;
  return {cres.failures.empty() && monotone && std::abs(ratio - 1.0) <= 0.20 && constant && linear,
          fmt::format("final avg M=100 {:.3f} M=500 {:.3f} M=1000 {:.3f} ({}), C {:.3f}, CERL(1000)/C {:.3f}; "
                      "CERL floats {} per stage {}, C floats +{} per stage {}",
                      m[0], m[1], m[2], monotone ? "non-increasing" : "not monotone", c_final, ratio,
                      cerl_f.empty() ? 0 : cerl_f.back(), constant ? "constant" : "varying",
                      c_f.size() > 1 ? c_f[1] - c_f[0] : 0, linear ? "linear" : "not linear")};
}

Outcome robustness() {
  const auto cfg = desk();
  std::string detail;
  bool ok = true;
  for (auto p : {SweepParameter::alpha, SweepParameter::delta}) {
    const double d = p == SweepParameter::alpha ? cfg.settings.hyper.alpha : cfg.settings.hyper.delta;
    const std::vector<double> values{d / std::sqrt(10.0), d, d * std::sqrt(10.0)};
    const auto pts = run_sweep(cfg.scenario, cfg.settings, cfg.seeds, p, values);
    const double base = mean_over(pts, d);
    double worst = 0.0;
    for (double v : values) worst = std::max(worst, std::abs(mean_over(pts, v) / base - 1.0));
    ok = ok && worst < 0.25;
    detail += fmt::format("{} [{:.3f}, {:.3f}, {:.3f}] max change {:.1f}%; ", to_string(p), mean_over(pts, values[0]),
                          base, mean_over(pts, values[2]), 100 * worst);
  }
  return {ok, detail};
}

Outcome firewall() {
  auto cfg = desk();
  // Instrumented in-process run: no stage data survives a boundary for A, B or CERL.
  std::string detail;
  bool ok = true;
  {
    RunSettings s = cfg.settings;
    s.seed = 1;
    const auto seq = build_sequence(cfg.scenario, 1);
    for (auto kind : {StrategyKind::freeze, StrategyKind::finetune, StrategyKind::cerl}) {
      auto learner = make_learner(kind, s);
      std::size_t worst = 0;
      try {
        run_stages(*learner, kind, seq, 0, 1, cfg.scenario.name, [&](const Learner& l, std::size_t, double) {
          worst = std::max({worst, StageData::live_instances(), l.raw_covariate_rows()});
        });
      } catch (const FirewallViolation& e) {
        ok = false;
        detail += std::string(e.what()) + "; ";
      }
      ok = ok && worst == 0;
      detail += fmt::format("{} live rows {}; ", to_string(kind), worst);
    }
  }
  // Resume from artifacts alone: stage-1 training data removed before stage 2.
  const fs::path root = fs::temp_directory_path() / "cerl_acceptance_firewall";
  fs::remove_all(root);
  cfg.output_dir = root;
  cfg.strategies = {StrategyKind::retrain_all, StrategyKind::cerl};
  app::generate(cfg);
  auto c_only = cfg;
  c_only.strategies = {StrategyKind::retrain_all};
  app::train(c_only);
  app::PipelineOptions opt;
  opt.stage = 1;
  app::train(cfg, opt);
  const app::Workspace ws(cfg);
  for (std::uint64_t seed : cfg.seeds) fs::remove(ws.source_csv(seed, 0));
  opt.stage = 2;
  app::train(cfg, opt);
  app::evaluate(cfg);
  const auto rows = read_metrics_csv(ws.report_dir() / "metrics.csv");
  const double ratio = seed_mean(pehe_by_seed(rows, cfg.scenario.name, "CERL", 2, 0)) /
                       seed_mean(pehe_by_seed(rows, cfg.scenario.name, "C", 2, 0));
  ok = ok && std::abs(ratio - 1.0) <= 0.15;
  detail += fmt::format("resumed without stage-1 data: CERL/C prev {:.3f}", ratio);
  fs::remove_all(root);
  return {ok, detail};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all{
      {1, "gradient integrity", gradients},
      {2, "OT oracle equivalence", ot_oracle},
      {3, "herding quality", herding},
      {4, "generator fidelity", generator},
      {5, "metric exactness", metric_examples},
      {6, "desk-scale strategy ordering", desk_ordering},
      {7, "no-shift parity", no_shift_parity},
      {8, "ablation directions", ablation_directions},
      {9, "memory-size sweep and resources", memory_sweep},
      {10, "hyper-parameter robustness", robustness},
      {11, "accessibility firewall and resume", firewall},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const auto& c : all) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::cout << fmt::format("{} criterion {:>2} {}: {} [{:.1f}s]", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail,
                             seconds_since(t0))
              << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
