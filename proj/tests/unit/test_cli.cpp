#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "cerl/pipeline.hpp"

using namespace cerl;
using namespace cerl::app;
namespace fs = std::filesystem;

namespace {

const char* kSmall = R"({
  "scenario": {"name": "small", "preset": "substantial", "sources": 3, "n_per_source": 120, "covariate_scale": 0.1},
  "layout": {"confounders": 4, "instruments": 2, "irrelevant": 2, "adjustments": 4},
  "network": {"rep_hidden": [10], "rep_dim": 6, "head_hidden": [6], "transform_hidden": [8]},
  "train": {"epochs": 2, "batch_size": 32},
  "continual": {"identity_init_epochs": 2},
  "memory": 30,
  "seeds": [1, 2, 3]
})";

std::string read(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("cerl_cli_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

ExperimentConfig small_config(const fs::path& out) {
  ExperimentConfig cfg = parse_config_text(kSmall);
  cfg.output_dir = out;
  return cfg;
}

std::string config_error(const std::string& text) {
  try {
    parse_config_text(text, "cfg.json");
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

int run_cli(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + " " + CERL_CLI_PATH + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Config, MinimalConfigTakesDefaults) {
  const auto cfg = parse_config_text(R"({"scenario": {}, "seeds": [7]})");
  ExperimentConfig defaults;
  EXPECT_EQ(cfg.seeds, std::vector<std::uint64_t>{7});
  EXPECT_EQ(cfg.settings, defaults.settings);
  EXPECT_EQ(cfg.scenario, defaults.scenario);
  EXPECT_EQ(cfg.strategies, defaults.strategies);
}

TEST(Config, NegativeMemoryNamesTheField) {
  const std::string msg = config_error(R"({"scenario": {}, "seeds": [1], "memory": -5})");
  EXPECT_NE(msg.find("memory: must be non-negative"), std::string::npos) << msg;
}

TEST(Config, UnknownKeyIsRejectedWithItsPath) {
  const std::string msg = config_error(R"({"scenario": {}, "seeds": [1], "network": {"rep_dims": 4}})");
  EXPECT_NE(msg.find("network.rep_dims"), std::string::npos) << msg;
  EXPECT_NE(msg.find("unknown key"), std::string::npos) << msg;
}

TEST(Config, RequiredFieldsAndSyntax) {
  EXPECT_NE(config_error(R"({"seeds": [1]})").find("scenario"), std::string::npos);
  EXPECT_NE(config_error(R"({"scenario": {}})").find("seeds"), std::string::npos);
  EXPECT_NE(config_error("{\"scenario\": {},\n \"seeds\": [1,]}").find("syntax error"), std::string::npos);
  EXPECT_NE(config_error(R"({"scenario": {}, "seeds": [1], "strategies": ["Z"]})").find("strategies"),
            std::string::npos);
}

TEST(Config, CompleteFormRoundTrips) {
  const auto cfg = parse_config_text(kSmall);
  const auto back = config_from_json(to_json(cfg));
  EXPECT_EQ(back, cfg);
  EXPECT_EQ(config_hash(back), config_hash(cfg));
}

TEST(Config, HashIgnoresSeedsAndStrategiesButNotHyper) {
  auto a = parse_config_text(kSmall);
  auto b = a;
  b.seeds = {9};
  b.strategies = {eval::StrategyKind::cerl};
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.settings.hyper.alpha *= 2.0;
  EXPECT_NE(config_hash(a), config_hash(b));
  EXPECT_EQ(data_hash(a), data_hash(b));
}

TEST(Pipeline, EndToEndRowCountAndCaching) {
  const fs::path out = fresh_dir("e2e");
  const auto cfg = small_config(out);
  const auto gen = generate(cfg);
  EXPECT_EQ(gen.reused, 0u);
  EXPECT_EQ(gen.artifacts.size(), 9u);
  EXPECT_EQ(generate(cfg).reused, 9u);

  train(cfg);
  const auto again = train(cfg);
  EXPECT_EQ(again.reused, 3u * 4u * 3u);

  const auto ev = evaluate(cfg);
  // 3 seeds x 4 strategies x (1 + 2 + 3) scored datasets.
  EXPECT_EQ(ev.report_rows, 3u * 4u * 6u);
  const auto rows = eval::read_metrics_csv(Workspace(cfg).report_dir() / "metrics.csv");
  std::size_t final_rows = 0;
  for (const auto& r : rows)
    if (r.stage == 3) ++final_rows;
  EXPECT_EQ(final_rows, 3u * 4u * 3u);
  const std::string table = read(Workspace(cfg).report_dir() / "table.txt");

  // Reproducible: a fresh root yields the same numbers.
  const fs::path out2 = fresh_dir("e2e_repeat");
  const auto cfg2 = small_config(out2);
  generate(cfg2);
  train(cfg2);
  evaluate(cfg2);
  EXPECT_EQ(read(Workspace(cfg2).report_dir() / "table.txt"), table);
  const auto rows2 = eval::read_metrics_csv(Workspace(cfg2).report_dir() / "metrics.csv");
  ASSERT_EQ(rows2.size(), rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) EXPECT_EQ(rows2[i].sqrt_pehe, rows[i].sqrt_pehe);

  EXPECT_FALSE(report(cfg).text.empty());
  fs::remove_all(out);
  fs::remove_all(out2);
}

TEST(Pipeline, StageOrderAndMissingInputs) {
  const fs::path out = fresh_dir("order");
  auto cfg = small_config(out);
  cfg.seeds = {1};
  cfg.strategies = {eval::StrategyKind::cerl};
  EXPECT_THROW(train(cfg), MissingInput);
  generate(cfg);
  PipelineOptions opt;
  opt.stage = 2;
  EXPECT_THROW(train(cfg, opt), StageOrderError);
  opt.stage = 1;
  train(cfg, opt);
  opt.stage = 2;
  EXPECT_NO_THROW(train(cfg, opt));
  opt.stage = 4;
  EXPECT_THROW(train(cfg, opt), ConfigError);
  EXPECT_THROW(evaluate(cfg), MissingInput);
  fs::remove_all(out);
}

TEST(Pipeline, OutputRootFromEnvironment) {
  ::setenv(kOutputRootEnv, "/tmp/cerl-env-root", 1);
  EXPECT_EQ(default_output_root(), fs::path("/tmp/cerl-env-root"));
  ExperimentConfig cfg = parse_config_text(kSmall);
  EXPECT_EQ(Workspace(cfg).root(), fs::path("/tmp/cerl-env-root"));
  ::setenv(kOutputRootEnv, "", 1);
  EXPECT_EQ(default_output_root(), fs::path("cerl-output"));
  ::unsetenv(kOutputRootEnv);
}

TEST(Cli, ExitCodes) {
  const fs::path dir = fresh_dir("exit");
  {
    std::ofstream(dir / "ok.json") << kSmall;
    std::ofstream(dir / "bad.json") << R"({"scenario": {}, "seeds": [1], "bogus": 1})";
  }
  const std::string out = "--out " + (dir / "root").string() + " -q";
  EXPECT_EQ(run_cli("--help"), 0);
  EXPECT_EQ(run_cli("frobnicate"), 2);
  EXPECT_EQ(run_cli("generate --config " + (dir / "bad.json").string() + " " + out), 2);
  EXPECT_EQ(run_cli("generate --config " + (dir / "missing.json").string() + " " + out), 2);
  EXPECT_EQ(run_cli("train --config " + (dir / "ok.json").string() + " --memory -3 " + out), 2);
  EXPECT_EQ(run_cli("train --config " + (dir / "ok.json").string() + " --strategy Q " + out), 2);
  // Nothing generated yet: a runtime failure, not a config error.
  EXPECT_EQ(run_cli("train --config " + (dir / "ok.json").string() + " --seed 1 " + out), 3);
  EXPECT_EQ(run_cli("generate --config " + (dir / "ok.json").string() + " --seed 1 " + out), 0);
  EXPECT_TRUE(fs::exists(dir / "root" / "data"));
  EXPECT_EQ(run_cli("generate --config " + (dir / "ok.json").string() + " --seed 1 -q",
                    "CERL_OUTPUT_ROOT=" + (dir / "envroot").string()),
            0);
  EXPECT_TRUE(fs::exists(dir / "envroot" / "data"));
  fs::remove_all(dir);
}
