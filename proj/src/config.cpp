#include "cerl/config.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include <fmt/format.h>

#include "cerl/checkpoint.hpp"

namespace cerl::app {

using nlohmann::json;

namespace {

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

// Typed, path-aware access to one JSON object. Keys read through it are the only keys allowed.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j.is_object()) fail(path_.empty() ? "<root>" : path_, "expected an object");
  }

  [[noreturn]] static void fail(const std::string& where, const std::string& what) {
    throw ConfigError(where + ": " + what);
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }
  const json& at(const std::string& key) { return j_.at(key); }
  std::string path(const std::string& key) const { return join(path_, key); }

  void number(const std::string& key, double& out) {
    if (!has(key)) return;
    const json& v = at(key);
    if (!v.is_number()) fail(path(key), "expected a number");
    out = v.get<double>();
    if (!std::isfinite(out)) fail(path(key), "must be finite");
  }
  template <class Int>
  void integer(const std::string& key, Int& out) {
    if (!has(key)) return;
    const json& v = at(key);
    if (!v.is_number_integer()) fail(path(key), "expected an integer");
    if constexpr (std::is_unsigned_v<Int>) {
      if (v.is_number_unsigned() || v.get<std::int64_t>() >= 0) {
        out = static_cast<Int>(v.get<std::uint64_t>());
        return;
      }
      fail(path(key), fmt::format("must be non-negative, got {}", v.get<std::int64_t>()));
    } else {
      const auto x = v.get<std::int64_t>();
      if (x < std::numeric_limits<Int>::min() || x > std::numeric_limits<Int>::max()) fail(path(key), "out of range");
      out = static_cast<Int>(x);
    }
  }
  void boolean(const std::string& key, bool& out) {
    if (!has(key)) return;
    if (!at(key).is_boolean()) fail(path(key), "expected true or false");
    out = at(key).get<bool>();
  }
  void string(const std::string& key, std::string& out) {
    if (!has(key)) return;
    if (!at(key).is_string()) fail(path(key), "expected a string");
    out = at(key).get<std::string>();
  }
  void numbers(const std::string& key, std::vector<double>& out) {
    if (!has(key)) return;
    const json& v = at(key);
    if (!v.is_array()) fail(path(key), "expected an array of numbers");
    out.clear();
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number()) fail(fmt::format("{}[{}]", path(key), i), "expected a number");
      out.push_back(v[i].get<double>());
    }
  }
  void sizes(const std::string& key, std::vector<std::size_t>& out) {
    if (!has(key)) return;
    const json& v = at(key);
    if (!v.is_array()) fail(path(key), "expected an array of positive integers");
    out.clear();
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number_unsigned() || v[i].get<std::uint64_t>() == 0) {
        fail(fmt::format("{}[{}]", path(key), i), "expected a positive integer");
      }
      out.push_back(v[i].get<std::size_t>());
    }
  }
  template <class F>
  void object(const std::string& key, F&& read) {
    if (!has(key)) return;
    Fields sub(at(key), path(key));
    read(sub);
    sub.finish();
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) fail(path(it.key()), "unknown key");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

// Wraps a library validation error with the field it came from.
template <class F>
void checked(const std::string& where, F&& f) {
  try {
    f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

void read_hub(Fields& f, synth::HubParams& h) {
  f.number("rho_max", h.rho_max);
  f.number("rho_min", h.rho_min);
  f.number("gamma", h.gamma);
}

json hub_json(const synth::HubParams& h) { return {{"rho_max", h.rho_max}, {"rho_min", h.rho_min}, {"gamma", h.gamma}}; }

synth::SourceSpec read_source(const json& j, const std::string& path) {
  Fields f(j, path);
  synth::SourceSpec s;
  f.numbers("mean", s.mean);
  f.object("confounder_hub", [&](Fields& g) { read_hub(g, s.confounder_hub); });
  f.object("instrument_hub", [&](Fields& g) { read_hub(g, s.instrument_hub); });
  f.object("irrelevant_hub", [&](Fields& g) { read_hub(g, s.irrelevant_hub); });
  f.object("adjustment_hub", [&](Fields& g) { read_hub(g, s.adjustment_hub); });
  f.number("inter_type_level", s.inter_type_level);
  f.number("covariate_scale", s.covariate_scale);
  f.integer("seed", s.seed);
  f.finish();
  return s;
}

json source_json(const synth::SourceSpec& s) {
  return {{"mean", s.mean},
          {"confounder_hub", hub_json(s.confounder_hub)},
          {"instrument_hub", hub_json(s.instrument_hub)},
          {"irrelevant_hub", hub_json(s.irrelevant_hub)},
          {"adjustment_hub", hub_json(s.adjustment_hub)},
          {"inter_type_level", s.inter_type_level},
          {"covariate_scale", s.covariate_scale},
          {"seed", s.seed}};
}

std::vector<eval::StrategyKind> read_strategies(Fields& f, const std::string& key,
                                                std::vector<eval::StrategyKind> fallback) {
  if (!f.has(key)) return fallback;
  const json& v = f.at(key);
  if (!v.is_array() || v.empty()) Fields::fail(f.path(key), "expected a non-empty array of strategy names");
  std::vector<eval::StrategyKind> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const std::string where = fmt::format("{}[{}]", f.path(key), i);
    if (!v[i].is_string()) Fields::fail(where, "expected a strategy name");
    checked(where, [&] { out.push_back(eval::strategy_from_string(v[i].get<std::string>())); });
  }
  return out;
}

json strategies_json(const std::vector<eval::StrategyKind>& ks) {
  json a = json::array();
  for (auto k : ks) a.push_back(std::string(eval::to_string(k)));
  return a;
}

std::string line_col(const std::string& text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i + 1 < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return fmt::format("line {}, column {}", line, col);
}

}  // namespace

void ExperimentConfig::validate() const {
  checked("scenario", [&] { scenario.validate(); });
  checked("train", [&] { settings.train.validate(); });
  checked("hyper", [&] { settings.hyper.validate(); });
  const double ilr = settings.incremental_learning_rate;
  if (!std::isfinite(ilr) || ilr < 0.0) throw ConfigError("train.incremental_learning_rate: must be >= 0");
  if (settings.memory_capacity < 2) throw ConfigError("memory: must be at least 2");
  const auto& a = settings.arch;
  if (a.rep_dim == 0) throw ConfigError("network.rep_dim: must be positive");
  if (seeds.empty()) throw ConfigError("seeds: at least one seed is required");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw ConfigError("seeds: duplicate seed");
  }
  if (strategies.empty()) throw ConfigError("strategies: at least one strategy is required");
  if (jobs < 1) throw ConfigError("jobs: must be at least 1");
  if (settings.options.identity_init_epochs < 0) throw ConfigError("continual.identity_init_epochs: must be >= 0");
  if (settings.options.phi_warmup_epochs < 0) throw ConfigError("continual.phi_warmup_epochs: must be >= 0");
  if (sweep.sources < 2) throw ConfigError("sweep.sources: must be at least 2");
  for (std::size_t i = 0; i < sweep.memory.size(); ++i) {
    const double m = sweep.memory[i];
    if (m < 2 || m != std::floor(m)) throw ConfigError(fmt::format("sweep.memory[{}]: must be an integer >= 2", i));
  }
  for (const auto* list : {&sweep.alpha, &sweep.delta}) {
    for (double v : *list) {
      if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("sweep: alpha and delta values must be finite and >= 0");
    }
  }
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig cfg;
  Fields root(j, "");
  if (!root.has("scenario")) Fields::fail("scenario", "required");
  if (!root.has("seeds")) Fields::fail("seeds", "required");

  root.object("scenario", [&](Fields& f) {
    auto& s = cfg.scenario;
    f.string("name", s.name);
    if (f.has("preset")) {
      if (!f.at("preset").is_string()) Fields::fail(f.path("preset"), "expected a string");
      checked(f.path("preset"), [&] { s.preset = synth::shift_preset_from_string(f.at("preset").get<std::string>()); });
    }
    f.integer("sources", s.sources);
    f.integer("n_per_source", s.n_per_source);
    f.number("covariate_scale", s.covariate_scale);
    if (f.has("specs")) {
      const json& v = f.at("specs");
      if (!v.is_array()) Fields::fail(f.path("specs"), "expected an array of source specs");
      for (std::size_t i = 0; i < v.size(); ++i) s.explicit_specs.push_back(read_source(v[i], fmt::format("scenario.specs[{}]", i)));
      if (!s.explicit_specs.empty()) s.sources = s.explicit_specs.size();
    }
  });
  root.object("layout", [&](Fields& f) {
    auto& l = cfg.scenario.layout;
    f.integer("confounders", l.confounders);
    f.integer("instruments", l.instruments);
    f.integer("irrelevant", l.irrelevant);
    f.integer("adjustments", l.adjustments);
  });
  root.object("hyper", [&](Fields& f) {
    auto& h = cfg.settings.hyper;
    f.number("alpha", h.alpha);
    f.number("lambda", h.lambda);
    f.number("beta", h.beta);
    f.number("delta", h.delta);
  });
  if (root.has("memory")) {
    const json& m = root.at("memory");
    if (!m.is_number_integer()) Fields::fail("memory", "expected an integer");
    if (m.is_number_integer() && !m.is_number_unsigned() && m.get<std::int64_t>() < 0) {
      Fields::fail("memory", fmt::format("must be non-negative, got {}", m.get<std::int64_t>()));
    }
    cfg.settings.memory_capacity = m.get<std::size_t>();
  }
  root.object("network", [&](Fields& f) {
    auto& a = cfg.settings.arch;
    f.sizes("rep_hidden", a.rep_hidden);
    f.integer("rep_dim", a.rep_dim);
    f.sizes("head_hidden", a.head_hidden);
    f.sizes("transform_hidden", a.transform_hidden);
    if (f.has("activation")) {
      if (!f.at("activation").is_string()) Fields::fail(f.path("activation"), "expected a string");
      checked(f.path("activation"), [&] { a.activation = nd::activation_from_string(f.at("activation").get<std::string>()); });
    }
    f.boolean("cosine_output", a.cosine_output);
  });
  root.object("train", [&](Fields& f) {
    auto& t = cfg.settings.train;
    f.integer("epochs", t.epochs);
    f.integer("batch_size", t.batch_size);
    f.number("learning_rate", t.learning_rate);
    f.number("incremental_learning_rate", cfg.settings.incremental_learning_rate);
    f.integer("patience", t.patience);
    f.integer("memory_batch", t.memory_batch);
    f.integer("max_redraws", t.max_redraws);
    f.object("ipm", [&](Fields& g) {
      g.number("epsilon", t.ipm.epsilon);
      g.boolean("relative_to_median", t.ipm.relative_to_median);
      g.integer("max_iterations", t.ipm.max_iterations);
      g.number("tolerance", t.ipm.tolerance);
    });
  });
  root.object("continual", [&](Fields& f) {
    auto& o = cfg.settings.options;
    f.boolean("phi_outcome_gradient", o.phi_outcome_gradient);
    f.boolean("stop_gradient_transform", o.stop_gradient_transform);
    f.boolean("warm_start_heads", o.warm_start_heads);
    f.integer("identity_init_epochs", o.identity_init_epochs);
    f.integer("phi_warmup_epochs", o.phi_warmup_epochs);
  });
  {
    const json& v = root.at("seeds");
    if (!v.is_array()) Fields::fail("seeds", "expected an array of non-negative integers");
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number_unsigned()) Fields::fail(fmt::format("seeds[{}]", i), "expected a non-negative integer");
      cfg.seeds.push_back(v[i].get<std::uint64_t>());
    }
  }
  {
    std::string out;
    root.string("output_dir", out);
    cfg.output_dir = out;
  }
  cfg.strategies = read_strategies(root, "strategies", cfg.strategies);
  cfg.ablations = read_strategies(root, "ablations", cfg.ablations);
  root.object("sweep", [&](Fields& f) {
    f.numbers("alpha", cfg.sweep.alpha);
    f.numbers("delta", cfg.sweep.delta);
    f.numbers("memory", cfg.sweep.memory);
    f.integer("sources", cfg.sweep.sources);
  });
  root.integer("jobs", cfg.jobs);
  root.finish();
  cfg.validate();
  return cfg;
}

ExperimentConfig parse_config_text(const std::string& text, const std::string& origin) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(fmt::format("{}: {}: syntax error: {}", origin, line_col(text, e.byte), e.what()));
  }
  try {
    return config_from_json(j);
  } catch (const ConfigError& e) {
    throw ConfigError(origin + ": " + e.what());
  }
}

ExperimentConfig parse_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = io::read_file(path);
  } catch (const std::exception& e) {
    throw ConfigError(path.string() + ": cannot read config: " + e.what());
  }
  return parse_config_text(text, path.string());
}

json to_json(const ExperimentConfig& cfg) {
  const auto& s = cfg.scenario;
  const auto& a = cfg.settings.arch;
  const auto& t = cfg.settings.train;
  const auto& h = cfg.settings.hyper;
  const auto& o = cfg.settings.options;
  json scenario = {{"name", s.name},
                   {"preset", std::string(synth::to_string(s.preset))},
                   {"sources", s.sources},
                   {"n_per_source", s.n_per_source},
                   {"covariate_scale", s.covariate_scale}};
  if (!s.explicit_specs.empty()) {
    json specs = json::array();
    for (const auto& sp : s.explicit_specs) specs.push_back(source_json(sp));
    scenario["specs"] = specs;
  }
  return {
      {"scenario", scenario},
      {"layout",
       {{"confounders", s.layout.confounders},
        {"instruments", s.layout.instruments},
        {"irrelevant", s.layout.irrelevant},
        {"adjustments", s.layout.adjustments}}},
      {"hyper", {{"alpha", h.alpha}, {"lambda", h.lambda}, {"beta", h.beta}, {"delta", h.delta}}},
      {"memory", cfg.settings.memory_capacity},
      {"network",
       {{"rep_hidden", a.rep_hidden},
        {"rep_dim", a.rep_dim},
        {"head_hidden", a.head_hidden},
        {"transform_hidden", a.transform_hidden},
        {"activation", std::string(nd::to_string(a.activation))},
        {"cosine_output", a.cosine_output}}},
      {"train",
       {{"epochs", t.epochs},
        {"batch_size", t.batch_size},
        {"learning_rate", t.learning_rate},
        {"incremental_learning_rate", cfg.settings.incremental_learning_rate},
        {"patience", t.patience},
        {"memory_batch", t.memory_batch},
        {"max_redraws", t.max_redraws},
        {"ipm",
         {{"epsilon", t.ipm.epsilon},
          {"relative_to_median", t.ipm.relative_to_median},
          {"max_iterations", t.ipm.max_iterations},
          {"tolerance", t.ipm.tolerance}}}}},
      {"continual",
       {{"phi_outcome_gradient", o.phi_outcome_gradient},
        {"stop_gradient_transform", o.stop_gradient_transform},
        {"warm_start_heads", o.warm_start_heads},
        {"identity_init_epochs", o.identity_init_epochs},
        {"phi_warmup_epochs", o.phi_warmup_epochs}}},
      {"seeds", cfg.seeds},
      {"output_dir", cfg.output_dir.string()},
      {"strategies", strategies_json(cfg.strategies)},
      {"ablations", strategies_json(cfg.ablations)},
      {"sweep",
       {{"alpha", cfg.sweep.alpha},
        {"delta", cfg.sweep.delta},
        {"memory", cfg.sweep.memory},
        {"sources", cfg.sweep.sources}}},
      {"jobs", cfg.jobs},
  };
}

std::string config_hash(const ExperimentConfig& cfg) {
  json j = to_json(cfg);
  for (const char* k : {"output_dir", "jobs", "seeds", "strategies", "ablations", "sweep"}) j.erase(k);
  return io::fingerprint(j.dump());
}

std::string data_hash(const ExperimentConfig& cfg) {
  const json j = to_json(cfg);
  return io::fingerprint(json{{"scenario", j.at("scenario")}, {"layout", j.at("layout")}}.dump());
}

}  // namespace cerl::app
