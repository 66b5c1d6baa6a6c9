#include "cerl/dataset_io.hpp"

#include <charconv>
#include <cstdio>
#include <sstream>

#include "cerl/checkpoint.hpp"
#include "cerl/errors.hpp"

namespace cerl::io {

using nlohmann::json;

json to_json(const synth::VariableLayout& l) {
  return json{{"confounders", l.confounders},
              {"instruments", l.instruments},
              {"irrelevant", l.irrelevant},
              {"adjustments", l.adjustments}};
}

synth::VariableLayout layout_from_json(const json& j) {
  synth::VariableLayout l;
  l.confounders = j.at("confounders").get<std::size_t>();
  l.instruments = j.at("instruments").get<std::size_t>();
  l.irrelevant = j.at("irrelevant").get<std::size_t>();
  l.adjustments = j.at("adjustments").get<std::size_t>();
  return l;
}

namespace {

json hub_json(const synth::HubParams& h) {
  return json{{"rho_max", h.rho_max}, {"rho_min", h.rho_min}, {"gamma", h.gamma}};
}

synth::HubParams hub_from(const json& j) {
  return synth::HubParams{j.at("rho_max").get<double>(), j.at("rho_min").get<double>(), j.at("gamma").get<double>()};
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& s) {
  std::size_t pos = 0;
  const double v = std::stod(s, &pos);
  if (pos != s.size()) throw InvalidInput("dataset: malformed number '" + s + "'");
  return v;
}

}  // namespace

json to_json(const synth::SourceSpec& s) {
  return json{{"mean", s.mean},
              {"confounder_hub", hub_json(s.confounder_hub)},
              {"instrument_hub", hub_json(s.instrument_hub)},
              {"irrelevant_hub", hub_json(s.irrelevant_hub)},
              {"adjustment_hub", hub_json(s.adjustment_hub)},
              {"inter_type_level", s.inter_type_level},
              {"covariate_scale", s.covariate_scale},
              {"seed", s.seed}};
}

synth::SourceSpec source_spec_from_json(const json& j) {
  synth::SourceSpec s;
  s.mean = j.at("mean").get<std::vector<double>>();
  s.confounder_hub = hub_from(j.at("confounder_hub"));
  s.instrument_hub = hub_from(j.at("instrument_hub"));
  s.irrelevant_hub = hub_from(j.at("irrelevant_hub"));
  s.adjustment_hub = hub_from(j.at("adjustment_hub"));
  s.inter_type_level = j.at("inter_type_level").get<double>();
  s.covariate_scale = j.at("covariate_scale").get<double>();
  s.seed = j.at("seed").get<std::uint64_t>();
  return s;
}

json to_json(const synth::StructuralWeights& w) {
  return json{{"b_tau", w.b_tau}, {"b_g", w.b_g}, {"b_a", w.b_a}};
}

synth::StructuralWeights weights_from_json(const json& j) {
  return synth::StructuralWeights{j.at("b_tau").get<std::vector<double>>(), j.at("b_g").get<std::vector<double>>(),
                                  j.at("b_a").get<std::vector<double>>()};
}

json to_json(const synth::DatasetSplit& s) {
  return json{{"train", s.train}, {"validation", s.validation}, {"test", s.test}};
}

synth::DatasetSplit split_from_json(const json& j) {
  return synth::DatasetSplit{j.at("train").get<std::vector<std::size_t>>(),
                             j.at("validation").get<std::vector<std::size_t>>(),
                             j.at("test").get<std::vector<std::size_t>>()};
}

std::filesystem::path manifest_path(const std::filesystem::path& csv) {
  return std::filesystem::path(csv.string() + ".meta.json");
}

void write_dataset(const std::filesystem::path& csv, const synth::ObservationalDataset& d,
                   const DatasetManifest& m) {
  const auto& l = d.layout;
  std::ostringstream out;
  auto header = [&](const char* prefix, std::size_t count, const char* role) {
    for (std::size_t i = 0; i < count; ++i) out << prefix << i << ':' << role << ',';
  };
  header("c", l.confounders, "confounder");
  header("z", l.instruments, "instrument");
  header("i", l.irrelevant, "irrelevant");
  header("a", l.adjustments, "adjustment");
  out << "t:treatment,y:outcome,tau:tau,g:baseline,e:propensity,eps:noise,src:source_id\n";
  for (std::size_t r = 0; r < d.size(); ++r) {
    for (std::size_t c = 0; c < d.X.cols(); ++c) out << format_double(d.X(r, c)) << ',';
    out << d.T[r] << ',' << format_double(d.Y[r]) << ',' << format_double(d.tau[r]) << ','
        << format_double(d.baseline[r]) << ',' << format_double(d.propensity[r]) << ','
        << format_double(d.noise[r]) << ',' << d.source_id << '\n';
  }
  write_atomic(csv, out.str());
  json meta{{"layout", to_json(m.layout)}, {"spec", to_json(m.spec)},     {"weights", to_json(m.weights)},
            {"split", to_json(m.split)},   {"n", m.n},                   {"seed", m.seed},
            {"source_id", m.source_id},    {"config_hash", m.config_hash}};
  save_container(manifest_path(csv), "dataset-manifest", std::move(meta));
}

DatasetManifest read_manifest(const std::filesystem::path& csv) {
  const json j = load_container(manifest_path(csv), "dataset-manifest");
  DatasetManifest m;
  m.layout = layout_from_json(j.at("layout"));
  m.spec = source_spec_from_json(j.at("spec"));
  m.weights = weights_from_json(j.at("weights"));
  m.split = split_from_json(j.at("split"));
  m.n = j.at("n").get<std::size_t>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.source_id = j.at("source_id").get<int>();
  m.config_hash = j.at("config_hash").get<std::string>();
  return m;
}

synth::ObservationalDataset read_dataset(const std::filesystem::path& csv) {
  std::istringstream in(read_file(csv));
  std::string line;
  if (!std::getline(in, line)) throw InvalidInput("dataset " + csv.string() + " is empty");
  synth::ObservationalDataset d;
  std::vector<std::string> roles;
  {
    std::istringstream h(line);
    std::string cell;
    while (std::getline(h, cell, ',')) {
      const auto colon = cell.find(':');
      if (colon == std::string::npos) throw InvalidInput("dataset header cell '" + cell + "' has no role");
      roles.push_back(cell.substr(colon + 1));
    }
  }
  synth::VariableLayout counted{0, 0, 0, 0};
  for (const auto& r : roles) {
    if (r == "confounder") ++counted.confounders;
    else if (r == "instrument") ++counted.instruments;
    else if (r == "irrelevant") ++counted.irrelevant;
    else if (r == "adjustment") ++counted.adjustments;
  }
  d.layout = counted;
  const std::size_t p = counted.total();
  std::vector<double> xs;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell;
    std::size_t c = 0;
    while (std::getline(row, cell, ',')) {
      if (c >= roles.size()) throw InvalidInput("dataset row " + std::to_string(n + 1) + " has too many cells");
      const std::string& role = roles[c];
      if (c < p) xs.push_back(parse_double(cell));
      else if (role == "treatment") d.T.push_back(static_cast<int>(parse_double(cell)));
      else if (role == "outcome") d.Y.push_back(parse_double(cell));
      else if (role == "tau") d.tau.push_back(parse_double(cell));
      else if (role == "baseline") d.baseline.push_back(parse_double(cell));
      else if (role == "propensity") d.propensity.push_back(parse_double(cell));
      else if (role == "noise") d.noise.push_back(parse_double(cell));
      else if (role == "source_id") d.source_id = static_cast<int>(parse_double(cell));
      else throw InvalidInput("dataset column role '" + role + "' is not recognised");
      ++c;
    }
    if (c != roles.size()) throw InvalidInput("dataset row " + std::to_string(n + 1) + " has " + std::to_string(c) + " cells");
    ++n;
  }
  d.X = Matrix(n, p);
  d.X.values() = std::move(xs);
  return d;
}

}  // namespace cerl::io
