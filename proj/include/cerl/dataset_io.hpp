#pragma once

// Dataset files: one CSV per source whose header cells are "<name>:<role>", plus a
// "<file>.meta.json" sidecar with everything needed to regenerate it.

#include <filesystem>

#include "json.hpp"

#include "cerl/synthgen.hpp"

namespace cerl::io {

nlohmann::json to_json(const synth::VariableLayout& layout);
synth::VariableLayout layout_from_json(const nlohmann::json& j);
nlohmann::json to_json(const synth::SourceSpec& spec);
synth::SourceSpec source_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const synth::StructuralWeights& w);
synth::StructuralWeights weights_from_json(const nlohmann::json& j);
nlohmann::json to_json(const synth::DatasetSplit& s);
synth::DatasetSplit split_from_json(const nlohmann::json& j);

struct DatasetManifest {
  synth::VariableLayout layout;
  synth::SourceSpec spec;
  synth::StructuralWeights weights;
  synth::DatasetSplit split;
  std::size_t n = 0;
  std::uint64_t seed = 0;
  int source_id = 0;
  std::string config_hash;
};

void write_dataset(const std::filesystem::path& csv, const synth::ObservationalDataset& data,
                   const DatasetManifest& manifest);
synth::ObservationalDataset read_dataset(const std::filesystem::path& csv);
DatasetManifest read_manifest(const std::filesystem::path& csv);
std::filesystem::path manifest_path(const std::filesystem::path& csv);

}  // namespace cerl::io
