#pragma once

// Versioned JSON container shared by model checkpoints, transform networks, memory sets
// and stage manifests. Doubles are written in shortest round-trip form, so
// load -> save reproduces the file byte for byte.

#include <filesystem>
#include <string>

#include "json.hpp"

#include "cerl/matrix.hpp"
#include "cerl/network.hpp"

namespace cerl::io {

using nlohmann::json;

inline constexpr int kContainerVersion = 1;

json to_json(const Matrix& m);
Matrix matrix_from_json(const json& j);

json to_json(const nd::DenseNetwork& net);
nd::DenseNetwork network_from_json(const json& j);

// {"format": "cerl", "version": 1, "kind": kind, "payload": payload}
json make_container(const std::string& kind, json payload);
// Validates format, version and kind; returns the payload.
json open_container(const json& container, const std::string& kind);

std::string dump(const json& j);

// Writes to a sibling temporary and renames it into place.
void write_atomic(const std::filesystem::path& path, const std::string& contents);
std::string read_file(const std::filesystem::path& path);

void save_container(const std::filesystem::path& path, const std::string& kind, json payload);
json load_container(const std::filesystem::path& path, const std::string& kind);

// 64-bit FNV-1a, rendered as 16 hex digits.
std::string fingerprint(const std::string& bytes);

}  // namespace cerl::io
