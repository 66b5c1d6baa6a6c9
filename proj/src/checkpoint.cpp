#include "cerl/checkpoint.hpp"

#include <cstdint>
#include <fstream>
#include <random>
#include <sstream>

#include "cerl/errors.hpp"

namespace cerl::io {

json to_json(const Matrix& m) {
  return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", m.values()}};
}

Matrix matrix_from_json(const json& j) {
  const auto rows = j.at("rows").get<std::size_t>();
  const auto cols = j.at("cols").get<std::size_t>();
  auto data = j.at("data").get<std::vector<double>>();
  if (data.size() != rows * cols) throw InvalidInput("matrix payload size does not match its shape");
  Matrix m(rows, cols);
  m.values() = std::move(data);
  return m;
}

json to_json(const nd::DenseNetwork& net) {
  json layers = json::array();
  for (std::size_t k = 0; k < net.weights.size(); ++k) {
    layers.push_back({{"weight", to_json(net.weights[k])}, {"bias", to_json(net.biases[k])}});
  }
  return json{{"layer_sizes", net.layer_sizes},
              {"activation", std::string(nd::to_string(net.activation))},
              {"output_mode", std::string(nd::to_string(net.output_mode))},
              {"activate_output", net.activate_output},
              {"layers", layers}};
}

nd::DenseNetwork network_from_json(const json& j) {
  nd::DenseNetwork net;
  net.layer_sizes = j.at("layer_sizes").get<std::vector<std::size_t>>();
  net.activation = nd::activation_from_string(j.at("activation").get<std::string>());
  net.output_mode = nd::output_mode_from_string(j.at("output_mode").get<std::string>());
  net.activate_output = j.at("activate_output").get<bool>();
  for (const auto& layer : j.at("layers")) {
    net.weights.push_back(matrix_from_json(layer.at("weight")));
    net.biases.push_back(matrix_from_json(layer.at("bias")));
  }
  net.validate();
  return net;
}

json make_container(const std::string& kind, json payload) {
  return json{{"format", "cerl"}, {"version", kContainerVersion}, {"kind", kind}, {"payload", std::move(payload)}};
}

json open_container(const json& container, const std::string& kind) {
  if (!container.is_object() || container.value("format", "") != "cerl") {
    throw InvalidInput("not a cerl container");
  }
  const int version = container.at("version").get<int>();
  if (version != kContainerVersion) {
    throw InvalidInput("unsupported container version " + std::to_string(version));
  }
  const auto found = container.at("kind").get<std::string>();
  if (found != kind) throw InvalidInput("expected a '" + kind + "' container, found '" + found + "'");
  return container.at("payload");
}

std::string dump(const json& j) { return j.dump(1) + "\n"; }

void write_atomic(const std::filesystem::path& path, const std::string& contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::random_device rd;
  const auto tmp = path.string() + ".tmp" + std::to_string(rd());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp + " for writing");
    out << contents;
    if (!out) throw std::runtime_error("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void save_container(const std::filesystem::path& path, const std::string& kind, json payload) {
  write_atomic(path, dump(make_container(kind, std::move(payload))));
}

json load_container(const std::filesystem::path& path, const std::string& kind) {
  return open_container(json::parse(read_file(path)), kind);
}

std::string fingerprint(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[h & 0xf];
    h >>= 4;
  }
  return out;
}

}  // namespace cerl::io
