#include "cerl/network.hpp"

#include <cmath>
#include <string>

#include "cerl/errors.hpp"

namespace cerl::nd {

std::string_view to_string(OutputMode m) { return m == OutputMode::cosine ? "cosine" : "affine"; }

OutputMode output_mode_from_string(std::string_view s) {
  if (s == "cosine") return OutputMode::cosine;
  if (s == "affine") return OutputMode::affine;
  throw InvalidInput("unknown output mode '" + std::string(s) + "'");
}

std::size_t DenseNetwork::parameter_count() const {
  std::size_t n = 0;
  for (const auto& w : weights) n += w.size();
  for (const auto& b : biases) n += b.size();
  return n;
}

void DenseNetwork::validate() const {
  if (layer_sizes.size() < 2) throw InvalidInput("network needs at least an input and an output size");
  for (std::size_t s : layer_sizes)
    if (s == 0) throw InvalidInput("network layer sizes must be positive");
  if (weights.size() != layer_sizes.size() - 1 || biases.size() != weights.size()) {
    throw InvalidInput("network has " + std::to_string(weights.size()) + " weight matrices for " +
                       std::to_string(layer_sizes.size()) + " layer sizes");
  }
  for (std::size_t k = 0; k < weights.size(); ++k) {
    if (weights[k].rows() != layer_sizes[k + 1] || weights[k].cols() != layer_sizes[k]) {
      throw InvalidInput("layer " + std::to_string(k) + " weight is " + weights[k].shape_string());
    }
    const bool bias_free = output_mode == OutputMode::cosine && k + 1 == weights.size();
    if (bias_free ? !biases[k].empty() : (biases[k].rows() != 1 || biases[k].cols() != layer_sizes[k + 1])) {
      throw InvalidInput("layer " + std::to_string(k) + " bias is " + biases[k].shape_string());
    }
  }
}

DenseNetwork make_network(const NetworkShape& shape, std::mt19937_64& rng) {
  DenseNetwork net;
  net.layer_sizes = shape.layer_sizes;
  net.activation = shape.activation;
  net.output_mode = shape.output_mode;
  net.activate_output = shape.activate_output;
  if (net.layer_sizes.size() < 2) throw InvalidInput("network needs at least an input and an output size");
  for (std::size_t k = 0; k + 1 < net.layer_sizes.size(); ++k) {
    const std::size_t fan_in = net.layer_sizes[k], fan_out = net.layer_sizes[k + 1];
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> u(-limit, limit);
    Matrix w(fan_out, fan_in);
    for (double& v : w.values()) v = u(rng);
    net.weights.push_back(std::move(w));
    const bool bias_free = net.output_mode == OutputMode::cosine && k + 2 == net.layer_sizes.size();
    net.biases.push_back(bias_free ? Matrix() : Matrix(1, fan_out));
  }
  net.validate();
  return net;
}

DenseNetwork identity_network(std::size_t dim) {
  DenseNetwork net;
  net.layer_sizes = {dim, dim};
  net.weights.push_back(Matrix::identity(dim));
  net.biases.push_back(Matrix(1, dim));
  net.activation = Activation::identity;
  return net;
}

NetworkVars bind(Tape& tape, const DenseNetwork& net, bool trainable) {
  NetworkVars vars;
  for (std::size_t k = 0; k < net.weights.size(); ++k) {
    vars.weights.push_back(trainable ? tape.parameter(net.weights[k]) : tape.constant(net.weights[k]));
    if (net.biases[k].empty()) {
      vars.biases.emplace_back();
    } else {
      vars.biases.push_back(trainable ? tape.parameter(net.biases[k]) : tape.constant(net.biases[k]));
    }
  }
  return vars;
}

namespace {

Var last_layer_preactivation(const DenseNetwork& net, const NetworkVars& vars, Var batch) {
  if (batch.cols() != net.input_dim()) {
    throw InvalidInput("forward: batch has " + std::to_string(batch.cols()) + " columns, network expects " +
                       std::to_string(net.input_dim()));
  }
  Var h = batch;
  const std::size_t last = net.num_layers() - 1;
  for (std::size_t k = 0; k < last; ++k) {
    h = activation(add_row(matmul_nt(h, vars.weights[k]), vars.biases[k]), net.activation);
  }
  if (net.output_mode == OutputMode::cosine) return cosine_nt(h, vars.weights[last]);
  return add_row(matmul_nt(h, vars.weights[last]), vars.biases[last]);
}

}  // namespace

Var forward(const DenseNetwork& net, const NetworkVars& vars, Var batch) {
  Var out = last_layer_preactivation(net, vars, batch);
  return net.activate_output ? activation(out, net.activation) : out;
}

Matrix forward(const DenseNetwork& net, const Matrix& batch) {
  Tape tape;
  const NetworkVars vars = bind(tape, net, false);
  return forward(net, vars, tape.constant(batch)).value();
}

Matrix output_preactivations(const DenseNetwork& net, const Matrix& batch) {
  Tape tape;
  const NetworkVars vars = bind(tape, net, false);
  return last_layer_preactivation(net, vars, tape.constant(batch)).value();
}

}  // namespace cerl::nd
