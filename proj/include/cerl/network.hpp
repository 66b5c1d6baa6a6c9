#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "cerl/matrix.hpp"
#include "cerl/tape.hpp"

namespace cerl::nd {

enum class OutputMode { affine, cosine };

std::string_view to_string(OutputMode m);
OutputMode output_mode_from_string(std::string_view s);

// Feed-forward network. Hidden layers compute act(x W^T + b). The last layer is either
// affine (x W^T + b) or cosine-normalised (cos(w_j, x), no bias); `activate_output`
// applies the activation on top of it.
struct DenseNetwork {
  std::vector<std::size_t> layer_sizes;  // input, hidden..., output
  std::vector<Matrix> weights;           // layer k: layer_sizes[k+1] x layer_sizes[k]
  std::vector<Matrix> biases;            // layer k: 1 x layer_sizes[k+1]; 0 x 0 for a cosine output
  Activation activation = Activation::elu;
  OutputMode output_mode = OutputMode::affine;
  bool activate_output = false;

  std::size_t input_dim() const { return layer_sizes.front(); }
  std::size_t output_dim() const { return layer_sizes.back(); }
  std::size_t num_layers() const { return weights.size(); }
  std::size_t parameter_count() const;

  // Throws InvalidInput when shapes are inconsistent.
  void validate() const;

  friend bool operator==(const DenseNetwork&, const DenseNetwork&) = default;
};

struct NetworkShape {
  std::vector<std::size_t> layer_sizes;
  Activation activation = Activation::elu;
  OutputMode output_mode = OutputMode::affine;
  bool activate_output = false;
};

// Uniform(+-sqrt(6 / (fan_in + fan_out))) weights, zero biases.
DenseNetwork make_network(const NetworkShape& shape, std::mt19937_64& rng);

// A single affine layer initialised to the identity map (square).
DenseNetwork identity_network(std::size_t dim);

// Handles to a network's parameters on one tape. Frozen bindings hold constants.
struct NetworkVars {
  std::vector<Var> weights;
  std::vector<Var> biases;  // invalid Var for bias-free layers
};

NetworkVars bind(Tape& tape, const DenseNetwork& net, bool trainable);
Var forward(const DenseNetwork& net, const NetworkVars& vars, Var batch);

// Evaluates on a private tape; no gradients.
Matrix forward(const DenseNetwork& net, const Matrix& batch);

// Pre-activations of the last layer (before the optional output activation).
Matrix output_preactivations(const DenseNetwork& net, const Matrix& batch);

}  // namespace cerl::nd
