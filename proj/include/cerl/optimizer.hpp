#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cerl/matrix.hpp"
#include "cerl/network.hpp"
#include "cerl/tape.hpp"

namespace cerl::nd {

// Named, mutable views of parameter matrices spread over one or more networks.
struct ParameterList {
  std::vector<std::string> paths;
  std::vector<Matrix*> values;

  void add(const std::string& prefix, DenseNetwork& net);
  std::size_t size() const { return values.size(); }
  std::size_t scalar_count() const;
};

struct GradientReport {
  std::vector<std::string> paths;
  std::vector<Matrix> grads;
  // False when the loss never reached any parameter; all gradients are then zero.
  bool connected = true;

  bool all_finite() const;
  std::size_t size() const { return grads.size(); }
};

// Trainable parameters registered on one tape, in registration order.
class Binding {
 public:
  NetworkVars bind(Tape& tape, DenseNetwork& net, const std::string& prefix);
  const ParameterList& parameters() const { return params_; }
  const std::vector<Var>& vars() const { return vars_; }

 private:
  ParameterList params_;
  std::vector<Var> vars_;
};

// Runs the reverse sweep from `loss` and collects d(loss)/d(p) for every bound parameter.
GradientReport backward(Tape& tape, Var loss, const Binding& binding);

// Central differences (f(p+h) - f(p-h)) / 2h for every scalar in `params`. `loss_fn` must
// read the parameters through the same storage. Throws NumericalError when a perturbed
// loss is not finite.
GradientReport finite_diff_grad(const std::function<double()>& loss_fn, const ParameterList& params,
                                double step);

// Largest per-tensor relative error max|a-b| / max(max|a|, max|b|); absolute when both
// tensors are below 1e-10.
double max_relative_error(const GradientReport& a, const GradientReport& b);

struct AdamState {
  std::vector<Matrix> first_moment;
  std::vector<Matrix> second_moment;
  std::int64_t step_count = 0;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static AdamState for_parameters(const ParameterList& params, double learning_rate, double beta1 = 0.9,
                                  double beta2 = 0.999);
};

// One bias-corrected adaptive-moment step. Throws NumericalError naming the parameter
// when a gradient is not finite; nothing is modified in that case.
void adam_update(const ParameterList& params, const GradientReport& grads, AdamState& state);

}  // namespace cerl::nd
