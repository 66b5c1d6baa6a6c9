#include "cerl/optimizer.hpp"

#include <algorithm>
#include <cmath>

#include "cerl/errors.hpp"

namespace cerl::nd {

void ParameterList::add(const std::string& prefix, DenseNetwork& net) {
  for (std::size_t k = 0; k < net.weights.size(); ++k) {
    paths.push_back(prefix + ".layer" + std::to_string(k) + ".weight");
    values.push_back(&net.weights[k]);
    if (!net.biases[k].empty()) {
      paths.push_back(prefix + ".layer" + std::to_string(k) + ".bias");
      values.push_back(&net.biases[k]);
    }
  }
}

std::size_t ParameterList::scalar_count() const {
  std::size_t n = 0;
  for (const Matrix* m : values) n += m->size();
  return n;
}

bool GradientReport::all_finite() const {
  return std::all_of(grads.begin(), grads.end(), [](const Matrix& g) { return g.all_finite(); });
}

NetworkVars Binding::bind(Tape& tape, DenseNetwork& net, const std::string& prefix) {
  NetworkVars v = cerl::nd::bind(tape, net, true);
  ParameterList local;
  local.add(prefix, net);
  params_.paths.insert(params_.paths.end(), local.paths.begin(), local.paths.end());
  params_.values.insert(params_.values.end(), local.values.begin(), local.values.end());
  for (std::size_t k = 0; k < v.weights.size(); ++k) {
    vars_.push_back(v.weights[k]);
    if (v.biases[k].valid()) vars_.push_back(v.biases[k]);
  }
  return v;
}

GradientReport backward(Tape& tape, Var loss, const Binding& binding) {
  tape.backward(loss);
  GradientReport report;
  report.paths = binding.parameters().paths;
  bool any = false;
  for (const Var& v : binding.vars()) {
    any = any || tape.reached(v);
    report.grads.push_back(tape.grad(v));
  }
  report.connected = any || binding.vars().empty();
  return report;
}

GradientReport finite_diff_grad(const std::function<double()>& loss_fn, const ParameterList& params,
                                double step) {
  if (!(step > 0.0)) throw InvalidInput("finite_diff_grad: step must be positive");
  GradientReport report;
  report.paths = params.paths;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Matrix& m = *params.values[p];
    Matrix g(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.size(); ++i) {
      const double original = m[i];
      m[i] = original + step;
      const double up = loss_fn();
      m[i] = original - step;
      const double down = loss_fn();
      m[i] = original;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw NumericalError("finite_diff_grad: non-finite loss when perturbing " + params.paths[p] + "[" +
                             std::to_string(i) + "]");
      }
      g[i] = (up - down) / (2.0 * step);
    }
    report.grads.push_back(std::move(g));
  }
  return report;
}

double max_relative_error(const GradientReport& a, const GradientReport& b) {
  if (a.size() != b.size()) throw InvalidInput("max_relative_error: reports differ in parameter count");
  double worst = 0.0;
  for (std::size_t p = 0; p < a.size(); ++p) {
    if (!a.grads[p].same_shape(b.grads[p])) throw InvalidInput("max_relative_error: shape mismatch at " + a.paths[p]);
    double diff = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < a.grads[p].size(); ++i) {
      diff = std::max(diff, std::fabs(a.grads[p][i] - b.grads[p][i]));
      scale = std::max({scale, std::fabs(a.grads[p][i]), std::fabs(b.grads[p][i])});
    }
    worst = std::max(worst, scale < 1e-10 ? diff : diff / scale);
  }
  return worst;
}

AdamState AdamState::for_parameters(const ParameterList& params, double learning_rate, double beta1,
                                    double beta2) {
  if (!(learning_rate > 0.0)) throw InvalidInput("adam: learning rate must be positive");
  if (!(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0)) {
    throw InvalidInput("adam: moment decays must lie in (0, 1)");
  }
  AdamState s;
  s.learning_rate = learning_rate;
  s.beta1 = beta1;
  s.beta2 = beta2;
  for (const Matrix* m : params.values) {
    s.first_moment.emplace_back(m->rows(), m->cols());
    s.second_moment.emplace_back(m->rows(), m->cols());
  }
  return s;
}

void adam_update(const ParameterList& params, const GradientReport& grads, AdamState& state) {
  if (grads.size() != params.size() || state.first_moment.size() != params.size() ||
      state.second_moment.size() != params.size()) {
    throw InvalidInput("adam_update: parameter, gradient and moment counts differ");
  }
  for (std::size_t p = 0; p < params.size(); ++p) {
    const Matrix& v = *params.values[p];
    if (!grads.grads[p].same_shape(v) || !state.first_moment[p].same_shape(v) ||
        !state.second_moment[p].same_shape(v)) {
      throw InvalidInput("adam_update: shape mismatch at " + params.paths[p]);
    }
    if (!grads.grads[p].all_finite()) {
      throw NumericalError("adam_update: non-finite gradient for " + params.paths[p]);
    }
  }
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t p = 0; p < params.size(); ++p) {
    Matrix& value = *params.values[p];
    const Matrix& g = grads.grads[p];
    Matrix& m = state.first_moment[p];
    Matrix& s = state.second_moment[p];
    for (std::size_t i = 0; i < value.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      s[i] = state.beta2 * s[i] + (1.0 - state.beta2) * g[i] * g[i];
      value[i] -= state.learning_rate * (m[i] / c1) / (std::sqrt(s[i] / c2) + state.epsilon);
    }
  }
}

}  // namespace cerl::nd
