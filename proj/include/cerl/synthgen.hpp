#pragma once

// Multi-source synthetic observational data with known treatment effects.
//
// Covariates X = (C, Z, I, A): confounders, instruments, irrelevant and adjustment
// variables, drawn from a multivariate normal whose correlation matrix has one
// hub-Toeplitz block per variable type. Outcomes follow the partially linear model
//   Y = tau(C, A) * T + g(C, A) + eps,   tau = sin^2((C,A) b_tau),  g = cos^2((C,A) b_g),
// and T ~ Bernoulli(Phi(standardised sin((C,Z) b_a))).

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "cerl/errors.hpp"
#include "cerl/matrix.hpp"

namespace cerl::synth {

struct VariableLayout {
  std::size_t confounders = 35;
  std::size_t instruments = 10;
  std::size_t irrelevant = 20;
  std::size_t adjustments = 35;

  std::size_t total() const { return confounders + instruments + irrelevant + adjustments; }
  // Column offsets in X = (C, Z, I, A).
  std::size_t confounder_begin() const { return 0; }
  std::size_t instrument_begin() const { return confounders; }
  std::size_t irrelevant_begin() const { return confounders + instruments; }
  std::size_t adjustment_begin() const { return confounders + instruments + irrelevant; }

  std::vector<std::size_t> confounder_adjustment_columns() const;  // (C, A)
  std::vector<std::size_t> confounder_instrument_columns() const;  // (C, Z)

  friend bool operator==(const VariableLayout&, const VariableLayout&) = default;
};

struct HubParams {
  double rho_max = 0.7;
  double rho_min = 0.2;
  double gamma = 1.0;

  friend bool operator==(const HubParams&, const HubParams&) = default;
};

struct SourceSpec {
  std::vector<double> mean;  // one entry per covariate; empty means all zero
  HubParams confounder_hub;
  HubParams instrument_hub;
  HubParams irrelevant_hub;
  HubParams adjustment_hub;
  double inter_type_level = 0.0;
  double covariate_scale = 1.0;  // marginal standard deviation of every covariate
  std::uint64_t seed = 0;

  void validate(const VariableLayout& layout) const;
  friend bool operator==(const SourceSpec&, const SourceSpec&) = default;
};

struct StructuralWeights {
  std::vector<double> b_tau;  // over (C, A)
  std::vector<double> b_g;    // over (C, A)
  std::vector<double> b_a;    // over (C, Z)

  // Every entry ~ uniform(0, 1).
  static StructuralWeights draw(const VariableLayout& layout, std::uint64_t seed);
  friend bool operator==(const StructuralWeights&, const StructuralWeights&) = default;
};

struct ObservationalDataset {
  Matrix X;
  std::vector<int> T;
  std::vector<double> Y;
  std::vector<double> tau;         // ground-truth ITE
  std::vector<double> baseline;    // g(C, A)
  std::vector<double> propensity;
  std::vector<double> noise;
  int source_id = 0;
  VariableLayout layout;

  std::size_t size() const { return Y.size(); }
  double true_ate() const;
  // Units restricted to `idx`, in that order.
  ObservationalDataset subset(std::span<const std::size_t> idx) const;
};

struct DatasetSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
};

class NotPositiveDefinite : public NumericalError {
 public:
  NotPositiveDefinite(const std::string& what, double min_eigenvalue)
      : NumericalError(what), min_eigenvalue(min_eigenvalue) {}
  double min_eigenvalue;
};

class InterTypeLevelTooHigh : public InvalidInput {
 public:
  InterTypeLevelTooHigh(const std::string& what, double max_level) : InvalidInput(what), max_level(max_level) {}
  double max_level;
};

class DegeneratePropensity : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

inline constexpr double kMinEigenvalue = 1e-8;

// Hub column R_{i,1} = rho_max - ((i-2)/(d-2))^gamma (rho_max - rho_min) for i = 2..d, then
// Toeplitz completion R_{i,j} = R_{|i-j|+1, 1}. Throws NotPositiveDefinite.
Matrix hub_block(std::size_t dim, double rho_max, double rho_min, double gamma);

double min_eigenvalue(const Matrix& symmetric);

// Block-diagonal hub-Toeplitz blocks in (C, Z, I, A) order with `inter_type_level` in every
// cross-type entry. Throws InterTypeLevelTooHigh when the result is not positive definite.
Matrix assemble_correlation(const VariableLayout& layout, const SourceSpec& spec);

// Largest inter-type level that keeps the smallest eigenvalue above kMinEigenvalue.
double max_inter_type_level(const VariableLayout& layout, const SourceSpec& spec);

struct StructuralValues {
  std::vector<double> tau;
  std::vector<double> baseline;
  std::vector<double> propensity;
  std::vector<double> selection_score;  // a = sin((C,Z) b_a)
};

StructuralValues structural_functions(const Matrix& x_ca, const Matrix& x_cz, const StructuralWeights& weights);

double standard_normal_cdf(double z);

ObservationalDataset generate_source(const VariableLayout& layout, const SourceSpec& spec,
                                     const StructuralWeights& weights, std::size_t n, std::uint64_t seed);

// Random 60/20/20 partition of [0, n).
DatasetSplit split_units(std::size_t n, std::uint64_t seed);

enum class ShiftPreset { none, moderate, substantial };
ShiftPreset shift_preset_from_string(std::string_view s);
std::string_view to_string(ShiftPreset p);

// Per-source specs for a preset: "none" repeats one spec, "moderate" offsets every mean by
// 0.4 per source, "substantial" offsets by 1.0 per source and re-draws hub parameters.
std::vector<SourceSpec> make_scenario(const VariableLayout& layout, ShiftPreset preset, std::size_t n_sources,
                                      std::uint64_t seed, double covariate_scale = 1.0);

struct SourceData {
  ObservationalDataset data;
  DatasetSplit split;
};

std::vector<SourceData> make_sequence(const VariableLayout& layout, const std::vector<SourceSpec>& specs,
                                      const StructuralWeights& weights, std::size_t n_per_source);

}  // namespace cerl::synth
