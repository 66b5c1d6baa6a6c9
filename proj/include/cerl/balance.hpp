#pragma once

// Wasserstein-type distance between treated and control representations, computed as
// entropic optimal transport with uniform marginals and squared Euclidean ground cost.
// The reverse pass differentiates through the scaling iterations actually performed, so
// the reported gradient is exact for the reported value.

#include "cerl/matrix.hpp"
#include "cerl/tape.hpp"

namespace cerl::balance {

struct IPMConfig {
  // Entropic regularisation. When `relative_to_median` is set the effective value is
  // epsilon * median(ground cost), with the median treated as a constant under
  // differentiation. The effective value is raised when needed so that no column of the
  // Gibbs kernel underflows; the raise is also a constant under differentiation.
  double epsilon = 0.05;
  bool relative_to_median = true;
  int max_iterations = 200;
  // L1 violation of the row marginals at which iteration stops. 0 runs every iteration.
  double tolerance = 1e-6;

  void validate() const;
  friend bool operator==(const IPMConfig&, const IPMConfig&) = default;
};

struct IPMDiagnostics {
  int iterations = 0;
  bool converged = false;
  double marginal_error = 0.0;
  double epsilon = 0.0;
};

Matrix squared_distances(const Matrix& a, const Matrix& b);

struct TransportResult {
  double cost = 0.0;  // sum_ij plan_ij * ground_ij
  Matrix plan;
  IPMDiagnostics diagnostics;
};

// Entropic transport between uniform weights for a given ground-cost matrix.
TransportResult sinkhorn(const Matrix& ground_cost, const IPMConfig& cfg);

// Differentiable entropic OT cost between two point clouds (rows). Throws InvalidInput on an
// empty group or a column mismatch. Non-convergence is reported through `diagnostics`.
nd::Var wasserstein_ipm(nd::Var treated, nd::Var control, const IPMConfig& cfg,
                        IPMDiagnostics* diagnostics = nullptr);

double wasserstein_ipm(const Matrix& treated, const Matrix& control, const IPMConfig& cfg,
                       IPMDiagnostics* diagnostics = nullptr);

// Exact balanced OT for equal-size sets with n <= 8, by enumerating all n! assignments.
// Returns the mean squared distance of the optimal matching.
double exact_ot_small(const Matrix& treated, const Matrix& control);

}  // namespace cerl::balance
