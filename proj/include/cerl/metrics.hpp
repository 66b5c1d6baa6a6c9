#pragma once

#include <span>

namespace cerl::eval {

struct EffectMetrics {
  double sqrt_pehe = 0.0;  // root mean squared ITE error
  double ate_error = 0.0;  // |mean(true) - mean(estimated)|
};

// Throws InvalidInput on empty or unequal-length inputs.
EffectMetrics metrics(std::span<const double> true_ite, std::span<const double> est_ite);

// One-sided sign test: P(X >= wins) for X ~ Binomial(trials, 1/2).
double sign_test_p_value(int wins, int trials);

}  // namespace cerl::eval
