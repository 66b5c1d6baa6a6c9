#include "cerl/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "cerl/errors.hpp"

namespace cerl::eval {

EffectMetrics metrics(std::span<const double> true_ite, std::span<const double> est_ite) {
  if (true_ite.empty()) throw InvalidInput("metrics: empty input");
  if (true_ite.size() != est_ite.size()) throw InvalidInput("metrics: true and estimated ITE lengths differ");
  const double n = static_cast<double>(true_ite.size());
  double sq = 0.0, mean_true = 0.0, mean_est = 0.0;
  for (std::size_t i = 0; i < true_ite.size(); ++i) {
    const double d = true_ite[i] - est_ite[i];
    sq += d * d;
    mean_true += true_ite[i];
    mean_est += est_ite[i];
  }
  return {std::sqrt(sq / n), std::fabs(mean_true / n - mean_est / n)};
}

double sign_test_p_value(int wins, int trials) {
  if (trials < 1 || wins < 0 || wins > trials) throw InvalidInput("sign test: need 0 <= wins <= trials, trials >= 1");
  double p = 0.0;
  for (int k = wins; k <= trials; ++k) {
    p += std::exp(std::lgamma(trials + 1.0) - std::lgamma(k + 1.0) - std::lgamma(trials - k + 1.0) -
                  trials * std::log(2.0));
  }
  return std::min(p, 1.0);
}

}  // namespace cerl::eval
