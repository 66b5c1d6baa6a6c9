#include "cerl/synthgen.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>

namespace cerl::synth {

namespace {

using EMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

EMatrix to_eigen(const Matrix& m) {
  return Eigen::Map<const EMatrix>(m.data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols()));
}

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t id) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(id), 0x5eedu};
  return std::mt19937_64(seq);
}

void validate_hub(const HubParams& h, const char* type) {
  if (!(h.rho_min >= 0.0 && h.rho_min <= h.rho_max && h.rho_max < 1.0)) {
    throw InvalidInput(std::string("hub parameters for ") + type + " need 0 <= rho_min <= rho_max < 1");
  }
  if (!(h.gamma > 0.0)) throw InvalidInput(std::string("hub decay gamma for ") + type + " must be positive");
}

Matrix type_block(std::size_t dim, const HubParams& h) {
  if (dim == 1) return Matrix(1, 1, 1.0);
  return hub_block(dim, h.rho_max, h.rho_min, h.gamma);
}

// Correlation blocks laid out in (C, Z, I, A) order, cross-type entries zero.
Matrix block_diagonal(const VariableLayout& layout, const SourceSpec& spec, std::vector<int>& type_of) {
  const std::size_t p = layout.total();
  Matrix r(p, p);
  type_of.assign(p, 0);
  const std::pair<std::size_t, const HubParams*> blocks[] = {{layout.confounders, &spec.confounder_hub},
                                                             {layout.instruments, &spec.instrument_hub},
                                                             {layout.irrelevant, &spec.irrelevant_hub},
                                                             {layout.adjustments, &spec.adjustment_hub}};
  std::size_t off = 0;
  int type = 0;
  for (const auto& [dim, hub] : blocks) {
    if (dim > 0) {
      const Matrix b = type_block(dim, *hub);
      for (std::size_t i = 0; i < dim; ++i) {
        type_of[off + i] = type;
        for (std::size_t j = 0; j < dim; ++j) r(off + i, off + j) = b(i, j);
      }
    }
    off += dim;
    ++type;
  }
  return r;
}

Matrix with_level(const Matrix& base, const std::vector<int>& type_of, double level) {
  Matrix r = base;
  for (std::size_t i = 0; i < r.rows(); ++i)
    for (std::size_t j = 0; j < r.cols(); ++j)
      if (type_of[i] != type_of[j]) r(i, j) = level;
  return r;
}

std::vector<double> project(const Matrix& x, const std::vector<double>& w) {
  std::vector<double> out(x.rows(), 0.0);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double s = 0.0;
    for (std::size_t c = 0; c < x.cols(); ++c) s += x(i, c) * w[c];
    out[i] = s;
  }
  return out;
}

}  // namespace

std::vector<std::size_t> VariableLayout::confounder_adjustment_columns() const {
  std::vector<std::size_t> cols(confounders + adjustments);
  std::iota(cols.begin(), cols.begin() + static_cast<std::ptrdiff_t>(confounders), confounder_begin());
  std::iota(cols.begin() + static_cast<std::ptrdiff_t>(confounders), cols.end(), adjustment_begin());
  return cols;
}

std::vector<std::size_t> VariableLayout::confounder_instrument_columns() const {
  std::vector<std::size_t> cols(confounders + instruments);
  std::iota(cols.begin(), cols.end(), confounder_begin());
  return cols;
}

void SourceSpec::validate(const VariableLayout& layout) const {
  if (!mean.empty() && mean.size() != layout.total()) {
    throw InvalidInput("source spec has " + std::to_string(mean.size()) + " means for " +
                       std::to_string(layout.total()) + " covariates");
  }
  validate_hub(confounder_hub, "confounders");
  validate_hub(instrument_hub, "instruments");
  validate_hub(irrelevant_hub, "irrelevant variables");
  validate_hub(adjustment_hub, "adjustment variables");
  if (!(inter_type_level >= 0.0 && inter_type_level < 1.0)) {
    throw InvalidInput("inter_type_level must lie in [0, 1)");
  }
  if (!(covariate_scale > 0.0)) throw InvalidInput("covariate_scale must be positive");
}

StructuralWeights StructuralWeights::draw(const VariableLayout& layout, std::uint64_t seed) {
  auto rng = stream(seed, 0xb0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  StructuralWeights w;
  const std::size_t ca = layout.confounders + layout.adjustments;
  const std::size_t cz = layout.confounders + layout.instruments;
  for (std::size_t i = 0; i < ca; ++i) w.b_tau.push_back(u(rng));
  for (std::size_t i = 0; i < ca; ++i) w.b_g.push_back(u(rng));
  for (std::size_t i = 0; i < cz; ++i) w.b_a.push_back(u(rng));
  return w;
}

double ObservationalDataset::true_ate() const {
  if (tau.empty()) return 0.0;
  return std::accumulate(tau.begin(), tau.end(), 0.0) / static_cast<double>(tau.size());
}

ObservationalDataset ObservationalDataset::subset(std::span<const std::size_t> idx) const {
  ObservationalDataset d;
  d.X = X.select_rows(idx);
  d.source_id = source_id;
  d.layout = layout;
  for (std::size_t i : idx) {
    d.T.push_back(T[i]);
    d.Y.push_back(Y[i]);
    d.tau.push_back(tau[i]);
    d.baseline.push_back(baseline[i]);
    d.propensity.push_back(propensity[i]);
    d.noise.push_back(noise[i]);
  }
  return d;
}

double min_eigenvalue(const Matrix& symmetric) {
  Eigen::SelfAdjointEigenSolver<EMatrix> es(to_eigen(symmetric), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

Matrix hub_block(std::size_t dim, double rho_max, double rho_min, double gamma) {
  if (dim < 2) throw InvalidInput("hub_block: dimension must be at least 2");
  validate_hub(HubParams{rho_max, rho_min, gamma}, "hub_block");
  // lag[l] is the correlation between variables l apart; lag[l] = R_{l+1,1} in 1-based terms.
  std::vector<double> lag(dim);
  lag[0] = 1.0;
  for (std::size_t i = 2; i <= dim; ++i) {
    const double frac = dim == 2 ? 0.0 : static_cast<double>(i - 2) / static_cast<double>(dim - 2);
    lag[i - 1] = rho_max - std::pow(frac, gamma) * (rho_max - rho_min);
  }
  Matrix r(dim, dim);
  for (std::size_t i = 0; i < dim; ++i)
    for (std::size_t j = 0; j < dim; ++j) r(i, j) = lag[i > j ? i - j : j - i];
  const double lmin = min_eigenvalue(r);
  if (!(lmin > kMinEigenvalue)) {
    throw NotPositiveDefinite("hub_block: completed matrix is not positive definite (smallest eigenvalue " +
                                  std::to_string(lmin) + ")",
                              lmin);
  }
  return r;
}

double max_inter_type_level(const VariableLayout& layout, const SourceSpec& spec) {
  std::vector<int> type_of;
  const Matrix base = block_diagonal(layout, spec, type_of);
  auto feasible = [&](double c) { return min_eigenvalue(with_level(base, type_of, c)) > kMinEigenvalue; };
  if (feasible(1.0)) return 1.0;
  // The smallest eigenvalue is concave in the level, so the feasible set is an interval from 0.
  double lo = 0.0, hi = 1.0;
  for (int it = 0; it < 60; ++it) {
    const double mid = 0.5 * (lo + hi);
    (feasible(mid) ? lo : hi) = mid;
  }
  return lo;
}

Matrix assemble_correlation(const VariableLayout& layout, const SourceSpec& spec) {
  spec.validate(layout);
  std::vector<int> type_of;
  const Matrix base = block_diagonal(layout, spec, type_of);
  if (spec.inter_type_level == 0.0) return base;
  Matrix r = with_level(base, type_of, spec.inter_type_level);
  if (!(min_eigenvalue(r) > kMinEigenvalue)) {
    const double max_level = max_inter_type_level(layout, spec);
    throw InterTypeLevelTooHigh("inter_type_level " + std::to_string(spec.inter_type_level) +
                                    " breaks positive definiteness; maximum admissible level is " +
                                    std::to_string(max_level),
                                max_level);
  }
  return r;
}

double standard_normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

StructuralValues structural_functions(const Matrix& x_ca, const Matrix& x_cz, const StructuralWeights& weights) {
  if (x_ca.cols() != weights.b_tau.size() || x_ca.cols() != weights.b_g.size()) {
    throw InvalidInput("structural_functions: (C,A) block has " + std::to_string(x_ca.cols()) +
                       " columns, weights expect " + std::to_string(weights.b_tau.size()));
  }
  if (x_cz.cols() != weights.b_a.size()) {
    throw InvalidInput("structural_functions: (C,Z) block has " + std::to_string(x_cz.cols()) +
                       " columns, weights expect " + std::to_string(weights.b_a.size()));
  }
  if (x_ca.rows() != x_cz.rows()) throw InvalidInput("structural_functions: row counts differ");
  StructuralValues out;
  const auto lin_tau = project(x_ca, weights.b_tau);
  const auto lin_g = project(x_ca, weights.b_g);
  const auto lin_a = project(x_cz, weights.b_a);
  const std::size_t n = x_ca.rows();
  out.tau.resize(n);
  out.baseline.resize(n);
  out.selection_score.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double s = std::sin(lin_tau[i]);
    const double c = std::cos(lin_g[i]);
    out.tau[i] = s * s;
    out.baseline[i] = c * c;
    out.selection_score[i] = std::sin(lin_a[i]);
  }
  const double mu = n == 0 ? 0.0 : std::accumulate(out.selection_score.begin(), out.selection_score.end(), 0.0) / static_cast<double>(n);
  double var = 0.0;
  for (double a : out.selection_score) var += (a - mu) * (a - mu);
  const double sd = n == 0 ? 0.0 : std::sqrt(var / static_cast<double>(n));
  if (!(sd >= 1e-12)) {
    throw DegeneratePropensity("structural_functions: selection score has zero spread; propensity undefined");
  }
  out.propensity.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.propensity[i] = standard_normal_cdf((out.selection_score[i] - mu) / sd);
  return out;
}

ObservationalDataset generate_source(const VariableLayout& layout, const SourceSpec& spec,
                                     const StructuralWeights& weights, std::size_t n, std::uint64_t seed) {
  if (n < 2) throw InvalidInput("generate_source: need at least 2 units");
  const std::size_t p = layout.total();
  const Matrix R = assemble_correlation(layout, spec);
  EMatrix sigma = to_eigen(R) * (spec.covariate_scale * spec.covariate_scale);
  Eigen::LLT<EMatrix> llt(sigma);
  if (llt.info() != Eigen::Success) {
    throw NotPositiveDefinite("generate_source: covariance is not positive definite", min_eigenvalue(R));
  }
  const EMatrix lower = llt.matrixL();

  auto x_rng = stream(seed, 1);
  auto t_rng = stream(seed, 2);
  auto e_rng = stream(seed, 3);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  EMatrix z(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
  for (Eigen::Index i = 0; i < z.rows(); ++i)
    for (Eigen::Index j = 0; j < z.cols(); ++j) z(i, j) = normal(x_rng);
  EMatrix x = z * lower.transpose();
  if (!spec.mean.empty()) {
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) += spec.mean[static_cast<std::size_t>(j)];
  }

  ObservationalDataset d;
  d.layout = layout;
  d.X = Matrix(n, p);
  std::copy(x.data(), x.data() + x.size(), d.X.data());
  const auto ca = layout.confounder_adjustment_columns();
  const auto cz = layout.confounder_instrument_columns();
  Matrix x_ca(n, ca.size()), x_cz(n, cz.size());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < ca.size(); ++c) x_ca(i, c) = d.X(i, ca[c]);
    for (std::size_t c = 0; c < cz.size(); ++c) x_cz(i, c) = d.X(i, cz[c]);
  }
  StructuralValues sv = structural_functions(x_ca, x_cz, weights);
  d.tau = std::move(sv.tau);
  d.baseline = std::move(sv.baseline);
  d.propensity = std::move(sv.propensity);
  d.T.resize(n);
  d.noise.resize(n);
  d.Y.resize(n);
  for (std::size_t i = 0; i < n; ++i) d.T[i] = unif(t_rng) < d.propensity[i] ? 1 : 0;
  for (std::size_t i = 0; i < n; ++i) {
    d.noise[i] = normal(e_rng);
    d.Y[i] = d.tau[i] * d.T[i] + d.baseline[i] + d.noise[i];
  }
  return d;
}

DatasetSplit split_units(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  auto rng = stream(seed, 4);
  std::shuffle(idx.begin(), idx.end(), rng);
  const std::size_t n_train = n * 6 / 10;
  const std::size_t n_val = n * 2 / 10;
  DatasetSplit s;
  s.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.validation.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train),
                      idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  s.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), idx.end());
  return s;
}

ShiftPreset shift_preset_from_string(std::string_view s) {
  if (s == "none") return ShiftPreset::none;
  if (s == "moderate") return ShiftPreset::moderate;
  if (s == "substantial") return ShiftPreset::substantial;
  throw InvalidInput("unknown shift preset '" + std::string(s) + "' (expected none, moderate or substantial)");
}

std::string_view to_string(ShiftPreset p) {
  switch (p) {
    case ShiftPreset::none: return "none";
    case ShiftPreset::moderate: return "moderate";
    case ShiftPreset::substantial: return "substantial";
  }
  return "none";
}

std::vector<SourceSpec> make_scenario(const VariableLayout& layout, ShiftPreset preset, std::size_t n_sources,
                                      std::uint64_t seed, double covariate_scale) {
  auto rng = stream(seed, 5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<SourceSpec> specs;
  for (std::size_t k = 0; k < n_sources; ++k) {
    SourceSpec s;
    s.covariate_scale = covariate_scale;
    s.seed = seed * 1000003ull + k + 1;
    const double offset = preset == ShiftPreset::substantial ? 1.0 * static_cast<double>(k)
                          : preset == ShiftPreset::moderate  ? 0.4 * static_cast<double>(k)
                                                             : 0.0;
    s.mean.assign(layout.total(), offset);
    if (preset == ShiftPreset::substantial && k > 0) {
      for (HubParams* h : {&s.confounder_hub, &s.instrument_hub, &s.irrelevant_hub, &s.adjustment_hub}) {
        h->rho_max = 0.5 + 0.3 * u(rng);
        h->rho_min = 0.05 + (std::min(0.4, h->rho_max) - 0.05) * u(rng);
        h->gamma = 0.5 + 0.5 * u(rng);  // gamma <= 1 keeps the lag sequence convex, hence positive definite
      }
    }
    specs.push_back(std::move(s));
  }
  return specs;
}

std::vector<SourceData> make_sequence(const VariableLayout& layout, const std::vector<SourceSpec>& specs,
                                      const StructuralWeights& weights, std::size_t n_per_source) {
  std::vector<SourceData> out;
  for (std::size_t k = 0; k < specs.size(); ++k) {
    SourceData sd;
    sd.data = generate_source(layout, specs[k], weights, n_per_source, specs[k].seed);
    sd.data.source_id = static_cast<int>(k);
    sd.split = split_units(n_per_source, specs[k].seed);
    out.push_back(std::move(sd));
  }
  return out;
}

}  // namespace cerl::synth
