#include "cerl/balance.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <string>

#include "cerl/errors.hpp"
#include "cerl/kernels.hpp"

namespace cerl::balance {

void IPMConfig::validate() const {
  if (!(epsilon > 0.0)) throw InvalidInput("ipm: entropic regularisation must be positive");
  if (max_iterations < 1) throw InvalidInput("ipm: max_iterations must be at least 1");
  if (!(tolerance >= 0.0)) throw InvalidInput("ipm: tolerance must be non-negative");
}

Matrix squared_distances(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw InvalidInput("squared_distances: dimension mismatch " + a.shape_string() + " vs " + b.shape_string());
  }
  Matrix c(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j)
      c(i, j) = kernels::squared_distance(a.row(i).data(), b.row(j).data(), a.cols());
  return c;
}

namespace {

double median_of(std::vector<double> v) {
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  double m = v[mid];
  if (v.size() % 2 == 0) {
    m = 0.5 * (m + *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid)));
  }
  return m;
}

// Everything the reverse pass needs.
struct SinkhornTrace {
  std::size_t n = 0, m = 0;
  double epsilon = 0.0;
  Matrix kernel;                  // exp(-(C_ij - min_j C_ij) / eps)
  std::vector<std::vector<double>> u;  // u[k], k = 1..L (index 0 unused)
  std::vector<std::vector<double>> v;  // v[k], k = 0..L
  double cost = 0.0;
  bool degenerate = false;        // all ground costs zero
  IPMDiagnostics diagnostics;
};

SinkhornTrace run_sinkhorn(const Matrix& C, const IPMConfig& cfg) {
  cfg.validate();
  SinkhornTrace tr;
  tr.n = C.rows();
  tr.m = C.cols();
  const std::size_t n = tr.n, m = tr.m;
  if (n == 0 || m == 0) throw InvalidInput("sinkhorn: empty marginal");

  const double cmax = *std::max_element(C.values().begin(), C.values().end());
  if (!(cmax > 0.0)) {
    tr.degenerate = true;
    tr.diagnostics.converged = true;
    return tr;
  }
  double scale = 1.0;
  if (cfg.relative_to_median) {
    scale = median_of(C.values());
    if (!(scale > 0.0)) scale = std::accumulate(C.values().begin(), C.values().end(), 0.0) / static_cast<double>(C.size());
  }
  std::vector<double> rmin(n);
  for (std::size_t i = 0; i < n; ++i) rmin[i] = *std::min_element(C.row(i).begin(), C.row(i).end());
  // Floor so every column keeps a kernel entry above exp(-kMaxExponent); a few outlying points
  // can otherwise underflow whole columns when epsilon follows a small median.
  constexpr double kMaxExponent = 100.0;
  double worst = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) best = std::min(best, C(i, j) - rmin[i]);
    worst = std::max(worst, best);
  }
  tr.epsilon = std::max(cfg.epsilon * scale, worst / kMaxExponent);
  tr.diagnostics.epsilon = tr.epsilon;

  tr.kernel = Matrix(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = C.row(i);
    for (std::size_t j = 0; j < m; ++j) tr.kernel(i, j) = std::exp(-(row[j] - rmin[i]) / tr.epsilon);
  }
  const Matrix& K = tr.kernel;
  {
    std::vector<double> colsum(m, 0.0);
    for (std::size_t i = 0; i < n; ++i) kernels::axpy(1.0, K.row(i).data(), colsum.data(), m);
    for (double s : colsum) {
      if (!(s > 0.0)) {
        throw NumericalError("sinkhorn: kernel underflow (epsilon " + std::to_string(tr.epsilon) +
                             " too small for the ground-cost scale)");
      }
    }
  }

  const double a = 1.0 / static_cast<double>(n);
  const double b = 1.0 / static_cast<double>(m);
  tr.u.emplace_back();  // u[0] unused
  tr.v.emplace_back(m, 1.0);
  std::vector<double> q(n), s(m);
  double err = std::numeric_limits<double>::infinity();
  for (int k = 1; k <= cfg.max_iterations; ++k) {
    const std::vector<double>& vprev = tr.v.back();
    for (std::size_t i = 0; i < n; ++i) q[i] = kernels::dot(K.row(i).data(), vprev.data(), m);
    if (k > 1 && cfg.tolerance > 0.0) {
      const std::vector<double>& ucur = tr.u.back();
      err = 0.0;
      for (std::size_t i = 0; i < n; ++i) err += std::fabs(ucur[i] * q[i] - a);
      if (err < cfg.tolerance) {
        tr.diagnostics.converged = true;
        break;
      }
    }
    std::vector<double> u(n);
    for (std::size_t i = 0; i < n; ++i) u[i] = a / q[i];
    std::fill(s.begin(), s.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) kernels::axpy(u[i], K.row(i).data(), s.data(), m);
    std::vector<double> v(m);
    for (std::size_t j = 0; j < m; ++j) v[j] = b / s[j];
    tr.u.push_back(std::move(u));
    tr.v.push_back(std::move(v));
  }
  const std::vector<double>& uL = tr.u.back();
  const std::vector<double>& vL = tr.v.back();
  if (!tr.diagnostics.converged) {
    err = 0.0;
    for (std::size_t i = 0; i < n; ++i) err += std::fabs(uL[i] * kernels::dot(K.row(i).data(), vL.data(), m) - a);
    tr.diagnostics.converged = cfg.tolerance > 0.0 ? err < cfg.tolerance : true;
  }
  tr.diagnostics.iterations = static_cast<int>(tr.u.size()) - 1;
  tr.diagnostics.marginal_error = err;

  double cost = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) cost += uL[i] * K(i, j) * vL[j] * C(i, j);
  tr.cost = cost;
  if (!std::isfinite(cost)) throw NumericalError("sinkhorn: non-finite transport cost");
  return tr;
}

// d(cost)/d(C), scaled by `gout`, by reverse accumulation through the recorded iterates.
Matrix sinkhorn_cost_gradient(const SinkhornTrace& tr, const Matrix& C, double gout) {
  const std::size_t n = tr.n, m = tr.m;
  Matrix gC(n, m);
  if (tr.degenerate) return gC;
  const Matrix& K = tr.kernel;
  const double a = 1.0 / static_cast<double>(n);
  const double b = 1.0 / static_cast<double>(m);
  const std::size_t L = tr.u.size() - 1;
  const std::vector<double>& uL = tr.u[L];
  const std::vector<double>& vL = tr.v[L];

  std::vector<double> gu(n, 0.0), gv(m, 0.0);
  Matrix gK(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      const double kc = K(i, j) * C(i, j);
      gu[i] += gout * kc * vL[j];
      gv[j] += gout * kc * uL[i];
      gK(i, j) = gout * uL[i] * vL[j] * C(i, j);
      gC(i, j) = gout * uL[i] * K(i, j) * vL[j];
    }
  }
  std::vector<double> gs(m), gq(n);
  for (std::size_t k = L; k >= 1; --k) {
    const std::vector<double>& uk = tr.u[k];
    const std::vector<double>& vk = tr.v[k];
    const std::vector<double>& vprev = tr.v[k - 1];
    // v_k = b / (K^T u_k)
    for (std::size_t j = 0; j < m; ++j) gs[j] = -gv[j] * vk[j] * vk[j] / b;
    for (std::size_t i = 0; i < n; ++i) {
      gu[i] += kernels::dot(K.row(i).data(), gs.data(), m);
      kernels::axpy(uk[i], gs.data(), gK.row(i).data(), m);
    }
    // u_k = a / (K v_{k-1})
    for (std::size_t i = 0; i < n; ++i) gq[i] = -gu[i] * uk[i] * uk[i] / a;
    std::fill(gv.begin(), gv.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      kernels::axpy(gq[i], K.row(i).data(), gv.data(), m);
      kernels::axpy(gq[i], vprev.data(), gK.row(i).data(), m);
    }
    std::fill(gu.begin(), gu.end(), 0.0);
  }
  // The per-row shift in the kernel cancels against u exactly, so only the direct path remains.
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) gC(i, j) -= gK(i, j) * K(i, j) / tr.epsilon;
  return gC;
}

}  // namespace

TransportResult sinkhorn(const Matrix& ground_cost, const IPMConfig& cfg) {
  SinkhornTrace tr = run_sinkhorn(ground_cost, cfg);
  TransportResult r;
  r.cost = tr.cost;
  r.diagnostics = tr.diagnostics;
  r.plan = Matrix(tr.n, tr.m);
  if (tr.degenerate) {
    r.plan.fill(1.0 / static_cast<double>(tr.n * tr.m));
    return r;
  }
  const auto& u = tr.u.back();
  const auto& v = tr.v.back();
  for (std::size_t i = 0; i < tr.n; ++i)
    for (std::size_t j = 0; j < tr.m; ++j) r.plan(i, j) = u[i] * tr.kernel(i, j) * v[j];
  return r;
}

nd::Var wasserstein_ipm(nd::Var treated, nd::Var control, const IPMConfig& cfg, IPMDiagnostics* diagnostics) {
  const Matrix& X = treated.value();
  const Matrix& Y = control.value();
  if (X.rows() == 0 || Y.rows() == 0) throw InvalidInput("wasserstein_ipm: empty treatment group");
  if (X.cols() != Y.cols()) throw InvalidInput("wasserstein_ipm: groups have different dimensions");
  Matrix C = squared_distances(X, Y);
  auto trace = std::make_shared<SinkhornTrace>(run_sinkhorn(C, cfg));
  if (diagnostics) *diagnostics = trace->diagnostics;
  const nd::Var parents[] = {treated, control};
  return treated.tape()->record(
      Matrix(1, 1, trace->cost), parents,
      [treated, control, trace, C = std::move(C)](std::size_t, const Matrix& g, nd::Tape& tp) {
        const Matrix gC = sinkhorn_cost_gradient(*trace, C, g[0]);
        const Matrix& X = treated.value();
        const Matrix& Y = control.value();
        const std::size_t d = X.cols();
        Matrix* gx = tp.requires_grad(treated.id()) ? &tp.grad_buffer(treated.id()) : nullptr;
        Matrix* gy = tp.requires_grad(control.id()) ? &tp.grad_buffer(control.id()) : nullptr;
        std::vector<double> diff(d);
        for (std::size_t i = 0; i < X.rows(); ++i) {
          for (std::size_t j = 0; j < Y.rows(); ++j) {
            const double w = 2.0 * gC(i, j);
            if (w == 0.0) continue;
            for (std::size_t c = 0; c < d; ++c) diff[c] = X(i, c) - Y(j, c);
            if (gx) kernels::axpy(w, diff.data(), gx->row(i).data(), d);
            if (gy) kernels::axpy(-w, diff.data(), gy->row(j).data(), d);
          }
        }
      });
}

double wasserstein_ipm(const Matrix& treated, const Matrix& control, const IPMConfig& cfg,
                       IPMDiagnostics* diagnostics) {
  nd::Tape tape;
  return wasserstein_ipm(tape.constant(treated), tape.constant(control), cfg, diagnostics).scalar();
}

double exact_ot_small(const Matrix& treated, const Matrix& control) {
  const std::size_t n = treated.rows();
  if (n != control.rows()) throw InvalidInput("exact_ot_small: sets must have equal size");
  if (n == 0 || n > 8) throw InvalidInput("exact_ot_small: supports 1 <= n <= 8");
  const Matrix C = squared_distances(treated, control);
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += C(i, perm[i]);
    best = std::min(best, s);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best / static_cast<double>(n);
}

}  // namespace cerl::balance
