#include "cerl/tape.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cerl/errors.hpp"
#include "cerl/kernels.hpp"

namespace cerl::nd {

const Matrix& Var::value() const { return tape_->value(id_); }

double Var::scalar() const {
  const Matrix& v = value();
  if (v.rows() != 1 || v.cols() != 1) throw InvalidInput("scalar(): node is " + v.shape_string());
  return v[0];
}

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, {}, false});
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, {}, true});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Matrix value, std::span<const Var> parents, BackwardFn backward) {
  bool req = false;
  for (const Var& p : parents) {
    if (p.tape() != this) throw InvalidInput("op mixes nodes from different tapes");
    req = req || nodes_[p.id()].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, req ? std::move(backward) : BackwardFn{}, req});
  return Var(this, nodes_.size() - 1);
}

Matrix& Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty() && !n.value.empty()) n.grad = Matrix(n.value.rows(), n.value.cols());
  return n.grad;
}

Matrix Tape::grad(Var v) const {
  const Node& n = nodes_[v.id()];
  if (n.grad.empty()) return Matrix(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape() != this) throw InvalidInput("backward: loss belongs to another tape");
  const Matrix& lv = nodes_[loss.id()].value;
  if (lv.rows() != 1 || lv.cols() != 1) throw InvalidInput("backward: loss must be 1x1, got " + lv.shape_string());
  for (auto& n : nodes_) n.grad = Matrix();
  if (!nodes_[loss.id()].requires_grad) return;
  grad_buffer(loss.id())[0] = 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.empty()) continue;
    // No nodes are appended during the sweep, so references into nodes_ stay valid.
    n.backward(i, n.grad, *this);
  }
}

Activation activation_from_string(std::string_view name) {
  if (name == "elu") return Activation::elu;
  if (name == "relu") return Activation::relu;
  if (name == "tanh") return Activation::tanh;
  if (name == "identity") return Activation::identity;
  throw InvalidInput("unknown activation '" + std::string(name) + "'");
}

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::elu: return "elu";
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::identity: return "identity";
  }
  return "identity";
}

double activate(Activation a, double x) {
  switch (a) {
    case Activation::elu: return x > 0.0 ? x : std::expm1(x);
    case Activation::relu: return x > 0.0 ? x : 0.0;
    case Activation::tanh: return std::tanh(x);
    case Activation::identity: return x;
  }
  return x;
}

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (!a.same_shape(b)) {
    throw InvalidInput(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " + b.shape_string());
  }
}

void accumulate(Tape& t, Var v, const Matrix& g) {
  if (!t.requires_grad(v.id())) return;
  Matrix& buf = t.grad_buffer(v.id());
  kernels::axpy(1.0, g.data(), buf.data(), g.size());
}

double activation_slope(Activation a, double x, double y) {
  switch (a) {
    case Activation::elu: return x > 0.0 ? 1.0 : y + 1.0;
    case Activation::relu: return x > 0.0 ? 1.0 : 0.0;
    case Activation::tanh: return 1.0 - y * y;
    case Activation::identity: return 1.0;
  }
  return 1.0;
}

}  // namespace

Var matmul_nt(Var x, Var w) {
  const Matrix& X = x.value();
  const Matrix& W = w.value();
  if (X.cols() != W.cols()) {
    throw InvalidInput("matmul_nt: input has " + std::to_string(X.cols()) + " columns, layer expects " +
                       std::to_string(W.cols()));
  }
  const std::size_t n = X.rows(), m = W.rows(), k = X.cols();
  Matrix out(n, m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out(i, j) = kernels::dot(X.row(i).data(), W.row(j).data(), k);
  const Var parents[] = {x, w};
  return x.tape()->record(std::move(out), parents, [x, w, n, m, k](std::size_t, const Matrix& g, Tape& tp) {
    const Matrix& X = x.value();
    const Matrix& W = w.value();
    if (tp.requires_grad(x.id())) {
      Matrix& gx = tp.grad_buffer(x.id());
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) kernels::axpy(g(i, j), W.row(j).data(), gx.row(i).data(), k);
    }
    if (tp.requires_grad(w.id())) {
      Matrix& gw = tp.grad_buffer(w.id());
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) kernels::axpy(g(i, j), X.row(i).data(), gw.row(j).data(), k);
    }
  });
}

Var add_row(Var a, Var bias) {
  const Matrix& A = a.value();
  const Matrix& B = bias.value();
  if (B.rows() != 1 || B.cols() != A.cols()) {
    throw InvalidInput("add_row: bias " + B.shape_string() + " does not match " + A.shape_string());
  }
  Matrix out = A;
  for (std::size_t i = 0; i < out.rows(); ++i) kernels::axpy(1.0, B.data(), out.row(i).data(), out.cols());
  const Var parents[] = {a, bias};
  return a.tape()->record(std::move(out), parents, [a, bias](std::size_t, const Matrix& g, Tape& tp) {
    accumulate(tp, a, g);
    if (tp.requires_grad(bias.id())) {
      Matrix& gb = tp.grad_buffer(bias.id());
      for (std::size_t i = 0; i < g.rows(); ++i) kernels::axpy(1.0, g.row(i).data(), gb.data(), g.cols());
    }
  });
}

Var cosine_nt(Var x, Var w) {
  const Matrix& X = x.value();
  const Matrix& W = w.value();
  if (X.cols() != W.cols()) {
    throw InvalidInput("cosine_nt: input has " + std::to_string(X.cols()) + " columns, layer expects " +
                       std::to_string(W.cols()));
  }
  const std::size_t n = X.rows(), m = W.rows(), k = X.cols();
  std::vector<double> nx(n), nw(m);
  for (std::size_t i = 0; i < n; ++i) nx[i] = std::sqrt(kernels::dot(X.row(i).data(), X.row(i).data(), k));
  for (std::size_t j = 0; j < m; ++j) nw[j] = std::sqrt(kernels::dot(W.row(j).data(), W.row(j).data(), k));
  Matrix out(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    if (nx[i] < kCosineNormFloor) continue;
    for (std::size_t j = 0; j < m; ++j) {
      if (nw[j] < kCosineNormFloor) continue;
      // Rounding can push |cos| a hair above 1.
      out(i, j) = std::clamp(kernels::dot(X.row(i).data(), W.row(j).data(), k) / (nx[i] * nw[j]), -1.0, 1.0);
    }
  }
  const Var parents[] = {x, w};
  return x.tape()->record(
      std::move(out), parents,
      [x, w, n, m, k, nx = std::move(nx), nw = std::move(nw)](std::size_t self, const Matrix& g, Tape& tp) {
        const Matrix& X = x.value();
        const Matrix& W = w.value();
        const Matrix& C = tp.value(self);
        const bool want_x = tp.requires_grad(x.id());
        const bool want_w = tp.requires_grad(w.id());
        Matrix* gx = want_x ? &tp.grad_buffer(x.id()) : nullptr;
        Matrix* gw = want_w ? &tp.grad_buffer(w.id()) : nullptr;
        for (std::size_t i = 0; i < n; ++i) {
          if (nx[i] < kCosineNormFloor) continue;
          for (std::size_t j = 0; j < m; ++j) {
            if (nw[j] < kCosineNormFloor || g(i, j) == 0.0) continue;
            const double inv = g(i, j) / (nx[i] * nw[j]);
            const double gc = g(i, j) * C(i, j);
            if (gx) {
              kernels::axpy(inv, W.row(j).data(), gx->row(i).data(), k);
              kernels::axpy(-gc / (nx[i] * nx[i]), X.row(i).data(), gx->row(i).data(), k);
            }
            if (gw) {
              kernels::axpy(inv, X.row(i).data(), gw->row(j).data(), k);
              kernels::axpy(-gc / (nw[j] * nw[j]), W.row(j).data(), gw->row(j).data(), k);
            }
          }
        }
      });
}

Var activation(Var a, Activation kind) {
  if (kind == Activation::identity) return a;
  const Matrix& A = a.value();
  Matrix out(A.rows(), A.cols());
  for (std::size_t i = 0; i < A.size(); ++i) out[i] = activate(kind, A[i]);
  const Var parents[] = {a};
  return a.tape()->record(std::move(out), parents, [a, kind](std::size_t self, const Matrix& g, Tape& tp) {
    const Matrix& A = a.value();
    const Matrix& Y = tp.value(self);
    Matrix& ga = tp.grad_buffer(a.id());
    for (std::size_t i = 0; i < A.size(); ++i) ga[i] += g[i] * activation_slope(kind, A[i], Y[i]);
  });
}

Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  Matrix out = a.value();
  kernels::axpy(1.0, b.value().data(), out.data(), out.size());
  const Var parents[] = {a, b};
  return a.tape()->record(std::move(out), parents, [a, b](std::size_t, const Matrix& g, Tape& tp) {
    accumulate(tp, a, g);
    accumulate(tp, b, g);
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "sub");
  Matrix out = a.value();
  kernels::axpy(-1.0, b.value().data(), out.data(), out.size());
  const Var parents[] = {a, b};
  return a.tape()->record(std::move(out), parents, [a, b](std::size_t, const Matrix& g, Tape& tp) {
    accumulate(tp, a, g);
    if (tp.requires_grad(b.id())) kernels::axpy(-1.0, g.data(), tp.grad_buffer(b.id()).data(), g.size());
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "mul");
  const Matrix& A = a.value();
  const Matrix& B = b.value();
  Matrix out(A.rows(), A.cols());
  kernels::mul_add(A.data(), B.data(), out.data(), out.size());
  const Var parents[] = {a, b};
  return a.tape()->record(std::move(out), parents, [a, b](std::size_t, const Matrix& g, Tape& tp) {
    if (tp.requires_grad(a.id())) kernels::mul_add(g.data(), b.value().data(), tp.grad_buffer(a.id()).data(), g.size());
    if (tp.requires_grad(b.id())) kernels::mul_add(g.data(), a.value().data(), tp.grad_buffer(b.id()).data(), g.size());
  });
}

Var scale(Var a, double s) {
  Matrix out(a.rows(), a.cols());
  kernels::axpy(s, a.value().data(), out.data(), out.size());
  const Var parents[] = {a};
  return a.tape()->record(std::move(out), parents, [a, s](std::size_t, const Matrix& g, Tape& tp) {
    kernels::axpy(s, g.data(), tp.grad_buffer(a.id()).data(), g.size());
  });
}

Var square(Var a) { return mul(a, a); }

Var abs(Var a) {
  const Matrix& A = a.value();
  Matrix out(A.rows(), A.cols());
  for (std::size_t i = 0; i < A.size(); ++i) out[i] = std::fabs(A[i]);
  const Var parents[] = {a};
  return a.tape()->record(std::move(out), parents, [a](std::size_t, const Matrix& g, Tape& tp) {
    const Matrix& A = a.value();
    Matrix& ga = tp.grad_buffer(a.id());
    for (std::size_t i = 0; i < A.size(); ++i) ga[i] += A[i] > 0.0 ? g[i] : (A[i] < 0.0 ? -g[i] : 0.0);
  });
}

Var sum(Var a) {
  const Matrix& A = a.value();
  double s = 0.0;
  for (double v : A.values()) s += v;
  Matrix out(1, 1, s);
  const Var parents[] = {a};
  return a.tape()->record(std::move(out), parents, [a](std::size_t, const Matrix& g, Tape& tp) {
    Matrix& ga = tp.grad_buffer(a.id());
    for (double& v : ga.values()) v += g[0];
  });
}

Var mean(Var a) {
  if (a.value().empty()) throw InvalidInput("mean: empty input");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var gather_rows(Var a, std::span<const std::size_t> idx) {
  Matrix out = a.value().select_rows(idx);
  std::vector<std::size_t> rows(idx.begin(), idx.end());
  const Var parents[] = {a};
  return a.tape()->record(std::move(out), parents,
                          [a, rows = std::move(rows)](std::size_t, const Matrix& g, Tape& tp) {
                            Matrix& ga = tp.grad_buffer(a.id());
                            for (std::size_t k = 0; k < rows.size(); ++k)
                              kernels::axpy(1.0, g.row(k).data(), ga.row(rows[k]).data(), g.cols());
                          });
}

Var concat_rows(Var a, Var b) {
  Matrix out = vstack(a.value(), b.value());
  const std::size_t na = a.rows();
  const Var parents[] = {a, b};
  return a.tape()->record(std::move(out), parents, [a, b, na](std::size_t, const Matrix& g, Tape& tp) {
    const std::size_t c = g.cols();
    if (tp.requires_grad(a.id()) && na > 0) kernels::axpy(1.0, g.data(), tp.grad_buffer(a.id()).data(), na * c);
    if (tp.requires_grad(b.id()) && g.rows() > na)
      kernels::axpy(1.0, g.data() + na * c, tp.grad_buffer(b.id()).data(), (g.rows() - na) * c);
  });
}

Var merge_rows(Var a, std::span<const std::size_t> ia, Var b, std::span<const std::size_t> ib,
               std::size_t rows) {
  if (ia.size() != a.rows() || ib.size() != b.rows() || ia.size() + ib.size() != rows) {
    throw InvalidInput("merge_rows: index sets do not match the inputs");
  }
  const std::size_t c = a.rows() > 0 ? a.cols() : b.cols();
  if (a.rows() > 0 && b.rows() > 0 && a.cols() != b.cols()) throw InvalidInput("merge_rows: column mismatch");
  Matrix out(rows, c);
  std::vector<char> seen(rows, 0);
  auto place = [&](const Matrix& src, std::span<const std::size_t> idx) {
    for (std::size_t k = 0; k < idx.size(); ++k) {
      if (idx[k] >= rows || seen[idx[k]]) throw InvalidInput("merge_rows: indices must partition the output");
      seen[idx[k]] = 1;
      std::copy_n(src.row(k).data(), c, out.row(idx[k]).data());
    }
  };
  place(a.value(), ia);
  place(b.value(), ib);
  std::vector<std::size_t> va(ia.begin(), ia.end()), vb(ib.begin(), ib.end());
  const Var parents[] = {a, b};
  return a.tape()->record(std::move(out), parents,
                          [a, b, va = std::move(va), vb = std::move(vb), c](std::size_t, const Matrix& g, Tape& tp) {
                            if (tp.requires_grad(a.id())) {
                              Matrix& ga = tp.grad_buffer(a.id());
                              for (std::size_t k = 0; k < va.size(); ++k)
                                kernels::axpy(1.0, g.row(va[k]).data(), ga.row(k).data(), c);
                            }
                            if (tp.requires_grad(b.id())) {
                              Matrix& gb = tp.grad_buffer(b.id());
                              for (std::size_t k = 0; k < vb.size(); ++k)
                                kernels::axpy(1.0, g.row(vb[k]).data(), gb.row(k).data(), c);
                            }
                          });
}

Var row_cosine(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "row_cosine");
  const Matrix& A = a.value();
  const Matrix& B = b.value();
  const std::size_t n = A.rows(), k = A.cols();
  std::vector<double> na(n), nb(n);
  Matrix out(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    na[i] = std::sqrt(kernels::dot(A.row(i).data(), A.row(i).data(), k));
    nb[i] = std::sqrt(kernels::dot(B.row(i).data(), B.row(i).data(), k));
    if (na[i] < kCosineNormFloor || nb[i] < kCosineNormFloor) continue;
    out(i, 0) = std::clamp(kernels::dot(A.row(i).data(), B.row(i).data(), k) / (na[i] * nb[i]), -1.0, 1.0);
  }
  const Var parents[] = {a, b};
  return a.tape()->record(
      std::move(out), parents,
      [a, b, n, k, na = std::move(na), nb = std::move(nb)](std::size_t self, const Matrix& g, Tape& tp) {
        const Matrix& A = a.value();
        const Matrix& B = b.value();
        const Matrix& C = tp.value(self);
        Matrix* ga = tp.requires_grad(a.id()) ? &tp.grad_buffer(a.id()) : nullptr;
        Matrix* gb = tp.requires_grad(b.id()) ? &tp.grad_buffer(b.id()) : nullptr;
        for (std::size_t i = 0; i < n; ++i) {
          if (na[i] < kCosineNormFloor || nb[i] < kCosineNormFloor) continue;
          const double inv = g[i] / (na[i] * nb[i]);
          const double gc = g[i] * C[i];
          if (ga) {
            kernels::axpy(inv, B.row(i).data(), ga->row(i).data(), k);
            kernels::axpy(-gc / (na[i] * na[i]), A.row(i).data(), ga->row(i).data(), k);
          }
          if (gb) {
            kernels::axpy(inv, A.row(i).data(), gb->row(i).data(), k);
            kernels::axpy(-gc / (nb[i] * nb[i]), B.row(i).data(), gb->row(i).data(), k);
          }
        }
      });
}

Var detach(Var a) { return a.tape()->constant(a.value()); }

}  // namespace cerl::nd
