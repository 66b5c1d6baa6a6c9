#pragma once

// Reverse-mode differentiation over dense matrices.
//
// A Tape records every intermediate value produced by the ops below together
// with a closure that pushes the output gradient back to its inputs. Nodes
// created with Tape::parameter collect gradients; constants do not, and any
// node whose inputs are all constants is skipped during the backward sweep.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "cerl/matrix.hpp"

namespace cerl::nd {

class Tape;

class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  double scalar() const;  // value of a 1x1 node

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  // Called with the node's own id (so the closure can read its output value) and its
  // accumulated output gradient.
  using BackwardFn = std::function<void(std::size_t self, const Matrix& out_grad, Tape& tape)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var parameter(Matrix value);

  // Records the result of an op. The node requires a gradient iff any parent does;
  // otherwise `backward` is dropped.
  Var record(Matrix value, std::span<const Var> parents, BackwardFn backward);

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  // Gradient buffer of a node, zero-initialised on first access. Ops accumulate into it.
  Matrix& grad_buffer(std::size_t id);

  // Gradient of the last backward() target with respect to `v`; zeros when unreached.
  Matrix grad(Var v) const;
  bool reached(Var v) const { return !nodes_[v.id()].grad.empty() || nodes_[v.id()].value.empty(); }

  // Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse. `loss` must be 1x1.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    BackwardFn backward;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
};

enum class Activation { elu, relu, tanh, identity };

Activation activation_from_string(std::string_view name);
std::string_view to_string(Activation a);
double activate(Activation a, double x);

// --- ops -----------------------------------------------------------------

Var matmul_nt(Var x, Var w);                 // x (n x k) times w^T (m x k) -> n x m
Var add_row(Var a, Var bias);                // adds a 1 x m row to every row of a
Var cosine_nt(Var x, Var w);                 // cos(x_i, w_j); 0 when either norm < 1e-12
Var activation(Var a, Activation kind);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);                       // elementwise
Var scale(Var a, double s);
Var square(Var a);
Var abs(Var a);                              // subgradient 0 at 0
Var sum(Var a);                              // -> 1 x 1
Var mean(Var a);                             // -> 1 x 1
Var gather_rows(Var a, std::span<const std::size_t> idx);
Var concat_rows(Var a, Var b);
// out has `rows` rows; row ia[k] = a row k, row ib[k] = b row k. Index sets must partition [0, rows).
Var merge_rows(Var a, std::span<const std::size_t> ia, Var b, std::span<const std::size_t> ib,
               std::size_t rows);
Var row_cosine(Var a, Var b);                // n x 1 cosine of matching rows; 0 on zero norm
Var detach(Var a);

inline constexpr double kCosineNormFloor = 1e-12;

}  // namespace cerl::nd
