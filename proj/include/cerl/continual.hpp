#pragma once

// Continual stage d >= 2: the new network g_{w_d} and heads are trained on new data plus a
// memory of stored representations, with
//   L = L_G + alpha * Wass + lambda * L_w + beta * L_FD + delta * L_FT
// where L_FD ties new representations to the frozen previous network and L_FT trains a map
// phi from the previous representation space into the new one. Balance is enforced on the
// pooled space of transformed memory and new representations.

#include <cstdint>
#include <optional>

#include "cerl/memory.hpp"
#include "cerl/model.hpp"

namespace cerl::continual {

struct ContinualHyper {
  double alpha = 1.0;
  double lambda = 1e-4;
  double beta = 1.0;   // feature distillation
  double delta = 1.0;  // feature transformation

  void validate() const;
  friend bool operator==(const ContinualHyper&, const ContinualHyper&) = default;
};

struct ContinualOptions {
  // Off: no phi and no memory, distillation only.
  bool use_transform = true;
  // Blocks the L_FT gradient into g_{w_d}; phi still learns from it.
  bool stop_gradient_transform = false;
  // Lets the memory part of L_G train phi. Off, phi learns from L_FT and Wass only; with it
  // on, phi tends to memorise the noisy stored outcomes instead of tracking the new space.
  bool phi_outcome_gradient = false;
  bool warm_start_heads = false;
  // Epochs fitting phi to the identity on the stored and current old-space representations.
  // The new network starts as a copy of the previous one, so the identity is the correct
  // initial map.
  int identity_init_epochs = 20;
  // Epochs of phi trained alone on L_FT before the joint phase.
  int phi_warmup_epochs = 0;
  memory::Selection selection = memory::Selection::herding;

  friend bool operator==(const ContinualOptions&, const ContinualOptions&) = default;
};

struct TransformFunction {
  nd::DenseNetwork net;

  std::size_t input_dim() const { return net.input_dim(); }
  std::size_t output_dim() const { return net.output_dim(); }
  void validate() const { net.validate(); }
  Matrix apply(const Matrix& old_reps) const { return nd::forward(net, old_reps); }

  friend bool operator==(const TransformFunction&, const TransformFunction&) = default;
};

// Hidden layers from arch.transform_hidden; output layer shaped like the representation
// network's (cosine or affine, activated).
TransformFunction make_transform(std::size_t input_dim, std::size_t output_dim, const model::Architecture& arch,
                                 std::mt19937_64& rng);

// mean_i (1 - cos(a_i, b_i)).
double cosine_gap(const Matrix& a, const Matrix& b);
nd::Var cosine_gap(nd::Var a, nd::Var b);

double distill_loss(const model::RepresentationModel& old_model, const model::RepresentationModel& new_model,
                    const Matrix& X_new);
double transform_loss(const TransformFunction& phi, const model::RepresentationModel& old_model,
                      const model::RepresentationModel& new_model, const Matrix& X_new);

// Memory MSE through the heads on phi(r) plus new-data MSE on g(x). Throws InvalidInput when
// the memory part is empty.
nd::Var global_factual_loss(const model::RepresentationModel& model, const model::ModelVars& vars,
                            nd::Var memory_reps, std::span<const double> memory_y, std::span<const int> memory_t,
                            nd::Var new_reps, std::span<const double> new_y, std::span<const int> new_t);

// One optimisation step's inputs. `old_reps` are the frozen previous network's
// representations of `batch.X`. Memory fields are ignored when the transform is disabled.
struct ContinualBatch {
  model::UnitData batch;
  Matrix old_reps;
  Matrix memory_reps;
  std::vector<double> memory_y;
  std::vector<int> memory_t;
};

struct ContinualTerms {
  nd::Var total;
  nd::Var global_factual;
  nd::Var wass;
  nd::Var elastic;
  nd::Var distill;    // invalid when beta is unused
  nd::Var transform;  // invalid without a transform
  balance::IPMDiagnostics ipm;
};

ContinualTerms continual_objective(nd::Tape& tape, const model::RepresentationModel& model,
                                   const model::ModelVars& vars, const TransformFunction* phi,
                                   const nd::NetworkVars* phi_vars, const ContinualBatch& batch,
                                   const ContinualHyper& hyper, const balance::IPMConfig& ipm,
                                   const ContinualOptions& options);

struct ContinualResult {
  model::RepresentationModel model;
  std::optional<TransformFunction> phi;
  model::TrainReport report;
};

// Trains stage d from the previous model and memory. `memory` may be null only when the
// transform is disabled. The previous model is never modified.
ContinualResult train_continual(const model::RepresentationModel& prev_model, const memory::MemorySet* memory,
                                const model::UnitData& train, const model::UnitData& validation,
                                const model::TrainConfig& cfg, const ContinualHyper& hyper,
                                const ContinualOptions& options, const model::Architecture& arch);

// phi(old memory) joined with the new model's representations of `data`, re-selected per
// group down to `capacity`.
memory::MemorySet update_memory(const memory::MemorySet& memory, const TransformFunction& phi,
                                const model::RepresentationModel& new_model, const model::UnitData& data,
                                std::size_t capacity, memory::Selection mode = memory::Selection::herding,
                                std::uint64_t seed = 0);

}  // namespace cerl::continual
