#pragma once

// Baseline treatment-effect learner: a selective representation network g with a
// cosine-normalised last layer, an elastic-net penalty on its weights, two outcome
// heads (control, treated) and a Wasserstein balance term between the groups'
// representations.

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cerl/balance.hpp"
#include "cerl/errors.hpp"
#include "cerl/network.hpp"
#include "cerl/optimizer.hpp"
#include "cerl/synthgen.hpp"

namespace cerl::model {

struct Architecture {
  std::vector<std::size_t> rep_hidden{64, 64};
  std::size_t rep_dim = 32;
  std::vector<std::size_t> head_hidden{32, 32};
  std::vector<std::size_t> transform_hidden{64};
  nd::Activation activation = nd::Activation::elu;
  bool cosine_output = true;

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

struct RepresentationModel {
  nd::DenseNetwork rep;
  nd::DenseNetwork head0;  // control
  nd::DenseNetwork head1;  // treated
  double alpha = 1.0;
  double lambda = 1e-4;

  std::size_t input_dim() const { return rep.input_dim(); }
  std::size_t rep_dim() const { return rep.output_dim(); }
  std::size_t parameter_count() const {
    return rep.parameter_count() + head0.parameter_count() + head1.parameter_count();
  }
  void validate() const;

  friend bool operator==(const RepresentationModel&, const RepresentationModel&) = default;
};

RepresentationModel make_model(std::size_t input_dim, const Architecture& arch, double alpha, double lambda,
                               std::mt19937_64& rng);

// Units handed to a learner for one stage. `ids` and `source_id` travel with stored exemplars.
struct UnitData {
  Matrix X;
  std::vector<int> t;
  std::vector<double> y;
  std::vector<std::int64_t> ids;
  int source_id = 0;

  std::size_t size() const { return y.size(); }
  void validate() const;
  UnitData subset(std::span<const std::size_t> idx) const;
  static UnitData from(const synth::ObservationalDataset& d, std::span<const std::size_t> idx);
};

UnitData concat(const UnitData& a, const UnitData& b);

struct TrainConfig {
  int epochs = 60;
  std::size_t batch_size = 128;
  double learning_rate = 1e-3;
  int patience = 15;
  std::uint64_t seed = 0;
  balance::IPMConfig ipm;
  std::size_t memory_batch = 64;
  int max_redraws = 16;

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

class SingleGroupBatch : public InvalidInput {
 public:
  using InvalidInput::InvalidInput;
};

struct ModelVars {
  nd::NetworkVars rep, head0, head1;
};

ModelVars bind_model(nd::Tape& tape, RepresentationModel& model, nd::Binding& trainable);
ModelVars bind_frozen(nd::Tape& tape, const RepresentationModel& model);

Matrix represent(const RepresentationModel& model, const Matrix& X);

double elastic_net_penalty(const nd::DenseNetwork& rep);
double elastic_net_penalty(const RepresentationModel& model);
nd::Var elastic_net(const nd::NetworkVars& rep);

// Routes row i to head_{t_i}. Throws InvalidInput on a treatment outside {0, 1}.
std::vector<double> predict_outcome(const RepresentationModel& model, const Matrix& R, std::span<const int> t);
nd::Var predict_outcome(const RepresentationModel& model, const ModelVars& vars, nd::Var R, std::span<const int> t);

double factual_loss(std::span<const double> predicted, std::span<const double> observed);
nd::Var factual_loss(nd::Var predicted, std::span<const double> observed);

// Row indices per treatment group. Throws InvalidInput on a treatment outside {0, 1}.
void split_groups(std::span<const int> t, std::vector<std::size_t>& treated, std::vector<std::size_t>& control);

struct ObjectiveTerms {
  nd::Var total;
  nd::Var factual;
  nd::Var wass;
  nd::Var elastic;
  balance::IPMDiagnostics ipm;
};

// L_Y + alpha * Wass(treated reps, control reps) + lambda * elastic net.
ObjectiveTerms baseline_objective(nd::Tape& tape, const RepresentationModel& model, const ModelVars& vars,
                                  const UnitData& batch, const balance::IPMConfig& ipm);

struct TrainReport {
  std::vector<double> epoch_loss;     // mean training objective per epoch
  std::vector<double> epoch_val_mse;  // validation factual MSE per epoch
  int best_epoch = -1;
  double best_val_mse = 0.0;
  int steps = 0;
  int non_converged_ipm = 0;
};

// Mini-batch Adam on the baseline objective, keeping the parameters with the best
// validation factual MSE. Continues from the model's current parameters.
TrainReport fit_baseline(RepresentationModel& model, const UnitData& train, const UnitData& validation,
                         const TrainConfig& cfg);

RepresentationModel train_baseline(const UnitData& train, const UnitData& validation, const TrainConfig& cfg,
                                   const Architecture& arch, double alpha, double lambda,
                                   TrainReport* report = nullptr);

struct EffectEstimate {
  std::vector<double> ite;
  double ate = 0.0;
};

EffectEstimate estimate_effects(const RepresentationModel& model, const Matrix& X);

double validation_mse(const RepresentationModel& model, const UnitData& data);

// Draws a batch whose rows include both treatment groups; nullopt-like empty result after
// `max_redraws` failures.
std::vector<std::size_t> ensure_mixed_batch(std::vector<std::size_t> batch, std::span<const int> t,
                                            std::size_t population, int max_redraws, std::mt19937_64& rng);

}  // namespace cerl::model
