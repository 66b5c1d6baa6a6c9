#pragma once

// Strategies for a sequence of observational sources:
//   A     train on the first source, then keep the model frozen
//   B     fine-tune the previous model on each new source
//   C     keep every source's raw data and retrain on the union
//   CERL  baseline on the first source, then continual stages with memory
// plus CERL ablations without the transform, with random memory, and without the cosine
// output layer. After every stage the current model is scored on the test split of every
// source seen so far.

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cerl/checkpoint.hpp"
#include "cerl/continual.hpp"
#include "cerl/memory.hpp"
#include "cerl/metrics.hpp"
#include "cerl/model.hpp"
#include "cerl/synthgen.hpp"

namespace cerl::eval {

enum class StrategyKind { freeze, finetune, retrain_all, cerl, cerl_no_frt, cerl_no_herding, cerl_no_cosine };

// "A", "B", "C", "CERL", "CERL-no-FRT", "CERL-no-herding", "CERL-no-cosine".
std::string_view to_string(StrategyKind k);
StrategyKind strategy_from_string(std::string_view s);
bool is_cerl_family(StrategyKind k);
// Strategies allowed to keep raw data from earlier stages.
inline bool keeps_raw_data(StrategyKind k) { return k == StrategyKind::retrain_all; }

struct RunSettings {
  model::TrainConfig train;
  model::Architecture arch;
  continual::ContinualHyper hyper;
  continual::ContinualOptions options;
  std::size_t memory_capacity = 500;
  std::uint64_t seed = 0;
  // Learning rate when an existing model is updated (B, CERL stages after the first); 0
  // keeps train.learning_rate.
  double incremental_learning_rate = 0.0;

  // Architecture and options actually used by `kind` (ablations override parts).
  model::Architecture arch_for(StrategyKind kind) const;
  continual::ContinualOptions options_for(StrategyKind kind) const;
  model::TrainConfig train_for_stage(std::size_t stage) const;
  model::TrainConfig train_for_update(std::size_t stage) const;
  void validate() const;
  friend bool operator==(const RunSettings&, const RunSettings&) = default;
};

// What a learner receives for one stage. Instances are counted so tests can prove that no
// copy outlives its stage.
class StageData {
 public:
  StageData(model::UnitData train, model::UnitData validation, int source_id);
  StageData(const StageData& other);
  StageData& operator=(const StageData&) = delete;
  ~StageData();

  const model::UnitData& train() const { return train_; }
  const model::UnitData& validation() const { return validation_; }
  int source_id() const { return source_id_; }
  std::size_t covariate_rows() const { return train_.size() + validation_.size(); }

  static std::size_t live_instances() { return live_.load(); }

 private:
  model::UnitData train_;
  model::UnitData validation_;
  int source_id_;
  static std::atomic<std::size_t> live_;
};

// Everything a learner keeps after a stage. For CERL it is enough to continue with the
// next source and nothing else.
struct StageBundle {
  StrategyKind kind = StrategyKind::cerl;
  std::size_t stages_completed = 0;
  std::uint64_t seed = 0;
  model::RepresentationModel model;
  std::optional<memory::MemorySet> memory;
  std::optional<continual::TransformFunction> phi;
  double runtime_seconds = 0.0;
};

class Learner {
 public:
  virtual ~Learner() = default;
  // Trains on the next source. Implementations must not retain `data` beyond the call
  // unless the strategy is allowed to keep raw data.
  virtual void fit_stage(std::shared_ptr<const StageData> data) = 0;
  virtual const model::RepresentationModel& model() const = 0;
  virtual std::size_t stages_completed() const = 0;
  // Floats retained between stages: parameters, memory, kept raw data.
  virtual std::size_t stored_floats() const = 0;
  // Raw covariate rows from earlier stages still held.
  virtual std::size_t raw_covariate_rows() const = 0;
  virtual StageBundle bundle() const = 0;
};

// `stage1` may supply an already trained first-stage model for the same settings.
std::unique_ptr<Learner> make_learner(StrategyKind kind, const RunSettings& settings,
                                      const model::RepresentationModel* stage1 = nullptr);
// Continues from a saved bundle. Strategy C cannot resume without its raw data.
std::unique_ptr<Learner> resume_learner(const StageBundle& bundle, const RunSettings& settings);

struct MetricsRow {
  std::string scenario;
  std::string strategy;
  std::size_t stage = 0;         // 1-based
  std::size_t eval_dataset = 0;  // 0-based source index
  std::uint64_t seed = 0;
  double sqrt_pehe = 0.0;
  double ate_error = 0.0;
  double runtime_seconds = 0.0;
  std::size_t stored_floats = 0;
  std::size_t raw_covariate_rows = 0;
};

class FirewallViolation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using StageCallback = std::function<void(const Learner&, std::size_t stage, double runtime_seconds)>;

// Feeds sources [first_source, sequence.size()) to the learner, scoring after each stage on
// the test split of every source up to the current one. Only test splits of earlier
// sources are read. Throws FirewallViolation when a learner that may not keep raw data
// still references a stage's data afterwards.
std::vector<MetricsRow> run_stages(Learner& learner, StrategyKind kind, const std::vector<synth::SourceData>& sequence,
                                   std::size_t first_source, std::uint64_t seed, const std::string& scenario = "",
                                   const StageCallback& on_stage = {});

std::vector<MetricsRow> run_strategy(StrategyKind kind, const std::vector<synth::SourceData>& sequence,
                                     const RunSettings& settings, const std::string& scenario = "",
                                     const model::RepresentationModel* stage1 = nullptr,
                                     const StageCallback& on_stage = {});

// First-stage model shared by every strategy with the same architecture.
model::RepresentationModel train_first_stage(const synth::SourceData& source, const RunSettings& settings,
                                             const model::Architecture& arch);

EffectMetrics score(const model::RepresentationModel& m, const synth::SourceData& source);

// Stage artifacts on disk: model.json, memory.json and phi.json where present, bundle.json.
void save_bundle(const std::filesystem::path& dir, const StageBundle& bundle, const nlohmann::json& stamp);
StageBundle load_bundle(const std::filesystem::path& dir);

nlohmann::json to_json(const model::RepresentationModel& m);
model::RepresentationModel model_from_json(const nlohmann::json& j);
nlohmann::json to_json(const memory::MemorySet& m);
memory::MemorySet memory_from_json(const nlohmann::json& j);

}  // namespace cerl::eval
