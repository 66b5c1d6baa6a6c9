#include "cerl/strategy.hpp"

#include <chrono>
#include <cmath>

#include "cerl/errors.hpp"

namespace cerl::eval {

namespace {

constexpr std::pair<StrategyKind, std::string_view> kNames[] = {
    {StrategyKind::freeze, "A"},
    {StrategyKind::finetune, "B"},
    {StrategyKind::retrain_all, "C"},
    {StrategyKind::cerl, "CERL"},
    {StrategyKind::cerl_no_frt, "CERL-no-FRT"},
    {StrategyKind::cerl_no_herding, "CERL-no-herding"},
    {StrategyKind::cerl_no_cosine, "CERL-no-cosine"},
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::size_t memory_floats(const std::optional<memory::MemorySet>& m) { return m ? m->stored_floats() : 0; }

}  // namespace

std::string_view to_string(StrategyKind k) {
  for (const auto& [kind, name] : kNames)
    if (kind == k) return name;
  throw InvalidInput("unknown strategy kind");
}

StrategyKind strategy_from_string(std::string_view s) {
  for (const auto& [kind, name] : kNames)
    if (name == s) return kind;
  throw InvalidInput("unknown strategy '" + std::string(s) +
                     "' (expected A, B, C, CERL, CERL-no-FRT, CERL-no-herding or CERL-no-cosine)");
}

bool is_cerl_family(StrategyKind k) {
  return k == StrategyKind::cerl || k == StrategyKind::cerl_no_frt || k == StrategyKind::cerl_no_herding ||
         k == StrategyKind::cerl_no_cosine;
}

model::Architecture RunSettings::arch_for(StrategyKind kind) const {
  model::Architecture a = arch;
  if (kind == StrategyKind::cerl_no_cosine) a.cosine_output = false;
  return a;
}

continual::ContinualOptions RunSettings::options_for(StrategyKind kind) const {
  continual::ContinualOptions o = options;
  if (kind == StrategyKind::cerl_no_frt) o.use_transform = false;
  if (kind == StrategyKind::cerl_no_herding) o.selection = memory::Selection::random;
  return o;
}

model::TrainConfig RunSettings::train_for_stage(std::size_t stage) const {
  model::TrainConfig c = train;
  c.seed = seed * 7919ull + stage;
  return c;
}

model::TrainConfig RunSettings::train_for_update(std::size_t stage) const {
  model::TrainConfig c = train_for_stage(stage);
  if (incremental_learning_rate > 0.0) c.learning_rate = incremental_learning_rate;
  return c;
}

void RunSettings::validate() const {
  train.validate();
  hyper.validate();
  if (!(incremental_learning_rate >= 0.0) || !std::isfinite(incremental_learning_rate)) {
    throw InvalidInput("incremental_learning_rate must be finite and non-negative");
  }
  if (memory_capacity < 2) throw InvalidInput("memory capacity must be at least 2");
}

std::atomic<std::size_t> StageData::live_{0};

StageData::StageData(model::UnitData train, model::UnitData validation, int source_id)
    : train_(std::move(train)), validation_(std::move(validation)), source_id_(source_id) {
  train_.validate();
  validation_.validate();
  ++live_;
}

StageData::StageData(const StageData& other)
    : train_(other.train_), validation_(other.validation_), source_id_(other.source_id_) {
  ++live_;
}

StageData::~StageData() { --live_; }

model::RepresentationModel train_first_stage(const synth::SourceData& source, const RunSettings& settings,
                                             const model::Architecture& arch) {
  const auto train = model::UnitData::from(source.data, source.split.train);
  const auto val = model::UnitData::from(source.data, source.split.validation);
  return model::train_baseline(train, val, settings.train_for_stage(1), arch, settings.hyper.alpha,
                               settings.hyper.lambda);
}

namespace {

// A and B: one model, no memory.
class SingleModelLearner : public Learner {
 public:
  SingleModelLearner(StrategyKind kind, RunSettings settings, const model::RepresentationModel* stage1)
      : kind_(kind), settings_(std::move(settings)) {
    if (stage1) stage1_ = *stage1;
  }
  SingleModelLearner(const StageBundle& b, RunSettings settings)
      : kind_(b.kind), settings_(std::move(settings)), model_(b.model), stages_(b.stages_completed) {}

  void fit_stage(std::shared_ptr<const StageData> data) override {
    const std::size_t stage = stages_ + 1;
    if (stage == 1) {
      model_ = stage1_ ? *stage1_
                       : model::train_baseline(data->train(), data->validation(), settings_.train_for_stage(1),
                                               settings_.arch, settings_.hyper.alpha, settings_.hyper.lambda);
      stage1_.reset();
    } else if (kind_ == StrategyKind::finetune) {
      model::fit_baseline(model_, data->train(), data->validation(), settings_.train_for_update(stage));
    }
    stages_ = stage;
  }
  const model::RepresentationModel& model() const override { return model_; }
  std::size_t stages_completed() const override { return stages_; }
  std::size_t stored_floats() const override { return model_.parameter_count(); }
  std::size_t raw_covariate_rows() const override { return 0; }
  StageBundle bundle() const override {
    StageBundle b;
    b.kind = kind_;
    b.stages_completed = stages_;
    b.seed = settings_.seed;
    b.model = model_;
    return b;
  }

 private:
  StrategyKind kind_;
  RunSettings settings_;
  std::optional<model::RepresentationModel> stage1_;
  model::RepresentationModel model_;
  std::size_t stages_ = 0;
};

// C: keeps a copy of every stage's data and retrains from scratch on the union.
class RetrainLearner : public Learner {
 public:
  RetrainLearner(RunSettings settings, const model::RepresentationModel* stage1) : settings_(std::move(settings)) {
    if (stage1) stage1_ = *stage1;
  }

  void fit_stage(std::shared_ptr<const StageData> data) override {
    kept_.push_back(std::make_unique<StageData>(*data));
    const std::size_t stage = kept_.size();
    if (stage == 1 && stage1_) {
      model_ = *stage1_;
      stage1_.reset();
      return;
    }
    model::UnitData train = kept_.front()->train(), val = kept_.front()->validation();
    for (std::size_t k = 1; k < kept_.size(); ++k) {
      train = model::concat(train, kept_[k]->train());
      val = model::concat(val, kept_[k]->validation());
    }
    model_ = model::train_baseline(train, val, settings_.train_for_stage(stage), settings_.arch,
                                   settings_.hyper.alpha, settings_.hyper.lambda);
  }
  const model::RepresentationModel& model() const override { return model_; }
  std::size_t stages_completed() const override { return kept_.size(); }
  std::size_t stored_floats() const override {
    std::size_t n = model_.parameter_count();
    for (const auto& d : kept_) n += d->covariate_rows() * (d->train().X.cols() + 2);
    return n;
  }
  std::size_t raw_covariate_rows() const override {
    std::size_t n = 0;
    for (const auto& d : kept_) n += d->covariate_rows();
    return n;
  }
  StageBundle bundle() const override {
    StageBundle b;
    b.kind = StrategyKind::retrain_all;
    b.stages_completed = kept_.size();
    b.seed = settings_.seed;
    b.model = model_;
    return b;
  }

 private:
  RunSettings settings_;
  std::optional<model::RepresentationModel> stage1_;
  std::vector<std::unique_ptr<StageData>> kept_;
  model::RepresentationModel model_;
};

class CerlLearner : public Learner {
 public:
  CerlLearner(StrategyKind kind, RunSettings settings, const model::RepresentationModel* stage1)
      : kind_(kind), settings_(std::move(settings)), arch_(settings_.arch_for(kind)), options_(settings_.options_for(kind)) {
    if (stage1) stage1_ = *stage1;
  }
  CerlLearner(const StageBundle& b, RunSettings settings)
      : kind_(b.kind),
        settings_(std::move(settings)),
        arch_(settings_.arch_for(b.kind)),
        options_(settings_.options_for(b.kind)),
        model_(b.model),
        memory_(b.memory),
        phi_(b.phi),
        stages_(b.stages_completed) {
    if (options_.use_transform && !memory_) throw InvalidInput("resume: bundle has no memory for " + std::string(to_string(kind_)));
  }

  void fit_stage(std::shared_ptr<const StageData> data) override {
    const std::size_t stage = stages_ + 1;
    const model::TrainConfig cfg = stage == 1 ? settings_.train_for_stage(1) : settings_.train_for_update(stage);
    const std::uint64_t select_seed = cfg.seed ^ 0x5eedull;
    if (stage == 1) {
      model_ = stage1_ ? *stage1_
                       : model::train_baseline(data->train(), data->validation(), cfg, arch_, settings_.hyper.alpha,
                                               settings_.hyper.lambda);
      stage1_.reset();
      if (options_.use_transform) {
        memory_ = memory::build_memory(model_, data->train(), settings_.memory_capacity, options_.selection,
                                       select_seed);
      }
    } else {
      continual::ContinualResult r = continual::train_continual(
          model_, memory_ ? &*memory_ : nullptr, data->train(), data->validation(), cfg, settings_.hyper, options_,
          arch_);
      model_ = std::move(r.model);
      phi_ = std::move(r.phi);
      if (options_.use_transform) {
        memory_ = continual::update_memory(*memory_, *phi_, model_, data->train(), settings_.memory_capacity,
                                           options_.selection, select_seed);
      }
    }
    if (memory_) memory_->provenance = std::string(to_string(kind_)) + " stage " + std::to_string(stage);
    stages_ = stage;
  }
  const model::RepresentationModel& model() const override { return model_; }
  std::size_t stages_completed() const override { return stages_; }
  std::size_t stored_floats() const override {
    return model_.parameter_count() + (phi_ ? phi_->net.parameter_count() : 0) + memory_floats(memory_);
  }
  std::size_t raw_covariate_rows() const override { return 0; }
  StageBundle bundle() const override {
    StageBundle b;
    b.kind = kind_;
    b.stages_completed = stages_;
    b.seed = settings_.seed;
    b.model = model_;
    b.memory = memory_;
    b.phi = phi_;
    return b;
  }

 private:
  StrategyKind kind_;
  RunSettings settings_;
  model::Architecture arch_;
  continual::ContinualOptions options_;
  std::optional<model::RepresentationModel> stage1_;
  model::RepresentationModel model_;
  std::optional<memory::MemorySet> memory_;
  std::optional<continual::TransformFunction> phi_;
  std::size_t stages_ = 0;
};

}  // namespace

std::unique_ptr<Learner> make_learner(StrategyKind kind, const RunSettings& settings,
                                      const model::RepresentationModel* stage1) {
  settings.validate();
  switch (kind) {
    case StrategyKind::freeze:
    case StrategyKind::finetune:
      return std::make_unique<SingleModelLearner>(kind, settings, stage1);
    case StrategyKind::retrain_all:
      return std::make_unique<RetrainLearner>(settings, stage1);
    default:
      return std::make_unique<CerlLearner>(kind, settings, stage1);
  }
}

std::unique_ptr<Learner> resume_learner(const StageBundle& bundle, const RunSettings& settings) {
  settings.validate();
  if (bundle.stages_completed == 0) throw InvalidInput("resume: bundle has no completed stage");
  switch (bundle.kind) {
    case StrategyKind::freeze:
    case StrategyKind::finetune:
      return std::make_unique<SingleModelLearner>(bundle, settings);
    case StrategyKind::retrain_all:
      throw InvalidInput("resume: strategy C retrains on all raw data and cannot continue from a bundle");
    default:
      return std::make_unique<CerlLearner>(bundle, settings);
  }
}

EffectMetrics score(const model::RepresentationModel& m, const synth::SourceData& source) {
  const synth::ObservationalDataset test = source.data.subset(source.split.test);
  const model::EffectEstimate est = model::estimate_effects(m, test.X);
  return metrics(test.tau, est.ite);
}

std::vector<MetricsRow> run_stages(Learner& learner, StrategyKind kind, const std::vector<synth::SourceData>& sequence,
                                   std::size_t first_source, std::uint64_t seed, const std::string& scenario,
                                   const StageCallback& on_stage) {
  std::vector<MetricsRow> rows;
  for (std::size_t s = first_source; s < sequence.size(); ++s) {
    const synth::SourceData& src = sequence[s];
    auto data = std::make_shared<const StageData>(model::UnitData::from(src.data, src.split.train),
                                                  model::UnitData::from(src.data, src.split.validation),
                                                  src.data.source_id);
    std::weak_ptr<const StageData> watch = data;
    const auto t0 = std::chrono::steady_clock::now();
    learner.fit_stage(std::move(data));
    const double runtime = seconds_since(t0);
    if (!keeps_raw_data(kind)) {
      if (!watch.expired()) {
        throw FirewallViolation("strategy " + std::string(to_string(kind)) + " kept stage " + std::to_string(s + 1) +
                                " data past the stage boundary");
      }
      if (learner.raw_covariate_rows() != 0) {
        throw FirewallViolation("strategy " + std::string(to_string(kind)) + " reports raw covariate rows");
      }
    }
    const std::size_t stage = learner.stages_completed();
    for (std::size_t e = 0; e <= s; ++e) {
      const EffectMetrics m = score(learner.model(), sequence[e]);
      rows.push_back(MetricsRow{scenario, std::string(to_string(kind)), stage, e, seed, m.sqrt_pehe, m.ate_error,
                                runtime, learner.stored_floats(), learner.raw_covariate_rows()});
    }
    if (on_stage) on_stage(learner, stage, runtime);
  }
  return rows;
}

std::vector<MetricsRow> run_strategy(StrategyKind kind, const std::vector<synth::SourceData>& sequence,
                                     const RunSettings& settings, const std::string& scenario,
                                     const model::RepresentationModel* stage1, const StageCallback& on_stage) {
  if (sequence.empty()) throw InvalidInput("run_strategy: empty source sequence");
  auto learner = make_learner(kind, settings, stage1);
  return run_stages(*learner, kind, sequence, 0, settings.seed, scenario, on_stage);
}

nlohmann::json to_json(const model::RepresentationModel& m) {
  return {{"rep", io::to_json(m.rep)},
          {"head0", io::to_json(m.head0)},
          {"head1", io::to_json(m.head1)},
          {"alpha", m.alpha},
          {"lambda", m.lambda}};
}

model::RepresentationModel model_from_json(const nlohmann::json& j) {
  model::RepresentationModel m;
  m.rep = io::network_from_json(j.at("rep"));
  m.head0 = io::network_from_json(j.at("head0"));
  m.head1 = io::network_from_json(j.at("head1"));
  m.alpha = j.at("alpha").get<double>();
  m.lambda = j.at("lambda").get<double>();
  m.validate();
  return m;
}

nlohmann::json to_json(const memory::MemorySet& m) {
  return {{"representations", io::to_json(m.representations)},
          {"y", m.y},
          {"t", m.t},
          {"source_tags", m.source_tags},
          {"unit_ids", m.unit_ids},
          {"capacity", m.capacity},
          {"provenance", m.provenance}};
}

memory::MemorySet memory_from_json(const nlohmann::json& j) {
  memory::MemorySet m;
  m.representations = io::matrix_from_json(j.at("representations"));
  m.y = j.at("y").get<std::vector<double>>();
  m.t = j.at("t").get<std::vector<int>>();
  m.source_tags = j.at("source_tags").get<std::vector<int>>();
  m.unit_ids = j.at("unit_ids").get<std::vector<std::int64_t>>();
  m.capacity = j.at("capacity").get<std::size_t>();
  m.provenance = j.at("provenance").get<std::string>();
  m.validate();
  return m;
}

void save_bundle(const std::filesystem::path& dir, const StageBundle& b, const nlohmann::json& stamp) {
  std::filesystem::create_directories(dir);
  io::save_container(dir / "model.json", "model", to_json(b.model));
  if (b.memory) io::save_container(dir / "memory.json", "memory", to_json(*b.memory));
  if (b.phi) io::save_container(dir / "phi.json", "transform", io::to_json(b.phi->net));
  // Written last: its presence marks a complete bundle.
  io::save_container(dir / "bundle.json", "stage-bundle",
                     {{"strategy", std::string(to_string(b.kind))},
                      {"stages_completed", b.stages_completed},
                      {"seed", b.seed},
                      {"runtime_seconds", b.runtime_seconds},
                      {"has_memory", b.memory.has_value()},
                      {"has_phi", b.phi.has_value()},
                      {"stamp", stamp}});
}

StageBundle load_bundle(const std::filesystem::path& dir) {
  if (!std::filesystem::exists(dir / "bundle.json")) {
    throw InvalidInput("no complete stage bundle in " + dir.string());
  }
  const nlohmann::json meta = io::load_container(dir / "bundle.json", "stage-bundle");
  StageBundle b;
  b.kind = strategy_from_string(meta.at("strategy").get<std::string>());
  b.stages_completed = meta.at("stages_completed").get<std::size_t>();
  b.seed = meta.at("seed").get<std::uint64_t>();
  b.runtime_seconds = meta.at("runtime_seconds").get<double>();
  b.model = model_from_json(io::load_container(dir / "model.json", "model"));
  if (meta.at("has_memory").get<bool>()) b.memory = memory_from_json(io::load_container(dir / "memory.json", "memory"));
  if (meta.at("has_phi").get<bool>()) {
    b.phi = continual::TransformFunction{io::network_from_json(io::load_container(dir / "phi.json", "transform"))};
  }
  return b;
}

}  // namespace cerl::eval
