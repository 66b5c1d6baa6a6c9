#include "cerl/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace cerl::model {

namespace {

nd::NetworkShape rep_shape(std::size_t input_dim, const Architecture& arch) {
  nd::NetworkShape s;
  s.layer_sizes.push_back(input_dim);
  s.layer_sizes.insert(s.layer_sizes.end(), arch.rep_hidden.begin(), arch.rep_hidden.end());
  s.layer_sizes.push_back(arch.rep_dim);
  s.activation = arch.activation;
  s.output_mode = arch.cosine_output ? nd::OutputMode::cosine : nd::OutputMode::affine;
  s.activate_output = true;
  return s;
}

nd::NetworkShape head_shape(const Architecture& arch) {
  nd::NetworkShape s;
  s.layer_sizes.push_back(arch.rep_dim);
  s.layer_sizes.insert(s.layer_sizes.end(), arch.head_hidden.begin(), arch.head_hidden.end());
  s.layer_sizes.push_back(1);
  s.activation = arch.activation;
  return s;
}

}  // namespace

void RepresentationModel::validate() const {
  rep.validate();
  head0.validate();
  head1.validate();
  if (head0.input_dim() != rep.output_dim() || head1.input_dim() != rep.output_dim()) {
    throw InvalidInput("outcome heads must take the representation dimension as input");
  }
  if (head0.output_dim() != 1 || head1.output_dim() != 1) throw InvalidInput("outcome heads must be scalar");
  if (!(alpha >= 0.0) || !(lambda >= 0.0)) throw InvalidInput("alpha and lambda must be non-negative");
}

RepresentationModel make_model(std::size_t input_dim, const Architecture& arch, double alpha, double lambda,
                               std::mt19937_64& rng) {
  RepresentationModel m;
  m.rep = nd::make_network(rep_shape(input_dim, arch), rng);
  m.head0 = nd::make_network(head_shape(arch), rng);
  m.head1 = nd::make_network(head_shape(arch), rng);
  m.alpha = alpha;
  m.lambda = lambda;
  m.validate();
  return m;
}

void UnitData::validate() const {
  if (X.rows() != y.size() || t.size() != y.size()) throw InvalidInput("unit data: X, t and y lengths differ");
  if (!ids.empty() && ids.size() != y.size()) throw InvalidInput("unit data: id count differs from unit count");
  for (int v : t)
    if (v != 0 && v != 1) throw InvalidInput("unit data: treatment must be 0 or 1");
}

UnitData UnitData::subset(std::span<const std::size_t> idx) const {
  UnitData d;
  d.X = X.select_rows(idx);
  d.source_id = source_id;
  for (std::size_t i : idx) {
    d.t.push_back(t[i]);
    d.y.push_back(y[i]);
    if (!ids.empty()) d.ids.push_back(ids[i]);
  }
  return d;
}

UnitData UnitData::from(const synth::ObservationalDataset& data, std::span<const std::size_t> idx) {
  UnitData d;
  d.X = data.X.select_rows(idx);
  d.source_id = data.source_id;
  for (std::size_t i : idx) {
    d.t.push_back(data.T[i]);
    d.y.push_back(data.Y[i]);
    d.ids.push_back(static_cast<std::int64_t>(data.source_id) * 1'000'000'000LL + static_cast<std::int64_t>(i));
  }
  return d;
}

UnitData concat(const UnitData& a, const UnitData& b) {
  UnitData d;
  d.X = vstack(a.X, b.X);
  d.t = a.t;
  d.t.insert(d.t.end(), b.t.begin(), b.t.end());
  d.y = a.y;
  d.y.insert(d.y.end(), b.y.begin(), b.y.end());
  d.ids = a.ids;
  d.ids.insert(d.ids.end(), b.ids.begin(), b.ids.end());
  d.source_id = b.source_id;
  return d;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw InvalidInput("train: epochs must be at least 1");
  if (batch_size < 2) throw InvalidInput("train: batch_size must be at least 2");
  if (!(learning_rate > 0.0)) throw InvalidInput("train: learning_rate must be positive");
  if (patience < 1) throw InvalidInput("train: patience must be at least 1");
  if (memory_batch < 1) throw InvalidInput("train: memory_batch must be at least 1");
  ipm.validate();
}

ModelVars bind_model(nd::Tape& tape, RepresentationModel& model, nd::Binding& trainable) {
  ModelVars v;
  v.rep = trainable.bind(tape, model.rep, "rep");
  v.head0 = trainable.bind(tape, model.head0, "head0");
  v.head1 = trainable.bind(tape, model.head1, "head1");
  return v;
}

ModelVars bind_frozen(nd::Tape& tape, const RepresentationModel& model) {
  return ModelVars{nd::bind(tape, model.rep, false), nd::bind(tape, model.head0, false),
                   nd::bind(tape, model.head1, false)};
}

Matrix represent(const RepresentationModel& model, const Matrix& X) { return nd::forward(model.rep, X); }

double elastic_net_penalty(const nd::DenseNetwork& rep) {
  double s = 0.0;
  for (const Matrix& w : rep.weights)
    for (double v : w.values()) s += v * v + std::fabs(v);
  return s;
}

double elastic_net_penalty(const RepresentationModel& model) { return elastic_net_penalty(model.rep); }

nd::Var elastic_net(const nd::NetworkVars& rep) {
  nd::Var total;
  for (const nd::Var& w : rep.weights) {
    nd::Var term = nd::add(nd::sum(nd::square(w)), nd::sum(nd::abs(w)));
    total = total.valid() ? nd::add(total, term) : term;
  }
  return total;
}

void split_groups(std::span<const int> t, std::vector<std::size_t>& treated, std::vector<std::size_t>& control) {
  treated.clear();
  control.clear();
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i] == 1) treated.push_back(i);
    else if (t[i] == 0) control.push_back(i);
    else throw InvalidInput("treatment values must be 0 or 1, got " + std::to_string(t[i]));
  }
}

nd::Var predict_outcome(const RepresentationModel& model, const ModelVars& vars, nd::Var R, std::span<const int> t) {
  if (R.rows() != t.size()) throw InvalidInput("predict_outcome: representation rows and treatments differ");
  std::vector<std::size_t> treated, control;
  split_groups(t, treated, control);
  if (treated.empty()) return nd::forward(model.head0, vars.head0, R);
  if (control.empty()) return nd::forward(model.head1, vars.head1, R);
  nd::Var out0 = nd::forward(model.head0, vars.head0, nd::gather_rows(R, control));
  nd::Var out1 = nd::forward(model.head1, vars.head1, nd::gather_rows(R, treated));
  return nd::merge_rows(out0, control, out1, treated, t.size());
}

std::vector<double> predict_outcome(const RepresentationModel& model, const Matrix& R, std::span<const int> t) {
  nd::Tape tape;
  const ModelVars vars = bind_frozen(tape, model);
  return predict_outcome(model, vars, tape.constant(R), t).value().values();
}

double factual_loss(std::span<const double> predicted, std::span<const double> observed) {
  if (predicted.size() != observed.size()) throw InvalidInput("factual_loss: length mismatch");
  if (predicted.empty()) throw InvalidInput("factual_loss: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const double d = predicted[i] - observed[i];
    s += d * d;
  }
  return s / static_cast<double>(predicted.size());
}

nd::Var factual_loss(nd::Var predicted, std::span<const double> observed) {
  if (predicted.rows() != observed.size() || predicted.cols() != 1) {
    throw InvalidInput("factual_loss: prediction shape " + predicted.value().shape_string() + " vs " +
                       std::to_string(observed.size()) + " outcomes");
  }
  if (observed.empty()) throw InvalidInput("factual_loss: empty input");
  nd::Var y = predicted.tape()->constant(Matrix::column(observed));
  return nd::mean(nd::square(nd::sub(predicted, y)));
}

ObjectiveTerms baseline_objective(nd::Tape& tape, const RepresentationModel& model, const ModelVars& vars,
                                  const UnitData& batch, const balance::IPMConfig& ipm) {
  std::vector<std::size_t> treated, control;
  split_groups(batch.t, treated, control);
  if (treated.empty() || control.empty()) {
    throw SingleGroupBatch("baseline_objective: batch needs treated and control units; re-draw the batch");
  }
  ObjectiveTerms terms;
  nd::Var R = nd::forward(model.rep, vars.rep, tape.constant(batch.X));
  terms.factual = factual_loss(predict_outcome(model, vars, R, batch.t), batch.y);
  terms.wass = balance::wasserstein_ipm(nd::gather_rows(R, treated), nd::gather_rows(R, control), ipm, &terms.ipm);
  terms.elastic = elastic_net(vars.rep);
  terms.total = nd::add(nd::add(terms.factual, nd::scale(terms.wass, model.alpha)),
                        nd::scale(terms.elastic, model.lambda));
  return terms;
}

std::vector<std::size_t> ensure_mixed_batch(std::vector<std::size_t> batch, std::span<const int> t,
                                            std::size_t population, int max_redraws, std::mt19937_64& rng) {
  auto mixed = [&](const std::vector<std::size_t>& b) {
    bool has0 = false, has1 = false;
    for (std::size_t i : b) (t[i] == 1 ? has1 : has0) = true;
    return has0 && has1;
  };
  if (mixed(batch)) return batch;
  std::vector<std::size_t> all(population);
  std::iota(all.begin(), all.end(), 0);
  const std::size_t size = std::max<std::size_t>(batch.size(), 2);
  for (int r = 0; r < max_redraws; ++r) {
    std::vector<std::size_t> draw;
    std::sample(all.begin(), all.end(), std::back_inserter(draw), std::min(size, population), rng);
    if (mixed(draw)) return draw;
  }
  return {};
}

double validation_mse(const RepresentationModel& model, const UnitData& data) {
  if (data.size() == 0) return 0.0;
  return factual_loss(predict_outcome(model, represent(model, data.X), data.t), data.y);
}

TrainReport fit_baseline(RepresentationModel& model, const UnitData& train, const UnitData& validation,
                         const TrainConfig& cfg) {
  cfg.validate();
  model.validate();
  train.validate();
  validation.validate();
  if (train.X.cols() != model.input_dim()) throw InvalidInput("fit_baseline: covariate dimension mismatch");
  TrainReport report;
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);

  nd::ParameterList params;
  params.add("rep", model.rep);
  params.add("head0", model.head0);
  params.add("head1", model.head1);
  nd::AdamState adam = nd::AdamState::for_parameters(params, cfg.learning_rate);

  RepresentationModel best = model;
  double best_val = validation.size() > 0 ? validation_mse(model, validation) : INFINITY;
  report.best_epoch = 0;
  report.best_val_mse = best_val;
  int since_best = 0;

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      if (end - start < 2) continue;
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(end));
      idx = ensure_mixed_batch(std::move(idx), train.t, train.size(), cfg.max_redraws, rng);
      if (idx.empty()) continue;
      const UnitData batch = train.subset(idx);

      nd::Tape tape;
      nd::Binding binding;
      const ModelVars vars = bind_model(tape, model, binding);
      const ObjectiveTerms terms = baseline_objective(tape, model, vars, batch, cfg.ipm);
      const double loss = terms.total.scalar();
      if (!std::isfinite(loss)) {
        throw DivergenceError("fit_baseline: objective became non-finite (factual " +
                                  std::to_string(terms.factual.scalar()) + ", wass " +
                                  std::to_string(terms.wass.scalar()) + ")",
                              epoch, report.steps);
      }
      if (!terms.ipm.converged) ++report.non_converged_ipm;
      const nd::GradientReport grads = nd::backward(tape, terms.total, binding);
      nd::adam_update(binding.parameters(), grads, adam);
      loss_sum += loss;
      ++batches;
      ++report.steps;
    }
    report.epoch_loss.push_back(batches > 0 ? loss_sum / batches : 0.0);
    const double val = validation.size() > 0 ? validation_mse(model, validation) : report.epoch_loss.back();
    report.epoch_val_mse.push_back(val);
    if (val < best_val) {
      best_val = val;
      best = model;
      report.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  report.best_val_mse = best_val;
  model = std::move(best);
  return report;
}

RepresentationModel train_baseline(const UnitData& train, const UnitData& validation, const TrainConfig& cfg,
                                   const Architecture& arch, double alpha, double lambda, TrainReport* report) {
  std::mt19937_64 init_rng(cfg.seed);
  RepresentationModel model = make_model(train.X.cols(), arch, alpha, lambda, init_rng);
  TrainReport r = fit_baseline(model, train, validation, cfg);
  if (report) *report = std::move(r);
  return model;
}

EffectEstimate estimate_effects(const RepresentationModel& model, const Matrix& X) {
  const Matrix R = represent(model, X);
  const Matrix y1 = nd::forward(model.head1, R);
  const Matrix y0 = nd::forward(model.head0, R);
  EffectEstimate e;
  e.ite.resize(X.rows());
  for (std::size_t i = 0; i < X.rows(); ++i) e.ite[i] = y1(i, 0) - y0(i, 0);
  e.ate = e.ite.empty() ? 0.0 : std::accumulate(e.ite.begin(), e.ite.end(), 0.0) / static_cast<double>(e.ite.size());
  return e;
}

}  // namespace cerl::model
