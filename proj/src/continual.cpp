#include "cerl/continual.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace cerl::continual {

void ContinualHyper::validate() const {
  for (double v : {alpha, lambda, beta, delta}) {
    if (!std::isfinite(v) || v < 0.0) throw InvalidInput("continual hyper-parameters must be finite and non-negative");
  }
}

TransformFunction make_transform(std::size_t input_dim, std::size_t output_dim, const model::Architecture& arch,
                                 std::mt19937_64& rng) {
  nd::NetworkShape s;
  s.layer_sizes.push_back(input_dim);
  s.layer_sizes.insert(s.layer_sizes.end(), arch.transform_hidden.begin(), arch.transform_hidden.end());
  s.layer_sizes.push_back(output_dim);
  s.activation = arch.activation;
  s.output_mode = arch.cosine_output ? nd::OutputMode::cosine : nd::OutputMode::affine;
  s.activate_output = true;
  return TransformFunction{nd::make_network(s, rng)};
}

double cosine_gap(const Matrix& a, const Matrix& b) {
  nd::Tape tape;
  return cosine_gap(tape.constant(a), tape.constant(b)).scalar();
}

nd::Var cosine_gap(nd::Var a, nd::Var b) {
  if (a.rows() == 0) throw InvalidInput("cosine_gap: empty input");
  nd::Var cos = nd::row_cosine(a, b);
  Matrix ones(cos.rows(), 1, 1.0);
  return nd::mean(nd::sub(a.tape()->constant(std::move(ones)), cos));
}

double distill_loss(const model::RepresentationModel& old_model, const model::RepresentationModel& new_model,
                    const Matrix& X_new) {
  return cosine_gap(model::represent(old_model, X_new), model::represent(new_model, X_new));
}

double transform_loss(const TransformFunction& phi, const model::RepresentationModel& old_model,
                      const model::RepresentationModel& new_model, const Matrix& X_new) {
  if (phi.input_dim() != old_model.rep_dim() || phi.output_dim() != new_model.rep_dim()) {
    throw InvalidInput("transform_loss: phi does not map the old representation space to the new one");
  }
  return cosine_gap(phi.apply(model::represent(old_model, X_new)), model::represent(new_model, X_new));
}

nd::Var global_factual_loss(const model::RepresentationModel& model, const model::ModelVars& vars,
                            nd::Var memory_reps, std::span<const double> memory_y, std::span<const int> memory_t,
                            nd::Var new_reps, std::span<const double> new_y, std::span<const int> new_t) {
  if (memory_reps.rows() == 0 || memory_y.empty()) {
    throw InvalidInput("global_factual_loss: memory is empty; train the first stage with the baseline objective");
  }
  nd::Var mem = model::factual_loss(model::predict_outcome(model, vars, memory_reps, memory_t), memory_y);
  nd::Var cur = model::factual_loss(model::predict_outcome(model, vars, new_reps, new_t), new_y);
  return nd::add(mem, cur);
}

ContinualTerms continual_objective(nd::Tape& tape, const model::RepresentationModel& model,
                                   const model::ModelVars& vars, const TransformFunction* phi,
                                   const nd::NetworkVars* phi_vars, const ContinualBatch& batch,
                                   const ContinualHyper& hyper, const balance::IPMConfig& ipm,
                                   const ContinualOptions& options) {
  const bool transform = options.use_transform;
  if (transform && (phi == nullptr || phi_vars == nullptr)) {
    throw InvalidInput("continual_objective: the transform is enabled but phi is missing");
  }
  ContinualTerms terms;
  nd::Var R = nd::forward(model.rep, vars.rep, tape.constant(batch.batch.X));
  nd::Var pooled = R;
  std::vector<int> pooled_t = batch.batch.t;
  if (transform) {
    nd::Var P = nd::forward(phi->net, *phi_vars, tape.constant(batch.memory_reps));
    nd::Var P_fit = options.phi_outcome_gradient ? P : nd::detach(P);
    terms.global_factual =
        global_factual_loss(model, vars, P_fit, batch.memory_y, batch.memory_t, R, batch.batch.y, batch.batch.t);
    pooled = nd::concat_rows(P, R);
    pooled_t.insert(pooled_t.begin(), batch.memory_t.begin(), batch.memory_t.end());
  } else {
    terms.global_factual = model::factual_loss(model::predict_outcome(model, vars, R, batch.batch.t), batch.batch.y);
  }
  std::vector<std::size_t> treated, control;
  model::split_groups(pooled_t, treated, control);
  if (treated.empty() || control.empty()) {
    throw model::SingleGroupBatch("continual_objective: pooled batch needs treated and control units; re-draw");
  }
  terms.wass = balance::wasserstein_ipm(nd::gather_rows(pooled, treated), nd::gather_rows(pooled, control), ipm,
                                        &terms.ipm);
  terms.elastic = model::elastic_net(vars.rep);
  terms.total = nd::add(nd::add(terms.global_factual, nd::scale(terms.wass, hyper.alpha)),
                        nd::scale(terms.elastic, hyper.lambda));
  if (batch.old_reps.rows() > 0) {
    nd::Var old = tape.constant(batch.old_reps);
    terms.distill = cosine_gap(old, R);
    terms.total = nd::add(terms.total, nd::scale(terms.distill, hyper.beta));
    if (transform) {
      nd::Var mapped = nd::forward(phi->net, *phi_vars, old);
      terms.transform = cosine_gap(mapped, options.stop_gradient_transform ? nd::detach(R) : R);
      terms.total = nd::add(terms.total, nd::scale(terms.transform, hyper.delta));
    }
  }
  return terms;
}

namespace {

bool has_both(std::span<const int> a, std::span<const int> b) {
  bool g0 = false, g1 = false;
  for (auto s : {a, b})
    for (int v : s) (v == 1 ? g1 : g0) = true;
  return g0 && g1;
}

// Squared-error fit of phi(r) = r over the old space.
void fit_identity(TransformFunction& phi, const Matrix& reps, int epochs, const model::TrainConfig& cfg,
                  std::mt19937_64& rng) {
  if (phi.input_dim() != phi.output_dim()) return;
  nd::ParameterList params;
  params.add("phi", phi.net);
  nd::AdamState adam = nd::AdamState::for_parameters(params, cfg.learning_rate);
  std::vector<std::size_t> order(reps.rows());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::span<const std::size_t> idx(order.data() + start, std::min(cfg.batch_size, order.size() - start));
      const Matrix r = reps.select_rows(idx);
      nd::Tape tape;
      nd::Binding binding;
      const nd::NetworkVars vars = binding.bind(tape, phi.net, "phi");
      nd::Var loss = nd::mean(nd::square(nd::sub(nd::forward(phi.net, vars, tape.constant(r)), tape.constant(r))));
      nd::adam_update(binding.parameters(), nd::backward(tape, loss, binding), adam);
    }
  }
}

// phi alone on L_FT against the fixed current representations.
void warm_up_transform(TransformFunction& phi, const Matrix& old_reps, const Matrix& target, int epochs,
                       const model::TrainConfig& cfg, std::mt19937_64& rng) {
  nd::ParameterList params;
  params.add("phi", phi.net);
  nd::AdamState adam = nd::AdamState::for_parameters(params, cfg.learning_rate);
  std::vector<std::size_t> order(old_reps.rows());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::span<const std::size_t> idx(order.data() + start, std::min(cfg.batch_size, order.size() - start));
      nd::Tape tape;
      nd::Binding binding;
      const nd::NetworkVars vars = binding.bind(tape, phi.net, "phi");
      nd::Var loss = cosine_gap(nd::forward(phi.net, vars, tape.constant(old_reps.select_rows(idx))),
                                tape.constant(target.select_rows(idx)));
      nd::adam_update(binding.parameters(), nd::backward(tape, loss, binding), adam);
    }
  }
}

}  // namespace

ContinualResult train_continual(const model::RepresentationModel& prev_model, const memory::MemorySet* memory,
                                const model::UnitData& train, const model::UnitData& validation,
                                const model::TrainConfig& cfg, const ContinualHyper& hyper,
                                const ContinualOptions& options, const model::Architecture& arch) {
  cfg.validate();
  hyper.validate();
  prev_model.validate();
  train.validate();
  validation.validate();
  if (train.X.cols() != prev_model.input_dim()) throw InvalidInput("train_continual: covariate dimension mismatch");
  const bool transform = options.use_transform;
  if (transform && (memory == nullptr || memory->size() == 0)) {
    throw InvalidInput("train_continual: memory is empty; train the first stage with the baseline objective");
  }
  if (transform && memory->dim() != prev_model.rep_dim()) {
    throw InvalidInput("train_continual: memory dimension differs from the previous representation");
  }

  std::mt19937_64 init_rng(cfg.seed);
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
  ContinualResult result;
  model::RepresentationModel& m = result.model;
  m = model::make_model(train.X.cols(), arch, hyper.alpha, hyper.lambda, init_rng);
  if (m.rep.layer_sizes == prev_model.rep.layer_sizes && m.rep.output_mode == prev_model.rep.output_mode) {
    m.rep = prev_model.rep;
  }
  if (options.warm_start_heads && m.head0.layer_sizes == prev_model.head0.layer_sizes) {
    m.head0 = prev_model.head0;
    m.head1 = prev_model.head1;
  }
  TransformFunction phi;
  if (transform) phi = make_transform(prev_model.rep_dim(), m.rep_dim(), arch, init_rng);

  const Matrix old_train = model::represent(prev_model, train.X);
  if (transform && options.identity_init_epochs > 0) {
    fit_identity(phi, vstack(memory->representations, old_train), options.identity_init_epochs, cfg, rng);
  }
  if (transform && options.phi_warmup_epochs > 0) {
    warm_up_transform(phi, old_train, model::represent(m, train.X), options.phi_warmup_epochs, cfg, rng);
  }

  nd::ParameterList params;
  params.add("rep", m.rep);
  params.add("head0", m.head0);
  params.add("head1", m.head1);
  if (transform) params.add("phi", phi.net);
  nd::AdamState adam = nd::AdamState::for_parameters(params, cfg.learning_rate);

  // Stored exemplars are training data, so only held-out new units score a model.
  auto score = [&]() { return validation.size() > 0 ? model::validation_mse(m, validation) : 0.0; };

  model::TrainReport& report = result.report;
  model::RepresentationModel best = m;
  TransformFunction best_phi = phi;
  double best_val = score();
  report.best_epoch = 0;
  int since_best = 0;

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::size_t> mem_all;
  if (transform) {
    mem_all.resize(memory->size());
    std::iota(mem_all.begin(), mem_all.end(), 0);
  }
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      if (end - start < 2) continue;
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(end));
      ContinualBatch b;
      if (transform) {
        std::vector<std::size_t> mem_idx;
        std::sample(mem_all.begin(), mem_all.end(), std::back_inserter(mem_idx),
                    std::min(cfg.memory_batch, mem_all.size()), rng);
        b.memory_reps = memory->representations.select_rows(mem_idx);
        for (std::size_t k : mem_idx) {
          b.memory_y.push_back(memory->y[k]);
          b.memory_t.push_back(memory->t[k]);
        }
      }
      std::vector<int> batch_t;
      for (std::size_t i : idx) batch_t.push_back(train.t[i]);
      if (!has_both(batch_t, b.memory_t)) {
        idx = model::ensure_mixed_batch(std::move(idx), train.t, train.size(), cfg.max_redraws, rng);
        if (idx.empty()) continue;
      }
      b.batch = train.subset(idx);
      b.old_reps = old_train.select_rows(idx);

      nd::Tape tape;
      nd::Binding binding;
      const model::ModelVars vars = model::bind_model(tape, m, binding);
      nd::NetworkVars phi_vars;
      if (transform) phi_vars = binding.bind(tape, phi.net, "phi");
      const ContinualTerms terms = continual_objective(tape, m, vars, transform ? &phi : nullptr,
                                                       transform ? &phi_vars : nullptr, b, hyper, cfg.ipm, options);
      const double loss = terms.total.scalar();
      if (!std::isfinite(loss)) {
        throw DivergenceError("train_continual: objective became non-finite (global factual " +
                                  std::to_string(terms.global_factual.scalar()) + ", wass " +
                                  std::to_string(terms.wass.scalar()) + ")",
                              epoch, report.steps);
      }
      if (!terms.ipm.converged) ++report.non_converged_ipm;
      nd::adam_update(binding.parameters(), nd::backward(tape, terms.total, binding), adam);
      loss_sum += loss;
      ++batches;
      ++report.steps;
    }
    report.epoch_loss.push_back(batches > 0 ? loss_sum / batches : 0.0);
    const double val = score();
    report.epoch_val_mse.push_back(val);
    if (val < best_val) {
      best_val = val;
      best = m;
      best_phi = phi;
      report.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  report.best_val_mse = best_val;
  m = std::move(best);
  if (transform) result.phi = std::move(best_phi);
  return result;
}

memory::MemorySet update_memory(const memory::MemorySet& memory, const TransformFunction& phi,
                                const model::RepresentationModel& new_model, const model::UnitData& data,
                                std::size_t capacity, memory::Selection mode, std::uint64_t seed) {
  memory.validate();
  data.validate();
  if (capacity < 2) throw InvalidInput("update_memory: capacity must be at least 2");
  if (phi.input_dim() != memory.dim() || phi.output_dim() != new_model.rep_dim()) {
    throw InvalidInput("update_memory: phi does not map the stored space to the new one");
  }
  const Matrix reps = vstack(phi.apply(memory.representations), model::represent(new_model, data.X));
  std::vector<double> y = memory.y;
  y.insert(y.end(), data.y.begin(), data.y.end());
  std::vector<int> t = memory.t;
  t.insert(t.end(), data.t.begin(), data.t.end());
  std::vector<int> tags = memory.source_tags;
  tags.insert(tags.end(), data.size(), data.source_id);
  std::vector<std::int64_t> ids = memory.unit_ids;
  if (data.ids.size() == data.size()) {
    ids.insert(ids.end(), data.ids.begin(), data.ids.end());
  } else {
    for (std::size_t i = 0; i < data.size(); ++i)
      ids.push_back(static_cast<std::int64_t>(data.source_id) * 1'000'000'000LL + static_cast<std::int64_t>(i));
  }
  return memory::select_exemplars(reps, y, t, tags, ids, capacity, mode, seed);
}

}  // namespace cerl::continual
