#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "cerl/model.hpp"
#include "gradcheck.hpp"

using namespace cerl;
using namespace cerl::model;

namespace {

Architecture small_arch() {
  Architecture a;
  a.rep_hidden = {8};
  a.rep_dim = 6;
  a.head_hidden = {5};
  return a;
}

RepresentationModel small_model(std::uint64_t seed, std::size_t input_dim = 4) {
  std::mt19937_64 rng(seed);
  return make_model(input_dim, small_arch(), 1.0, 1e-3, rng);
}

UnitData random_batch(std::size_t n, std::size_t dim, std::uint64_t seed) {
  UnitData u;
  u.X = testkit::random_normal(n, dim, seed);
  std::mt19937_64 rng(seed + 100);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    u.t.push_back(static_cast<int>(i % 2));
    u.y.push_back(nd(rng));
    u.ids.push_back(static_cast<std::int64_t>(i));
  }
  return u;
}

void zero_network(nd::DenseNetwork& net, double last_bias) {
  for (auto& w : net.weights) w.fill(0.0);
  for (auto& b : net.biases) b.fill(0.0);
  net.biases.back().fill(last_bias);
}

balance::IPMConfig fixed_ipm() {
  balance::IPMConfig c;
  c.epsilon = 0.2;
  c.relative_to_median = false;
  c.tolerance = 0.0;
  c.max_iterations = 50;
  return c;
}

}  // namespace

TEST(Represent, DuplicateRowsGiveIdenticalRepresentations) {
  const auto m = small_model(1);
  Matrix x = testkit::random_normal(3, 4, 2);
  for (std::size_t c = 0; c < 4; ++c) x(2, c) = x(0, c);
  const Matrix r = represent(m, x);
  for (std::size_t c = 0; c < r.cols(); ++c) EXPECT_EQ(r(0, c), r(2, c));
}

TEST(Represent, CosineBoundOnRandomInputs) {
  const auto m = small_model(3);
  const Matrix x = testkit::random_normal(1000, 4, 4, 0.0, 30.0);
  const Matrix pre = nd::output_preactivations(m.rep, x);
  for (double v : pre.values()) EXPECT_LE(std::abs(v), 1.0);
  // ELU maps [-1, 1] into [elu(-1), 1].
  for (double v : represent(m, x).values()) {
    EXPECT_GE(v, std::expm1(-1.0));
    EXPECT_LE(v, 1.0);
  }
}

TEST(Represent, MatchesLayerByLayerComposition) {
  const auto m = small_model(5);
  const Matrix x = testkit::random_normal(7, 4, 6);
  nd::DenseNetwork first;
  first.layer_sizes = {4, 8};
  first.weights = {m.rep.weights[0]};
  first.biases = {m.rep.biases[0]};
  first.activation = m.rep.activation;
  first.activate_output = true;
  nd::DenseNetwork last;
  last.layer_sizes = {8, 6};
  last.weights = {m.rep.weights[1]};
  last.biases = {m.rep.biases[1]};
  last.activation = m.rep.activation;
  last.output_mode = nd::OutputMode::cosine;
  last.activate_output = true;
  const Matrix expect = nd::forward(last, nd::forward(first, x));
  const Matrix got = represent(m, x);
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], expect[i], 1e-14);
}

TEST(Represent, DimensionMismatchRejected) {
  const auto m = small_model(1);
  EXPECT_THROW(represent(m, Matrix(2, 5)), InvalidInput);
}

TEST(ElasticNet, ZeroWeightsGiveZero) {
  auto m = small_model(1);
  for (auto& w : m.rep.weights) w.fill(0.0);
  EXPECT_EQ(elastic_net_penalty(m), 0.0);
}

TEST(ElasticNet, SingleMatrixByHand) {
  nd::DenseNetwork net;
  net.layer_sizes = {2, 1};
  net.weights = {Matrix{{1.0, -2.0}}};
  net.biases = {Matrix{{5.0}}};  // biases are excluded
  EXPECT_DOUBLE_EQ(elastic_net_penalty(net), 8.0);
}

TEST(ElasticNet, ShrinkingAnyWeightLowersPenalty) {
  auto m = small_model(2);
  const double before = elastic_net_penalty(m);
  for (std::size_t k = 0; k < m.rep.weights.size(); ++k) {
    auto copy = m;
    copy.rep.weights[k][3] *= 0.5;
    EXPECT_LT(elastic_net_penalty(copy), before);
  }
}

TEST(ElasticNet, ExcludesHeads) {
  auto m = small_model(2);
  const double before = elastic_net_penalty(m);
  m.head0.weights[0].fill(10.0);
  EXPECT_EQ(elastic_net_penalty(m), before);
}

TEST(Predict, ZeroWeightHeadsReturnBias) {
  auto m = small_model(4);
  zero_network(m.head0, 1.25);
  zero_network(m.head1, 1.25);
  const Matrix R = represent(m, testkit::random_normal(5, 4, 1));
  const std::vector<int> t{0, 1, 1, 0, 1};
  for (double v : predict_outcome(m, R, t)) EXPECT_DOUBLE_EQ(v, 1.25);
}

TEST(Predict, RoutesEachUnitToItsHead) {
  const auto m = small_model(6);
  const Matrix R = represent(m, testkit::random_normal(6, 4, 3));
  const std::vector<int> t{0, 1, 0, 1, 1, 0};
  const auto y = predict_outcome(m, R, t);
  const Matrix y0 = nd::forward(m.head0, R), y1 = nd::forward(m.head1, R);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(y[i], t[i] ? y1(i, 0) : y0(i, 0));
  // Fresh heads are distinct, so the same representation gets different predictions.
  EXPECT_NE(y0(0, 0), y1(0, 0));
}

TEST(Predict, PerturbingOneHeadLeavesOtherArmUnchanged) {
  auto m = small_model(7);
  const Matrix R = represent(m, testkit::random_normal(8, 4, 9));
  const std::vector<int> t{0, 1, 0, 1, 0, 1, 0, 1};
  const auto before = predict_outcome(m, R, t);
  for (auto& w : m.head1.weights) w[0] += 0.3;
  const auto after = predict_outcome(m, R, t);
  for (std::size_t i = 0; i < 8; ++i) {
    if (t[i] == 0) EXPECT_EQ(before[i], after[i]);
    else EXPECT_NE(before[i], after[i]);
  }
}

TEST(Predict, InvalidTreatmentRejected) {
  const auto m = small_model(1);
  const Matrix R = represent(m, testkit::random_normal(2, 4, 1));
  const std::vector<int> t{0, 2};
  EXPECT_THROW(predict_outcome(m, R, t), InvalidInput);
}

TEST(FactualLoss, Examples) {
  const std::vector<double> y{1.0, -2.0, 0.5};
  EXPECT_EQ(factual_loss(y, y), 0.0);
  const std::vector<double> shifted{2.0, -1.0, 1.5};
  EXPECT_DOUBLE_EQ(factual_loss(shifted, y), 1.0);
  const std::vector<double> p{0.0, 2.0}, o{1.0, 0.0};
  EXPECT_DOUBLE_EQ(factual_loss(p, o), 2.5);
  EXPECT_THROW(factual_loss(std::vector<double>{}, std::vector<double>{}), InvalidInput);
}

TEST(BaselineObjective, ZeroWeightsReduceToFactualLoss) {
  auto m = small_model(8);
  m.alpha = 0.0;
  m.lambda = 0.0;
  const auto batch = random_batch(10, 4, 3);
  nd::Tape tape;
  nd::Binding b;
  const auto vars = bind_model(tape, m, b);
  const auto terms = baseline_objective(tape, m, vars, batch, fixed_ipm());
  const double direct = factual_loss(predict_outcome(m, represent(m, batch.X), batch.t), batch.y);
  EXPECT_EQ(terms.total.scalar(), terms.factual.scalar());
  EXPECT_NEAR(terms.total.scalar(), direct, 1e-15);
}

TEST(BaselineObjective, DecompositionAndLinearityInLambda) {
  auto m = small_model(9);
  const auto batch = random_batch(12, 4, 5);
  const auto eval = [&](double lambda) {
    m.lambda = lambda;
    nd::Tape tape;
    nd::Binding b;
    const auto vars = bind_model(tape, m, b);
    const auto t = baseline_objective(tape, m, vars, batch, fixed_ipm());
    EXPECT_NEAR(t.total.scalar() - m.alpha * t.wass.scalar() - lambda * t.elastic.scalar(), t.factual.scalar(),
                1e-14);
    EXPECT_NEAR(t.elastic.scalar(), elastic_net_penalty(m), 1e-12);
    return std::make_pair(t.total.scalar(), t.elastic.scalar());
  };
  const auto a = eval(0.1);
  const auto b = eval(0.6);
  EXPECT_NEAR(b.first - a.first, 0.5 * a.second, 1e-12);
}

TEST(BaselineObjective, SingleGroupBatchAsksForRedraw) {
  auto m = small_model(1);
  auto batch = random_batch(6, 4, 1);
  std::fill(batch.t.begin(), batch.t.end(), 1);
  nd::Tape tape;
  nd::Binding b;
  const auto vars = bind_model(tape, m, b);
  EXPECT_THROW(baseline_objective(tape, m, vars, batch, fixed_ipm()), SingleGroupBatch);
}

TEST(BaselineObjective, GradientMatchesFiniteDifferences) {
  auto m = small_model(10);
  const auto batch = random_batch(10, 4, 7);
  const auto r = testkit::check_gradients([&](nd::Tape& tape, nd::Binding& b) {
    const auto vars = bind_model(tape, m, b);
    return baseline_objective(tape, m, vars, batch, fixed_ipm()).total;
  });
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(Train, LinearNoiselessToyFitsWell) {
  // y = 1.0 * t + 0.5 + 0.3 x0 - 0.2 x1: constant effect, linear baseline.
  UnitData all = random_batch(500, 5, 11);
  std::mt19937_64 rng(12);
  std::bernoulli_distribution coin(0.5);
  for (std::size_t i = 0; i < 500; ++i) {
    all.t[i] = coin(rng) ? 1 : 0;
    all.y[i] = 1.0 * all.t[i] + 0.5 + 0.3 * all.X(i, 0) - 0.2 * all.X(i, 1);
  }
  std::vector<std::size_t> tr(400), va(100);
  std::iota(tr.begin(), tr.end(), 0);
  std::iota(va.begin(), va.end(), 400);
  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.patience = 200;
  cfg.learning_rate = 3e-3;
  cfg.seed = 4;
  TrainReport report;
  const auto m = train_baseline(all.subset(tr), all.subset(va), cfg, small_arch(), 0.1, 1e-4, &report);
  EXPECT_LT(report.best_val_mse, 0.05);
  EXPECT_LE(report.epoch_loss.back(), report.epoch_loss.front());
  EXPECT_NEAR(validation_mse(m, all.subset(va)), report.best_val_mse, 1e-12);
}

TEST(Train, SameSeedGivesIdenticalParameters) {
  const auto data = random_batch(200, 4, 13);
  std::vector<std::size_t> tr(150), va(50);
  std::iota(tr.begin(), tr.end(), 0);
  std::iota(va.begin(), va.end(), 150);
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.seed = 21;
  const auto a = train_baseline(data.subset(tr), data.subset(va), cfg, small_arch(), 1.0, 1e-4);
  const auto b = train_baseline(data.subset(tr), data.subset(va), cfg, small_arch(), 1.0, 1e-4);
  EXPECT_EQ(a, b);
}

TEST(Train, DivergenceAbortsWithDiagnostics) {
  auto data = random_batch(60, 4, 2);
  data.y[3] = std::numeric_limits<double>::infinity();
  TrainConfig cfg;
  cfg.epochs = 2;
  auto m = small_model(1);
  const std::vector<std::size_t> va{0, 1, 2, 4, 5, 6};
  try {
    fit_baseline(m, data, data.subset(va), cfg);
    FAIL() << "expected DivergenceError";
  } catch (const DivergenceError& e) {
    EXPECT_EQ(e.epoch, 1);
    EXPECT_NE(std::string(e.what()).find("factual"), std::string::npos);
  }
}

TEST(Effects, IdenticalHeadsGiveZero) {
  auto m = small_model(14);
  m.head1 = m.head0;
  const auto e = estimate_effects(m, testkit::random_normal(9, 4, 1));
  for (double v : e.ite) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(e.ate, 0.0);
}

TEST(Effects, ConstantHeadsGiveDifference) {
  auto m = small_model(15);
  zero_network(m.head0, 0.75);
  zero_network(m.head1, 2.0);
  const auto e = estimate_effects(m, testkit::random_normal(9, 4, 2));
  for (double v : e.ite) EXPECT_DOUBLE_EQ(v, 1.25);
  EXPECT_DOUBLE_EQ(e.ate, 1.25);
}

TEST(Effects, AteIsMeanOfIte) {
  const auto m = small_model(16);
  const auto e = estimate_effects(m, testkit::random_normal(31, 4, 3));
  EXPECT_NEAR(e.ate, std::accumulate(e.ite.begin(), e.ite.end(), 0.0) / 31.0, 1e-15);
}

TEST(Invariants, ScaledIgnoredColumnLeavesPreactivationsUnchanged) {
  auto m = small_model(17);
  for (std::size_t r = 0; r < m.rep.weights[0].rows(); ++r) m.rep.weights[0](r, 2) = 0.0;
  Matrix x = testkit::random_normal(20, 4, 5);
  const Matrix before = nd::output_preactivations(m.rep, x);
  for (std::size_t i = 0; i < x.rows(); ++i) x(i, 2) *= 10.0;
  EXPECT_EQ(nd::output_preactivations(m.rep, x), before);
}

TEST(Invariants, HeadsAreDisjointAndShapesAgree) {
  const auto m = small_model(18);
  EXPECT_EQ(m.rep.output_dim(), m.head0.input_dim());
  EXPECT_EQ(m.rep.output_dim(), m.head1.input_dim());
  EXPECT_NE(m.head0.weights[0].data(), m.head1.weights[0].data());
  EXPECT_NE(m.head0, m.head1);
}
