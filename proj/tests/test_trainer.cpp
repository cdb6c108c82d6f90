#include <gtest/gtest.h>

#include <algorithm>
#include <numbers>

#include "spnpb/trainer.hpp"
#include "support/oracles.hpp"

using namespace spnpb;

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;

// s_{t+1} = 0.8 s_t + 0.3 u_t, no noise.
Trial linear_trial(int steps, std::uint64_t seed) {
  Rng rng(seed);
  Trial t;
  t.label = "linear";
  Vector s = Vector::Zero(2);
  for (int i = 0; i < steps; ++i) {
    const Vector u = oracle::random_vector(rng, 2, -1, 1);
    t.samples.push_back(TimedSample{s, u, i});
    s = 0.8 * s + 0.3 * u;
  }
  return t;
}

}  // namespace

TEST(Nll, ZeroResidualUnitVariance) {
  EXPECT_NEAR(nll_element(0.3, 1.0, 0.3), 0.5 * std::log(2.0 * std::numbers::pi), 1e-12);
  EXPECT_NEAR(nll_element(0.0, 1.0, 0.0), kHalfLog2Pi, 1e-12);
}

TEST(Nll, UnitResidual) { EXPECT_NEAR(nll_element(1.0, 1.0, 0.0), kHalfLog2Pi + 0.5, 1e-12); }

TEST(Nll, LogTermOnly) {
  const double e2 = std::exp(2.0);
  EXPECT_NEAR(nll_element(2.0, e2, 2.0), kHalfLog2Pi + 1.0, 1e-12);
}

TEST(Nll, RejectsNonPositiveVariance) {
  EXPECT_THROW(nll_element(0, 0, 0), ArgumentError);
  EXPECT_THROW(nll_element(0, -1, 0), ArgumentError);
}

TEST(Nll, AdjointsMatchFiniteDifferences) {
  Rng rng(1);
  for (int i = 0; i < 20; ++i) {
    const Vector target = oracle::random_vector(rng, 3);
    GaussianPrediction pred{oracle::random_vector(rng, 3), oracle::random_vector(rng, 3, 0.2, 3.0)};
    const GaussianNll g = gaussian_nll(pred, target);
    auto f_mean = [&](const Vector& m) { return gaussian_nll({m, pred.variance}, target).value; };
    auto f_var = [&](const Vector& v) { return gaussian_nll({pred.mean, v}, target).value; };
    EXPECT_LE(oracle::relative_error(g.d_mean, oracle::central_difference(f_mean, pred.mean)), 1e-6);
    EXPECT_LE(oracle::relative_error(g.d_variance, oracle::central_difference(f_var, pred.variance)), 1e-6);
  }
}

TEST(TrialNll, ZeroModelZeroTargets) {
  ModelParams m = ModelParams::zeros(ModelConfig{});
  Trial t;
  for (int i = 0; i < 11; ++i) t.samples.push_back(TimedSample{Vector::Zero(2), Vector::Ones(2), i});
  const double loss = trial_nll(m, Vector::Zero(2), t, m.norm);
  EXPECT_NEAR(loss, 10 * 2 * kHalfLog2Pi, 1e-10);
}

TEST(TrialNll, EqualsSumOfElementsWithMeasuredInputs) {
  ModelParams m = oracle::random_model(4);
  const Trial t = oracle::random_trial(8, 12);
  const Vector p = m.pb_table[0];
  double manual = 0.0;
  RecurrentState rs = RecurrentState::zeros();
  for (std::size_t i = 0; i + 1 < t.samples.size(); ++i) {
    const ForwardResult f = forward(m, rs, m.norm.normalize_state(t.samples[i].s),
                                    m.norm.normalize_command(t.samples[i].u), p);
    rs = f.next_state;
    const Vector target = m.norm.normalize_state(t.samples[i + 1].s);
    for (Eigen::Index d = 0; d < 2; ++d)
      manual += nll_element(f.prediction.mean[d], f.prediction.variance[d], target[d]);
  }
  EXPECT_NEAR(trial_nll(m, p, t, m.norm), manual, 1e-10);
  EXPECT_NEAR(trial_nll_with_grad(m, p, t, m.norm).value, manual, 1e-10);
}

TEST(TrialNll, NeedsTwoSamples) {
  ModelParams m = oracle::random_model(4);
  Trial t = oracle::random_trial(1, 1);
  EXPECT_THROW(trial_nll(m, Vector::Zero(2), t, m.norm), ArgumentError);
}

class TrialGradient : public ::testing::TestWithParam<int> {};

TEST_P(TrialGradient, PbAndSampledWeightsMatchFiniteDifferences) {
  const auto seed = static_cast<std::uint64_t>(GetParam());
  ModelParams m = oracle::random_model(seed);
  const Trial t = oracle::random_trial(6, derive_seed(seed, 3));
  const Vector p = m.pb_table[0];
  const TrialLoss loss = trial_nll_with_grad(m, p, t, m.norm);

  auto f_p = [&](const Vector& x) { return trial_nll(m, x, t, m.norm); };
  EXPECT_LE(oracle::relative_error(loss.pb_grad, oracle::central_difference(f_p, p)), 1e-4);

  const Vector w0 = m.flat_weights();
  Rng rng(derive_seed(seed, 4));
  std::vector<Eigen::Index> coords;
  for (int i = 0; i < 150; ++i)
    coords.push_back(static_cast<Eigen::Index>(rng.next_u64() % static_cast<std::uint64_t>(w0.size())));
  ModelParams probe = m;
  auto f_w = [&](const Vector& w) {
    probe.set_flat_weights(w);
    return trial_nll(probe, p, t, m.norm);
  };
  Vector analytic(static_cast<Eigen::Index>(coords.size()));
  for (std::size_t k = 0; k < coords.size(); ++k) analytic[static_cast<Eigen::Index>(k)] = loss.weight_grad[coords[k]];
  EXPECT_LE(oracle::relative_error(analytic, oracle::central_difference_at(f_w, w0, coords)), 1e-4);
}

INSTANTIATE_TEST_SUITE_P(Seeds, TrialGradient, ::testing::Range(0, 20));

TEST(TrialNll, OtherPbRowsDoNotMatter) {
  ModelParams m = oracle::random_model(8, 3);
  const Trial t = oracle::random_trial(10, 5);
  std::vector<Trial> trials{t, oracle::random_trial(10, 6), oracle::random_trial(10, 7)};
  const double before = trial_nll(m, m.pb_table[0], trials[0], m.norm);
  const double total_before = total_nll(m, trials);
  m.pb_table[1] += Vector::Constant(2, 3.0);
  m.pb_table[2] -= Vector::Constant(2, 3.0);
  EXPECT_EQ(trial_nll(m, m.pb_table[0], trials[0], m.norm), before);
  EXPECT_NE(total_nll(m, trials), total_before);
}

TEST(TotalNll, IsSumOfTrialLosses) {
  ModelParams m = oracle::random_model(2, 3);
  std::vector<Trial> trials{oracle::random_trial(9, 1), oracle::random_trial(12, 2), oracle::random_trial(5, 3)};
  double sum = 0.0;
  for (std::size_t k = 0; k < trials.size(); ++k) sum += trial_nll(m, m.pb_table[k], trials[k], m.norm);
  EXPECT_NEAR(total_nll(m, trials), sum, 1e-10);

  std::vector<Trial> reversed(trials.rbegin(), trials.rend());
  for (std::size_t k = 0; k < trials.size(); ++k)
    EXPECT_EQ(trial_nll(m, m.pb_table[k], trials[k], m.norm),
              trial_nll(m, m.pb_table[k], reversed[trials.size() - 1 - k], m.norm));
  m.pb_table.pop_back();
  EXPECT_THROW(total_nll(m, trials), ShapeError);
}

TEST(NormStats, SingleSampleFloorsStd) {
  Trial t;
  t.samples.push_back(TimedSample{Vector{{1.5, -2.0}}, Vector{{0.5, 0.25}}, 0});
  const NormStats st = compute_norm_stats({t});
  EXPECT_EQ(st.s_mean, (Vector{{1.5, -2.0}}));
  EXPECT_EQ(st.s_std, Vector::Constant(2, kMinStd));
}

TEST(NormStats, PopulationStd) {
  Trial t;
  t.samples.push_back(TimedSample{Vector{{0.0, 0.0}}, Vector{{0.0, 0.0}}, 0});
  t.samples.push_back(TimedSample{Vector{{2.0, 2.0}}, Vector{{2.0, 2.0}}, 1});
  const NormStats st = compute_norm_stats({t});
  EXPECT_EQ(st.s_mean, Vector::Ones(2));
  EXPECT_EQ(st.s_std, Vector::Ones(2));
  EXPECT_EQ(st.u_std, Vector::Ones(2));
}

TEST(NormStats, OrderInvariant) {
  std::vector<Trial> a{oracle::random_trial(7, 1), oracle::random_trial(9, 2), oracle::random_trial(4, 3)};
  std::vector<Trial> b{a[2], a[0], a[1]};
  const NormStats x = compute_norm_stats(a), y = compute_norm_stats(b);
  EXPECT_LT((x.s_mean - y.s_mean).norm(), 1e-12);
  EXPECT_LT((x.s_std - y.s_std).norm(), 1e-12);
  EXPECT_LT((x.u_mean - y.u_mean).norm(), 1e-12);
  EXPECT_LT((x.u_std - y.u_std).norm(), 1e-12);
}

TEST(NormStats, EmptyThrows) { EXPECT_THROW(compute_norm_stats({}), ArgumentError); }

TEST(Train, ConvergesOnLinearDynamics) {
  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.seed = 3;
  std::vector<double> losses;
  const std::vector<Trial> trials{linear_trial(50, 9)};
  const ModelParams m = train(trials, cfg, [&](const EpochReport& r) { losses.push_back(r.loss); });
  ASSERT_EQ(losses.size(), 200u);
  ASSERT_GT(losses.front(), 0.0);
  EXPECT_LT(total_nll(m, trials), 0.5 * losses.front());
}

TEST(Train, ConstantDataLossMostlyNonIncreasing) {
  Trial t;
  for (int i = 0; i < 30; ++i) t.samples.push_back(TimedSample{Vector{{0.5, -0.5}}, Vector{{1.0, 0.0}}, i});
  // Give the data a spread so normalization is not degenerate.
  t.samples[0].s = Vector{{0.0, 0.0}};
  TrainConfig cfg;
  cfg.epochs = 60;
  cfg.seed = 1;
  std::vector<double> losses;
  train({t}, cfg, [&](const EpochReport& r) { losses.push_back(r.loss); });
  for (std::size_t i = 1; i < losses.size(); ++i)
    EXPECT_LE(losses[i], losses[i - 1] + 0.05 * std::abs(losses[i - 1])) << "epoch " << i + 1;
}

TEST(Train, DeterministicAndKeepsLabels) {
  std::vector<Trial> trials{linear_trial(20, 1), linear_trial(20, 2)};
  trials[1].label = "second";
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.seed = 11;
  const ModelParams a = train(trials, cfg);
  const ModelParams b = train(trials, cfg);
  EXPECT_EQ(a.flat_weights(), b.flat_weights());
  EXPECT_EQ(a.pb_table, b.pb_table);
  EXPECT_EQ(a.pb_labels, (std::vector<std::string>{"linear", "second"}));
}

TEST(Train, RejectsBadInput) {
  TrainConfig cfg;
  EXPECT_THROW(train({}, cfg), ArgumentError);
  cfg.epochs = 0;
  EXPECT_THROW(train({linear_trial(5, 1)}, cfg), ArgumentError);
  TrainConfig ok;
  Trial bad = linear_trial(5, 1);
  bad.samples[2].tick = 0;
  EXPECT_THROW(train({bad}, ok), ArgumentError);
}

TEST(Train, LearningRateSchedule) {
  TrainConfig cfg;
  cfg.epochs = 11;
  EXPECT_DOUBLE_EQ(lr_scale(cfg, 1), 1.0);
  EXPECT_DOUBLE_EQ(lr_scale(cfg, 11), 1.0);
  cfg.final_lr_fraction = 0.1;
  EXPECT_DOUBLE_EQ(lr_scale(cfg, 1), 1.0);
  EXPECT_NEAR(lr_scale(cfg, 11), 0.1, 1e-15);
  EXPECT_NEAR(lr_scale(cfg, 6), 0.55, 1e-15);
}

TEST(Train, ShuffleIsPermutation) {
  Rng rng(5);
  std::vector<std::size_t> order = shuffled_order(10, rng);
  std::sort(order.begin(), order.end());
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(order[i], i);
}
