#include <gtest/gtest.h>

#include "spnpb/model.hpp"
#include "support/oracles.hpp"

using namespace spnpb;

namespace {

Vector v2(double a, double b) { return Vector{{a, b}}; }

}  // namespace

TEST(ModelConfig, Widths) {
  ModelConfig cfg;
  const auto w = cfg.widths();
  ASSERT_EQ(w.size(), 10u);
  EXPECT_EQ(w.front(), 6);
  EXPECT_EQ(w.back(), 4);
  EXPECT_EQ(w[4], ModelConfig::kHidden);
  EXPECT_EQ(w[5], ModelConfig::kHidden);
  EXPECT_THROW((ModelConfig{0, 2, 2, 0.2}.validate()), ArgumentError);
}

TEST(NormStats, ZScore) {
  NormStats st(Vector::Constant(1, 2.0), Vector::Constant(1, 2.0), Vector::Zero(1), Vector::Ones(1));
  EXPECT_DOUBLE_EQ(st.normalize_state(Vector::Constant(1, 4.0))[0], 1.0);
  EXPECT_DOUBLE_EQ(st.normalize_state(Vector::Constant(1, 2.0))[0], 0.0);
}

TEST(NormStats, RoundTrip) {
  Rng rng(3);
  NormStats st(oracle::random_vector(rng, 2), oracle::random_vector(rng, 2, 0.1, 3.0),
               oracle::random_vector(rng, 2), oracle::random_vector(rng, 2, 0.1, 3.0));
  for (int i = 0; i < 100; ++i) {
    const Vector x = oracle::random_vector(rng, 2, -10, 10);
    EXPECT_LT((st.denormalize_state(st.normalize_state(x)) - x).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((st.denormalize_command(st.normalize_command(x)) - x).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(NormStats, FloorsStd) {
  NormStats st(Vector::Zero(2), Vector::Zero(2), Vector::Zero(2), Vector::Constant(2, 1e-9));
  EXPECT_EQ(st.s_std, Vector::Constant(2, kMinStd));
  EXPECT_EQ(st.u_std, Vector::Constant(2, kMinStd));
}

TEST(Forward, ZeroNetwork) {
  ModelParams m = ModelParams::zeros(ModelConfig{});
  const ForwardResult f = forward(m, RecurrentState::zeros(), v2(1, 2), v2(-3, 4), v2(0.5, 0.5));
  EXPECT_EQ(f.prediction.mean, Vector::Zero(2));
  EXPECT_EQ(f.prediction.variance, Vector::Ones(2));
}

TEST(Forward, VariancePositive) {
  Rng rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    ModelParams m = oracle::random_model(static_cast<std::uint64_t>(trial));
    RecurrentState rs = RecurrentState::zeros();
    for (int i = 0; i < 100; ++i) {
      const ForwardResult f =
          forward(m, rs, oracle::random_vector(rng, 2, -5, 5), oracle::random_vector(rng, 2, -5, 5),
                  oracle::random_vector(rng, 2, -3, 3));
      rs = f.next_state;
      EXPECT_GT(f.prediction.variance.minCoeff(), 0.0);
    }
  }
}

TEST(Forward, StateIsNotMutated) {
  ModelParams m = oracle::random_model(1);
  RecurrentState rs = RecurrentState::zeros();
  rs.layers[0].h.setConstant(0.2);
  const RecurrentState copy = rs;
  const ForwardResult a = forward(m, rs, v2(0.1, 0.2), v2(0.3, 0.4), v2(0, 0));
  const ForwardResult b = forward(m, rs, v2(0.1, 0.2), v2(0.3, 0.4), v2(0, 0));
  EXPECT_TRUE(rs == copy);
  EXPECT_EQ(a.prediction.mean, b.prediction.mean);
  EXPECT_EQ(a.prediction.variance, b.prediction.variance);
  EXPECT_TRUE(a.next_state == b.next_state);
}

TEST(Forward, GoldenOutput) {
  ModelParams m = ModelParams::initialize(ModelConfig{}, 2024);
  RecurrentState rs = RecurrentState::zeros();
  ForwardResult f;
  for (int t = 0; t < 3; ++t) {
    f = forward(m, rs, v2(0.25, -0.5), v2(1.0, 0.125), v2(0.3, -0.2));
    rs = f.next_state;
  }
  EXPECT_EQ(f.prediction.mean[0], -0x1.47dfa47a35477p-5);
  EXPECT_EQ(f.prediction.mean[1], 0x1.4e91cd85892edp-4);
  EXPECT_EQ(f.prediction.variance[0], 0x1.163fc64efadf3p+0);
  EXPECT_EQ(f.prediction.variance[1], 0x1.fcbc00381b5aap-1);
}

TEST(Forward, PbChangesPrediction) {
  ModelParams m = oracle::random_model(5);
  const ForwardResult a = forward(m, RecurrentState::zeros(), v2(0.5, 0.5), v2(1, 0), v2(-1, -1));
  const ForwardResult b = forward(m, RecurrentState::zeros(), v2(0.5, 0.5), v2(1, 0), v2(1, 1));
  EXPECT_GT((a.prediction.mean - b.prediction.mean).norm(), 1e-10);
}

TEST(Forward, RejectsWrongLengths) {
  ModelParams m = oracle::random_model(5);
  EXPECT_THROW(forward(m, RecurrentState::zeros(), Vector::Zero(3), v2(0, 0), v2(0, 0)), ShapeError);
  EXPECT_THROW(forward(m, RecurrentState::zeros(), v2(0, 0), v2(0, 0), Vector::Zero(1)), ShapeError);
}

TEST(Rollout, SingleStepMatchesForward) {
  ModelParams m = oracle::random_model(9);
  Tape tape;
  const Rollout r = rollout(m, RecurrentState::zeros(), v2(0.2, -0.1), {v2(1, 0.5)}, v2(0.1, 0.1), tape);
  const ForwardResult f = forward(m, RecurrentState::zeros(), v2(0.2, -0.1), v2(1, 0.5), v2(0.1, 0.1));
  ASSERT_EQ(r.predictions.size(), 1u);
  EXPECT_EQ(r.predictions[0].mean, f.prediction.mean);
  EXPECT_EQ(r.predictions[0].variance, f.prediction.variance);
  EXPECT_TRUE(r.final_state == f.next_state);
}

TEST(Rollout, ZeroNetwork) {
  ModelParams m = ModelParams::zeros(ModelConfig{});
  Tape tape;
  const Rollout r = rollout(m, RecurrentState::zeros(), v2(1, 1), std::vector<Vector>(5, v2(2, -2)),
                            v2(0, 0), tape);
  for (const auto& p : r.predictions) {
    EXPECT_EQ(p.mean, Vector::Zero(2));
    EXPECT_EQ(p.variance, Vector::Ones(2));
  }
}

TEST(Rollout, EmptyHorizonThrows) {
  ModelParams m = oracle::random_model(1);
  Tape tape;
  EXPECT_THROW(rollout(m, RecurrentState::zeros(), v2(0, 0), {}, v2(0, 0), tape), ArgumentError);
}

class RolloutGradient : public ::testing::TestWithParam<int> {};

TEST_P(RolloutGradient, SumOfMeansMatchesFiniteDifferences) {
  const auto seed = static_cast<std::uint64_t>(GetParam());
  ModelParams m = oracle::random_model(seed);
  Rng rng(derive_seed(seed, 1));
  const int n = 6;
  const Vector s0 = oracle::random_vector(rng, 2);
  const Vector p = oracle::random_vector(rng, 2, -0.5, 0.5);
  Vector flat = oracle::random_vector(rng, 2 * n);
  auto unpack = [&](const Vector& f) {
    std::vector<Vector> u;
    for (int i = 0; i < n; ++i) u.push_back(f.segment(2 * i, 2));
    return u;
  };
  auto loss = [&](const Vector& f) {
    Tape tape;
    const Rollout r = rollout(m, RecurrentState::zeros(), s0, unpack(f), p, tape);
    double sum = 0.0;
    for (const auto& pr : r.predictions) sum += pr.mean.sum();
    return sum;
  };
  Tape tape;
  const Rollout r = rollout(m, RecurrentState::zeros(), s0, unpack(flat), p, tape);
  std::vector<std::pair<NodeId, Vector>> seeds;
  for (const auto& st : r.steps) seeds.emplace_back(st.mean, Vector::Ones(2));
  const nn::Gradients g = tape.backward(seeds);
  Vector analytic(2 * n);
  for (int i = 0; i < n; ++i) analytic.segment(2 * i, 2) = g.wrt(r.commands[static_cast<std::size_t>(i)]);
  EXPECT_LE(oracle::relative_error(analytic, oracle::central_difference(loss, flat)), 1e-4);
}

INSTANTIATE_TEST_SUITE_P(Seeds, RolloutGradient, ::testing::Range(0, 20));

TEST(ModelParams, FlatWeightsRoundTrip) {
  ModelParams m = oracle::random_model(3);
  ModelParams z = ModelParams::zeros(ModelConfig{});
  z.set_flat_weights(m.flat_weights());
  EXPECT_EQ(z.flat_weights(), m.flat_weights());
  EXPECT_THROW(z.set_flat_weights(Vector::Zero(3)), ShapeError);
  EXPECT_NO_THROW(m.validate());
}
