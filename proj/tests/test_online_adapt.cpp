#include <gtest/gtest.h>

#include "spnpb/online_adapt.hpp"
#include "support/oracles.hpp"

using namespace spnpb;

namespace {

TimedSample sample_at(int tick) {
  return TimedSample{Vector::Constant(2, 0.01 * tick), Vector::Constant(2, -0.02 * tick), tick};
}

// Runs the model over `samples` from a zero state, pushing each with the
// state that preceded it.
AdaptBuffer fill(const ModelParams& m, const std::vector<TimedSample>& samples, const Vector& p,
                 AdaptConfig cfg = {}) {
  AdaptBuffer buf(cfg);
  RecurrentState rs = RecurrentState::zeros();
  for (const TimedSample& x : samples) {
    buf.push(x, rs);
    rs = forward(m, rs, m.norm.normalize_state(x.s), m.norm.normalize_command(x.u), p).next_state;
  }
  return buf;
}

}  // namespace

TEST(AdaptBuffer, EvictsOldest) {
  AdaptBuffer buf;
  for (int t = 0; t < 51; ++t) buf.push(sample_at(t), RecurrentState::zeros());
  EXPECT_EQ(buf.size(), 50u);
  EXPECT_EQ(buf.entries().front().sample.tick, 1);
  EXPECT_EQ(buf.entries().back().sample.tick, 50);
}

TEST(AdaptBuffer, ReadinessThreshold) {
  AdaptBuffer buf;
  for (int t = 0; t < 9; ++t) buf.push(sample_at(t), RecurrentState::zeros());
  EXPECT_FALSE(buf.update_ready());
  buf.push(sample_at(9), RecurrentState::zeros());
  EXPECT_FALSE(buf.update_ready());
  buf.push(sample_at(10), RecurrentState::zeros());
  EXPECT_TRUE(buf.update_ready());
}

TEST(AdaptBuffer, RejectsNonIncreasingTick) {
  AdaptBuffer buf;
  buf.push(sample_at(3), RecurrentState::zeros());
  EXPECT_THROW(buf.push(sample_at(3), RecurrentState::zeros()), ArgumentError);
  EXPECT_THROW(buf.push(sample_at(1), RecurrentState::zeros()), ArgumentError);
}

TEST(AdaptBuffer, SnapshotIsStateBeforeOldest) {
  AdaptBuffer buf;
  EXPECT_THROW(buf.snapshot(), PreconditionError);
  RecurrentState a = RecurrentState::zeros(), b = RecurrentState::zeros();
  b.layers[1].c.setConstant(0.5);
  buf.push(sample_at(0), a);
  buf.push(sample_at(1), b);
  EXPECT_TRUE(buf.snapshot() == a);
  AdaptBuffer small(AdaptConfig{1, 2, 1, 0.01, 0.9});
  small.push(sample_at(0), a);
  small.push(sample_at(1), b);
  small.push(sample_at(2), a);
  EXPECT_TRUE(small.snapshot() == b);
}

TEST(AdaptConfig, Validation) {
  EXPECT_THROW(AdaptBuffer(AdaptConfig{50, 50, 1, 0.01, 0.9}), ArgumentError);
  EXPECT_THROW(AdaptBuffer(AdaptConfig{10, 50, 0, 0.01, 0.9}), ArgumentError);
  EXPECT_THROW(AdaptBuffer(AdaptConfig{10, 50, 1, 0.0, 0.9}), ArgumentError);
}

TEST(AdaptStep, RequiresReadyBuffer) {
  ModelParams m = oracle::random_model(1);
  AdaptBuffer buf;
  for (int t = 0; t < 5; ++t) buf.push(sample_at(t), RecurrentState::zeros());
  LivePB live = LivePB::zeros(2, {});
  EXPECT_THROW(adapt_step(m, buf, live), PreconditionError);
}

TEST(AdaptStep, WeightsFrozen) {
  ModelParams m = oracle::random_model(2);
  const std::uint64_t before = oracle::weight_hash(m);
  std::vector<TimedSample> xs;
  Rng rng(3);
  for (int t = 0; t < 60; ++t) xs.push_back(TimedSample{oracle::random_vector(rng, 2), oracle::random_vector(rng, 2), t});
  AdaptBuffer buf = fill(m, xs, Vector::Zero(2));
  LivePB live = LivePB::zeros(2, {});
  for (int i = 0; i < 25; ++i) adapt_step(m, buf, live);
  EXPECT_EQ(oracle::weight_hash(m), before);
  EXPECT_NE(live.p, Vector::Zero(2));
}

TEST(AdaptStep, GradientMatchesFiniteDifferences) {
  ModelParams m = oracle::random_model(4);
  std::vector<TimedSample> xs;
  Rng rng(6);
  for (int t = 0; t < 20; ++t) xs.push_back(TimedSample{oracle::random_vector(rng, 2), oracle::random_vector(rng, 2), t});
  const AdaptBuffer buf = fill(m, xs, Vector::Zero(2));
  const Vector p{{0.2, -0.3}};
  auto f = [&](const Vector& x) { return buffer_nll(m, buf, x).value; };
  EXPECT_LE(oracle::relative_error(buffer_nll(m, buf, p).pb_grad, oracle::central_difference(f, p)), 1e-4);
}

TEST(AdaptStep, StepFollowsMomentumRule) {
  ModelParams m = oracle::random_model(5);
  std::vector<TimedSample> xs;
  Rng rng(7);
  for (int t = 0; t < 15; ++t) xs.push_back(TimedSample{oracle::random_vector(rng, 2), oracle::random_vector(rng, 2), t});
  const AdaptBuffer buf = fill(m, xs, Vector::Zero(2));
  AdaptConfig cfg;
  LivePB live = LivePB::zeros(2, cfg);
  live.optimizer.velocity = Vector{{0.01, -0.02}};
  const Vector g = buffer_nll(m, buf, live.p).pb_grad;
  const Vector expected = cfg.momentum * Vector{{0.01, -0.02}} - cfg.learning_rate * g;
  adapt_step(m, buf, live);
  EXPECT_LT((live.p - expected).norm(), 1e-15);
}

TEST(AdaptStep, ReplayIndependentOfEvictionHistory) {
  ModelParams m = oracle::random_model(8);
  std::vector<TimedSample> xs;
  Rng rng(9);
  for (int t = 0; t < 80; ++t) xs.push_back(TimedSample{oracle::random_vector(rng, 2), oracle::random_vector(rng, 2), t});
  const Vector p{{0.1, 0.1}};
  // Long history with 30 evictions.
  const AdaptBuffer evicted = fill(m, xs, p);
  // Same retained window pushed directly, with the same per-sample states.
  AdaptBuffer direct;
  for (const auto& e : evicted.entries()) direct.push(e.sample, e.state_before);
  EXPECT_EQ(buffer_nll(m, evicted, p).value, buffer_nll(m, direct, p).value);

  // The stored snapshot reproduces the state reached by running from zero.
  RecurrentState rs = RecurrentState::zeros();
  for (int t = 0; t < 30; ++t)
    rs = forward(m, rs, m.norm.normalize_state(xs[t].s), m.norm.normalize_command(xs[t].u), p).next_state;
  EXPECT_TRUE(evicted.snapshot() == rs);
}

TEST(LivePB, StartsAtZero) {
  const LivePB live = LivePB::zeros(3, {});
  EXPECT_EQ(live.p, Vector::Zero(3));
  EXPECT_EQ(live.optimizer.velocity, Vector::Zero(3));
}
