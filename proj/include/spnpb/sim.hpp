#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "spnpb/dataset.hpp"
#include "spnpb/random.hpp"

namespace spnpb::sim {

struct SimConfig {
  double alpha = 0.5;  // feedback rate toward the command
  double beta = 1.0;   // noise magnitude
  std::uint64_t seed = 0;
  double tick_period = 0.2;

  void validate() const {
    if (!(alpha > 0.0 && alpha <= 1.0)) throw ArgumentError("SimConfig: alpha must be in (0, 1]");
    if (!(beta >= 0.0)) throw ArgumentError("SimConfig: beta must be >= 0");
  }

  std::string label() const {
    char buf[64];
    std::snprintf(buf, sizeof buf, "alpha=%g,beta=%g", alpha, beta);
    return buf;
  }
};

/// Translational (m/s) and rotational (rad/s) velocity.
struct SimState {
  double w_trans = 0.0;
  double w_rot = 0.0;

  Vector as_vector() const { return Vector{{w_trans, w_rot}}; }
  friend bool operator==(const SimState&, const SimState&) = default;
};

struct Command {
  double trans = 0.0;
  double rot = 0.0;

  Vector as_vector() const { return Vector{{trans, rot}}; }
  static Command from(const Vector& v) { return Command{v[0], v[1]}; }
  friend bool operator==(const Command&, const Command&) = default;
};

inline constexpr double kCommandLimit = 3.0;
inline constexpr double kSpeedFloor = 0.1;
inline constexpr double kRotNoiseStd = 0.1;

/// Standard deviation of the translational noise before the beta factor.
inline double trans_noise_std(const SimState& w) {
  return 1.0 / (std::abs(w.w_trans) + std::abs(w.w_rot) + kSpeedFloor);
}

/// One plant tick. Both noise terms read the pre-step velocities; the
/// translational draw is taken first, then the rotational one.
inline SimState sim_step(const SimState& w, const Command& cmd, const SimConfig& config, Rng& rng) {
  const double trans_std = trans_noise_std(w);
  const double n_trans = rng.normal(0.0, trans_std);
  const double n_rot = rng.normal(0.0, kRotNoiseStd);
  SimState next;
  next.w_trans = w.w_trans + config.alpha * (cmd.trans - w.w_trans) + config.beta * n_trans;
  next.w_rot = w.w_rot + config.alpha * (cmd.rot - w.w_rot) + config.beta * n_rot;
  return next;
}

inline double clamp_command(double x) { return std::clamp(x, -kCommandLimit, kCommandLimit); }

/// Bounded random walk: each component moves by Uniform(-1, 1), then clamps to [-3, 3].
inline Command random_walk_command(const Command& prev, Rng& rng) {
  const double dt = rng.uniform(-1.0, 1.0);
  const double dr = rng.uniform(-1.0, 1.0);
  return Command{clamp_command(prev.trans + dt), clamp_command(prev.rot + dr)};
}

/// A plant instance with its own generator.
class Simulator {
 public:
  explicit Simulator(SimConfig config, SimState initial = {})
      : config_(config), rng_(config.seed), state_(initial) {
    config_.validate();
  }

  const SimState& state() const { return state_; }
  const SimConfig& config() const { return config_; }
  void reset(SimState s) { state_ = s; }
  void set_environment(double alpha, double beta) {
    config_.alpha = alpha;
    config_.beta = beta;
    config_.validate();
  }

  const SimState& step(const Command& cmd) {
    state_ = sim_step(state_, cmd, config_, rng_);
    return state_;
  }

  Rng& rng() { return rng_; }

 private:
  SimConfig config_;
  Rng rng_;
  SimState state_;
};

/// Data-collection grid: alpha in {0.4, 0.5, 0.6} x beta in {0.1, 1.0}.
inline std::vector<SimConfig> default_grid() {
  std::vector<SimConfig> grid;
  for (double a : {0.4, 0.5, 0.6})
    for (double b : {0.1, 1.0}) grid.push_back(SimConfig{a, b, 0, 0.2});
  return grid;
}

/// Random-walk episodes from rest. Trial k (config-major, repetition-minor)
/// draws from Rng(derive_seed(seed, k)); command and plant share that stream.
inline std::vector<Trial> collect_trials(const std::vector<SimConfig>& grid, int steps_per_trial,
                                         int trials_per_config, std::uint64_t seed) {
  if (grid.empty()) throw ArgumentError("collect_trials: empty grid");
  if (steps_per_trial < 2) throw ArgumentError("collect_trials: need at least 2 steps");
  if (trials_per_config < 1) throw ArgumentError("collect_trials: need at least 1 trial");
  std::vector<Trial> trials;
  int k = 0;
  for (const SimConfig& base : grid) {
    base.validate();
    for (int rep = 0; rep < trials_per_config; ++rep, ++k) {
      Rng rng(derive_seed(seed, static_cast<std::uint64_t>(k)));
      Trial trial;
      trial.id = k;
      trial.label = base.label();
      SimState w;
      Command cmd;
      for (int t = 0; t < steps_per_trial; ++t) {
        cmd = random_walk_command(cmd, rng);
        trial.samples.push_back(TimedSample{w.as_vector(), cmd.as_vector(), t});
        w = sim_step(w, cmd, base, rng);
      }
      trials.push_back(std::move(trial));
    }
  }
  return trials;
}

}  // namespace spnpb::sim
