#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "spnpb/model.hpp"

namespace spnpb {

enum class VarianceScaling {
  Absolute,  // ||v||
  PerState,  // ||v / (|s| + eps)||
};

struct ControlConfig {
  int horizon = 10;
  int batch = 10;
  int epochs = 3;
  double gamma_max = 3.0;
  double c_variance = 0.0;
  double c_orig = 0.0;  // weight on ||u_orig - u||, off by default
  VarianceScaling scaling = VarianceScaling::Absolute;
  double per_state_epsilon = 0.1;
  double command_min = -3.0;  // raw units, every command dimension
  double command_max = 3.0;

  void validate() const {
    if (horizon < 1) throw ArgumentError("ControlConfig: horizon must be >= 1");
    if (batch < 1) throw ArgumentError("ControlConfig: batch must be >= 1");
    if (epochs < 1) throw ArgumentError("ControlConfig: epochs must be >= 1");
    if (!(gamma_max > 0.0)) throw ArgumentError("ControlConfig: gamma_max must be positive");
    if (!(c_variance >= 0.0) || !(c_orig >= 0.0))
      throw ArgumentError("ControlConfig: loss weights must be >= 0");
    if (!(per_state_epsilon > 0.0)) throw ArgumentError("ControlConfig: epsilon must be positive");
    if (!(command_min < command_max)) throw ArgumentError("ControlConfig: empty command bounds");
  }
};

/// Commands are normalized; predictions are in raw units.
struct ControlPlan {
  std::vector<Vector> commands;
  double loss = 0.0;
  double initial_loss = 0.0;  // loss of the warm start this plan was optimized from
  std::vector<Vector> means;
  std::vector<Vector> variances;
};

/// [u1, u2, ..., uN] -> [u2, ..., uN, uN]
inline std::vector<Vector> warm_start(const std::vector<Vector>& prev) {
  if (prev.empty()) return {};
  std::vector<Vector> out(prev.begin() + 1, prev.end());
  out.push_back(prev.back());
  return out;
}

inline std::vector<Vector> warm_start(const ControlPlan& prev) { return warm_start(prev.commands); }

/// Geometric ladder from gamma_max * 1e-3 up to gamma_max inclusive.
inline std::vector<double> gamma_schedule(double gamma_max, int n) {
  if (!(gamma_max > 0.0) || n < 1) throw ArgumentError("gamma_schedule: invalid arguments");
  if (n == 1) return {gamma_max};
  std::vector<double> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    out[static_cast<std::size_t>(i)] =
        gamma_max * std::pow(10.0, -3.0 * static_cast<double>(n - 1 - i) / (n - 1));
  return out;
}

/// Control loss value and its adjoints with respect to the raw predicted
/// means, raw predicted variances and raw commands.
struct ControlLoss {
  double value = 0.0;
  double tracking = 0.0;
  double variance = 0.0;
  double deviation = 0.0;
  std::vector<Vector> d_mean;
  std::vector<Vector> d_variance;
  std::vector<Vector> d_command;
};

namespace detail {

// Euclidean norm over a flattened sequence; its gradient is x/||x|| (0 at 0).
inline double seq_norm(const std::vector<Vector>& xs) {
  double sq = 0.0;
  for (const Vector& x : xs) sq += x.squaredNorm();
  return std::sqrt(sq);
}

inline void check_lengths(std::size_t n, std::initializer_list<std::size_t> others) {
  for (std::size_t m : others)
    if (m != n) throw ShapeError("control_loss: sequences must share one length");
}

}  // namespace detail

/// ||s_ref - s|| + C_variance * V + C_orig * ||u_orig - u||, norms over the
/// whole horizon, everything in raw units.
inline ControlLoss control_loss(const std::vector<Vector>& means, const std::vector<Vector>& variances,
                                const std::vector<Vector>& s_ref, const std::vector<Vector>& commands,
                                const std::vector<Vector>& u_orig, const ControlConfig& config) {
  const std::size_t n = means.size();
  detail::check_lengths(n, {variances.size(), s_ref.size(), commands.size()});
  if (config.c_orig > 0.0) detail::check_lengths(n, {u_orig.size()});
  ControlLoss out;
  out.d_mean.resize(n);
  out.d_variance.resize(n);
  out.d_command.resize(n);

  std::vector<Vector> residual(n);
  for (std::size_t i = 0; i < n; ++i) residual[i] = means[i] - s_ref[i];
  out.tracking = detail::seq_norm(residual);
  for (std::size_t i = 0; i < n; ++i)
    out.d_mean[i] = out.tracking > 0.0 ? Vector(residual[i] / out.tracking)
                                       : Vector(Vector::Zero(means[i].size()));

  std::vector<Vector> scaled(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (config.scaling == VarianceScaling::Absolute) {
      scaled[i] = variances[i];
    } else {
      const Eigen::ArrayXd denom = means[i].array().abs() + config.per_state_epsilon;
      scaled[i] = (variances[i].array() / denom).matrix();
    }
  }
  out.variance = detail::seq_norm(scaled);
  for (std::size_t i = 0; i < n; ++i) {
    out.d_variance[i] = Vector::Zero(variances[i].size());
    if (config.c_variance == 0.0 || out.variance == 0.0) continue;
    const Vector g = config.c_variance * scaled[i] / out.variance;  // dL/dscaled
    if (config.scaling == VarianceScaling::Absolute) {
      out.d_variance[i] = g;
    } else {
      const Eigen::ArrayXd denom = means[i].array().abs() + config.per_state_epsilon;
      out.d_variance[i] = (g.array() / denom).matrix();
      const Eigen::ArrayXd sign = means[i].array().sign();
      out.d_mean[i].array() -= g.array() * variances[i].array() * sign / denom.square();
    }
  }

  for (std::size_t i = 0; i < n; ++i) out.d_command[i] = Vector::Zero(commands[i].size());
  if (config.c_orig > 0.0) {
    std::vector<Vector> dev(n);
    for (std::size_t i = 0; i < n; ++i) dev[i] = u_orig[i] - commands[i];
    out.deviation = detail::seq_norm(dev);
    if (out.deviation > 0.0)
      for (std::size_t i = 0; i < n; ++i)
        out.d_command[i] = -config.c_orig * dev[i] / out.deviation;
  }
  out.value = out.tracking + config.c_variance * out.variance + config.c_orig * out.deviation;
  return out;
}

/// Everything the optimizer needs for one tick.
struct ControlProblem {
  const ModelParams* model = nullptr;
  Vector pb;
  RecurrentState state;          // tracking state at tick t
  Vector s_t;                    // raw measured state
  std::vector<Vector> s_ref;     // raw targets for t+1 .. t+N
  std::vector<Vector> u_orig;    // raw original commands for t .. t+N-1 (C_orig term)
};

struct PlanEvaluation {
  double loss = 0.0;
  std::vector<Vector> means;      // raw
  std::vector<Vector> variances;  // raw
  std::vector<Vector> gradient;   // dL/d(normalized command); empty unless requested
};

/// Rolls the plan out from the tick's state and scores it. The gradient is
/// taken through the whole closed-loop rollout.
inline PlanEvaluation evaluate_plan(const ControlProblem& problem, const std::vector<Vector>& commands,
                                    const ControlConfig& config, bool with_gradient) {
  const ModelParams& model = *problem.model;
  const NormStats& norm = model.norm;
  Tape tape;
  const Rollout r =
      rollout(model, problem.state, norm.normalize_state(problem.s_t), commands, problem.pb, tape);
  PlanEvaluation ev;
  std::vector<Vector> raw_u;
  for (std::size_t i = 0; i < commands.size(); ++i) {
    ev.means.push_back(norm.denormalize_state(r.predictions[i].mean));
    ev.variances.push_back(norm.denormalize_variance(r.predictions[i].variance));
    raw_u.push_back(norm.denormalize_command(commands[i]));
  }
  const ControlLoss loss =
      control_loss(ev.means, ev.variances, problem.s_ref, raw_u, problem.u_orig, config);
  ev.loss = loss.value;
  if (!with_gradient) return ev;

  std::vector<std::pair<NodeId, Vector>> seeds;
  const Vector s_std2 = norm.s_std.cwiseAbs2();
  for (std::size_t i = 0; i < commands.size(); ++i) {
    seeds.emplace_back(r.steps[i].mean, loss.d_mean[i].cwiseProduct(norm.s_std));
    seeds.emplace_back(r.steps[i].variance, loss.d_variance[i].cwiseProduct(s_std2));
  }
  const nn::Gradients g = tape.backward(seeds);
  for (std::size_t i = 0; i < commands.size(); ++i)
    ev.gradient.push_back(g.wrt(r.commands[i]) + loss.d_command[i].cwiseProduct(norm.u_std));
  return ev;
}

/// Command bounds mapped into normalized units.
inline std::pair<Vector, Vector> normalized_bounds(const NormStats& norm, const ControlConfig& config) {
  const Eigen::Index nu = norm.u_mean.size();
  Vector lo = norm.normalize_command(Vector::Constant(nu, config.command_min));
  Vector hi = norm.normalize_command(Vector::Constant(nu, config.command_max));
  return {lo, hi};
}

struct LineSearchResult {
  std::vector<Vector> commands;
  PlanEvaluation best;
  double initial_loss = 0.0;
};

/// Per epoch: one gradient at the current plan, one candidate step per
/// gamma, keep the lowest loss. The current plan competes as the gamma = 0
/// candidate, so the result never scores worse than the start.
///
/// `objective(plan, with_gradient)` returns a PlanEvaluation; `project` maps
/// a candidate command back into the feasible set.
template <class Objective, class Project>
LineSearchResult line_search(std::vector<Vector> start, Objective&& objective,
                             const std::vector<double>& gammas, int epochs, Project&& project) {
  for (Vector& u : start) u = project(std::move(u));
  PlanEvaluation best = objective(start, true);
  if (!std::isfinite(best.loss))
    throw ControllerError("line_search: non-finite initial loss (" + std::to_string(best.loss) + ")");
  const double initial_loss = best.loss;
  std::vector<Vector> current = std::move(start);
  const std::size_t n = current.size();

  for (int epoch = 0; epoch < epochs; ++epoch) {
    if (best.gradient.empty()) best = objective(current, true);
    std::vector<Vector> chosen;
    PlanEvaluation chosen_eval;
    double chosen_loss = best.loss;
    for (double gamma : gammas) {
      std::vector<Vector> cand(n);
      for (std::size_t i = 0; i < n; ++i) cand[i] = project(Vector(current[i] - gamma * best.gradient[i]));
      PlanEvaluation ev = objective(cand, false);
      if (std::isfinite(ev.loss) && ev.loss < chosen_loss) {
        chosen_loss = ev.loss;
        chosen = std::move(cand);
        chosen_eval = std::move(ev);
      }
    }
    if (chosen.empty()) continue;  // no candidate beat the current plan
    current = std::move(chosen);
    best = std::move(chosen_eval);
  }
  return LineSearchResult{std::move(current), std::move(best), initial_loss};
}

/// Receding-horizon optimization of one tick's plan, warm-started from the
/// previous plan and kept inside the command bounds.
inline ControlPlan optimize(const ControlProblem& problem, const ControlPlan& prev,
                            const ControlConfig& config) {
  config.validate();
  if (problem.model == nullptr) throw ArgumentError("optimize: no model");
  const std::size_t n = static_cast<std::size_t>(config.horizon);
  if (prev.commands.size() != n) throw ShapeError("optimize: previous plan has wrong length");
  if (problem.s_ref.size() != n) throw ShapeError("optimize: s_ref has wrong length");

  const auto [lo, hi] = normalized_bounds(problem.model->norm, config);
  auto clamp = [&](Vector u) { return Vector(u.cwiseMax(lo).cwiseMin(hi)); };
  auto objective = [&](const std::vector<Vector>& plan, bool with_gradient) {
    return evaluate_plan(problem, plan, config, with_gradient);
  };
  LineSearchResult r = line_search(warm_start(prev), objective,
                                   gamma_schedule(config.gamma_max, config.batch), config.epochs, clamp);
  return ControlPlan{std::move(r.commands), r.best.loss, r.initial_loss, std::move(r.best.means),
                     std::move(r.best.variances)};
}

/// Per-tick controller state: owns the tracking recurrent state and the
/// previous plan.
class Controller {
 public:
  Controller(const ModelParams& model, ControlConfig config) : model_(&model), config_(config) {
    config_.validate();
    state_ = RecurrentState::zeros();
    const Vector zero_cmd = model.norm.normalize_command(Vector::Zero(model.config.command_dim));
    plan_.commands.assign(static_cast<std::size_t>(config_.horizon), zero_cmd);
  }

  /// Consumes the measured state for this tick and returns the raw command
  /// to send. On an optimizer failure the command is zero.
  Vector step(const Vector& s_t, const std::vector<Vector>& s_ref,
              const std::vector<Vector>& u_orig, const Vector& pb) {
    if (has_prev_) {
      state_ = forward(*model_, state_, prev_s_, prev_u_, prev_pb_).next_state;
    }
    Vector command_n;
    try {
      ControlProblem problem{model_, pb, state_, s_t, s_ref, u_orig};
      plan_ = optimize(problem, plan_, config_);
      command_n = plan_.commands.front();
      last_error_.clear();
    } catch (const std::exception& e) {
      last_error_ = e.what();
      command_n = model_->norm.normalize_command(Vector::Zero(model_->config.command_dim));
    }
    Vector raw = model_->norm.denormalize_command(command_n);
    raw = raw.cwiseMax(config_.command_min).cwiseMin(config_.command_max);
    prev_s_ = model_->norm.normalize_state(s_t);
    prev_u_ = model_->norm.normalize_command(raw);
    prev_pb_ = pb;
    has_prev_ = true;
    return raw;
  }

  const ControlPlan& plan() const { return plan_; }
  const RecurrentState& tracking_state() const { return state_; }
  const std::string& last_error() const { return last_error_; }
  const ControlConfig& config() const { return config_; }

 private:
  const ModelParams* model_;
  ControlConfig config_;
  RecurrentState state_;
  ControlPlan plan_;
  Vector prev_s_, prev_u_, prev_pb_;
  bool has_prev_ = false;
  std::string last_error_;
};

}  // namespace spnpb
