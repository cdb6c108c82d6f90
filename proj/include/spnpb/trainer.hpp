#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "spnpb/dataset.hpp"
#include "spnpb/model.hpp"
#include "spnpb/nn/optim.hpp"
#include "spnpb/random.hpp"

namespace spnpb {

/// Negative log of the Gaussian density: 0.5*log(2*pi*v) + (m - x)^2 / (2v).
inline double nll_element(double pred_mean, double pred_var, double target) {
  if (!(pred_var > 0.0)) throw ArgumentError("nll_element: variance must be positive");
  const double r = pred_mean - target;
  return 0.5 * std::log(2.0 * std::numbers::pi * pred_var) + r * r / (2.0 * pred_var);
}

/// Sum of nll_element over every component, plus its adjoints.
struct GaussianNll {
  double value = 0.0;
  Vector d_mean;
  Vector d_variance;
};

inline GaussianNll gaussian_nll(const GaussianPrediction& pred, const Vector& target) {
  detail::require_shape(pred.mean.size() == target.size(), "gaussian_nll: target length");
  GaussianNll out;
  out.d_mean.resize(target.size());
  out.d_variance.resize(target.size());
  for (Eigen::Index i = 0; i < target.size(); ++i) {
    const double v = pred.variance[i];
    const double r = pred.mean[i] - target[i];
    out.value += nll_element(pred.mean[i], v, target[i]);
    out.d_mean[i] = r / v;
    out.d_variance[i] = 0.5 / v - r * r / (2.0 * v * v);
  }
  return out;
}

using Seeds = std::vector<std::pair<NodeId, Vector>>;

/// Teacher-forced NLL over a window of raw samples: the measured state at
/// each tick (never the prediction) is the network input, and the next
/// sample's state is the target. Adjoint seeds are appended when requested.
inline double teacher_forced_nll(const ModelGraph& graph, ModelGraph::State& state,
                                 std::span<const TimedSample> samples, NodeId pb,
                                 const NormStats& stats, Seeds* seeds) {
  Tape& tape = graph.tape();
  double total = 0.0;
  for (std::size_t t = 0; t + 1 < samples.size(); ++t) {
    NodeId s = tape.leaf(stats.normalize_state(samples[t].s));
    NodeId u = tape.leaf(stats.normalize_command(samples[t].u));
    ModelGraph::Step step = graph.step(state, s, u, pb);
    const GaussianNll nll =
        gaussian_nll(graph.read(step), stats.normalize_state(samples[t + 1].s));
    total += nll.value;
    if (seeds) {
      seeds->emplace_back(step.mean, nll.d_mean);
      seeds->emplace_back(step.variance, nll.d_variance);
    }
  }
  return total;
}

struct TrialLoss {
  double value = 0.0;
  Vector weight_grad;  // ModelParams::flat_weights order
  Vector pb_grad;
};

/// Loss of one trial from a zero recurrent state.
inline double trial_nll(const ModelParams& params, const Vector& p_k, const Trial& trial,
                        const NormStats& stats) {
  if (trial.samples.size() < 2) throw ArgumentError("trial_nll: trial needs >= 2 samples");
  Tape tape;
  ModelGraph graph(params, tape);
  ModelGraph::State st = graph.bind_state(RecurrentState::zeros());
  NodeId pb = tape.leaf(p_k);
  return teacher_forced_nll(graph, st, trial.samples, pb, stats, nullptr);
}

inline TrialLoss trial_nll_with_grad(const ModelParams& params, const Vector& p_k,
                                     const Trial& trial, const NormStats& stats) {
  if (trial.samples.size() < 2) throw ArgumentError("trial_nll: trial needs >= 2 samples");
  Tape tape;
  ModelGraph graph(params, tape);
  ModelGraph::State st = graph.bind_state(RecurrentState::zeros());
  NodeId pb = tape.leaf(p_k);
  Seeds seeds;
  TrialLoss out;
  out.value = teacher_forced_nll(graph, st, trial.samples, pb, stats, &seeds);
  const nn::Gradients g = tape.backward(seeds);
  out.weight_grad = graph.weight_gradient(g);
  out.pb_grad = g.wrt(pb);
  return out;
}

/// Sum of per-trial losses using each trial's row of the PB table.
inline double total_nll(const ModelParams& params, const std::vector<Trial>& trials) {
  if (params.pb_table.size() != trials.size())
    throw ShapeError("total_nll: PB table does not match trial count");
  double total = 0.0;
  for (std::size_t k = 0; k < trials.size(); ++k)
    total += trial_nll(params, params.pb_table[k], trials[k], params.norm);
  return total;
}

struct TrainConfig {
  int epochs = 500;
  double weight_learning_rate = 1e-3;
  double pb_learning_rate = 1e-3;
  double clip_norm = 10.0;
  // Cosine decay of both learning rates down to this fraction by the last
  // epoch. 1.0 keeps them constant.
  double final_lr_fraction = 1.0;
  std::uint64_t seed = 0;  // weight init and shuffle order
  ModelConfig model;

  void validate() const {
    if (epochs < 1) throw ArgumentError("TrainConfig: epochs must be >= 1");
    if (!(weight_learning_rate > 0.0) || !(pb_learning_rate > 0.0))
      throw ArgumentError("TrainConfig: learning rates must be positive");
    if (!(clip_norm > 0.0)) throw ArgumentError("TrainConfig: clip norm must be positive");
    if (!(final_lr_fraction > 0.0 && final_lr_fraction <= 1.0))
      throw ArgumentError("TrainConfig: final_lr_fraction must be in (0, 1]");
    model.validate();
  }
};

struct EpochReport {
  int epoch = 0;
  double loss = 0.0;  // sum of per-trial losses seen during the epoch
  double lr_scale = 1.0;
};

/// Learning-rate multiplier for a 1-based epoch.
inline double lr_scale(const TrainConfig& config, int epoch) {
  if (config.final_lr_fraction >= 1.0 || config.epochs < 2) return 1.0;
  const double progress = static_cast<double>(epoch - 1) / static_cast<double>(config.epochs - 1);
  const double f = config.final_lr_fraction;
  return f + (1.0 - f) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

/// Fisher-Yates with the portable generator.
inline std::vector<std::size_t> shuffled_order(std::size_t n, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform01() * static_cast<double>(i));
    std::swap(order[i - 1], order[std::min(j, i - 1)]);
  }
  return order;
}

/// Maximum-likelihood training of W and one PB vector per trial. Each epoch
/// visits every trial once in shuffled order and takes one clipped Adam step
/// on W and on that trial's PB row.
inline ModelParams train(const std::vector<Trial>& trials, const TrainConfig& config,
                         const std::function<void(const EpochReport&)>& on_epoch = {}) {
  if (trials.empty()) throw ArgumentError("train: no trials");
  config.validate();
  for (const Trial& t : trials) validate_trial(t);
  const ModelConfig& mc = config.model;
  if (trials.front().samples.front().s.size() != mc.state_dim ||
      trials.front().samples.front().u.size() != mc.command_dim)
    throw ShapeError("train: sample dims do not match model config");

  ModelParams params = ModelParams::initialize(mc, config.seed);
  params.norm = compute_norm_stats(trials);
  params.pb_table.assign(trials.size(), Vector::Zero(mc.pb_dim));
  params.pb_labels.clear();
  for (const Trial& t : trials) params.pb_labels.push_back(t.label);

  Vector weights = params.flat_weights();
  const Eigen::Index nw = weights.size();
  nn::AdamState weight_opt(nw, nn::AdamConfig{config.weight_learning_rate, 0.9, 0.999, 1e-8});
  std::vector<nn::AdamState> pb_opt(
      trials.size(), nn::AdamState(mc.pb_dim, nn::AdamConfig{config.pb_learning_rate, 0.9, 0.999, 1e-8}));

  Rng shuffle_rng(derive_seed(config.seed, 0x5eed));
  Vector joint(nw + mc.pb_dim);
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const double scale = lr_scale(config, epoch);
    EpochReport report{epoch, 0.0, scale};
    weight_opt.config.learning_rate = config.weight_learning_rate * scale;
    for (auto& opt : pb_opt) opt.config.learning_rate = config.pb_learning_rate * scale;
    for (std::size_t k : shuffled_order(trials.size(), shuffle_rng)) {
      TrialLoss loss = trial_nll_with_grad(params, params.pb_table[k], trials[k], params.norm);
      if (!std::isfinite(loss.value) || !loss.weight_grad.allFinite() || !loss.pb_grad.allFinite())
        throw TrainingDiverged(epoch, "training diverged at epoch " + std::to_string(epoch) +
                                          " (trial " + std::to_string(trials[k].id) + ")");
      report.loss += loss.value;
      joint << loss.weight_grad, loss.pb_grad;
      nn::clip_by_norm(joint, config.clip_norm);
      Vector gw = joint.head(nw);
      Vector gp = joint.tail(mc.pb_dim);
      nn::adam_update(weights, gw, weight_opt);
      nn::adam_update(params.pb_table[k], gp, pb_opt[k]);
      params.set_flat_weights(weights);
    }
    if (on_epoch) on_epoch(report);
  }
  return params;
}

}  // namespace spnpb
