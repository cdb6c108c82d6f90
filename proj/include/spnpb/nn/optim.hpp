#pragma once

#include <cmath>
#include <cstdint>

#include "spnpb/nn/tape.hpp"

namespace spnpb::nn {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig config;
  Vector m;
  Vector v;
  std::uint64_t t = 0;

  AdamState() = default;
  AdamState(Eigen::Index n, AdamConfig cfg) : config(cfg), m(Vector::Zero(n)), v(Vector::Zero(n)) {}
};

/// Bias-corrected Adam step, in place.
inline void adam_update(Vector& params, const Vector& grads, AdamState& state) {
  detail::require_shape(params.size() == grads.size(), "adam_update: grads shape mismatch");
  if (state.m.size() == 0) {
    state.m = Vector::Zero(params.size());
    state.v = Vector::Zero(params.size());
  }
  detail::require_shape(state.m.size() == params.size() && state.v.size() == params.size(),
                        "adam_update: state shape mismatch");
  const AdamConfig& c = state.config;
  state.t += 1;
  state.m = c.beta1 * state.m + (1.0 - c.beta1) * grads;
  state.v = c.beta2 * state.v + (1.0 - c.beta2) * grads.cwiseProduct(grads);
  const double m_corr = 1.0 - std::pow(c.beta1, static_cast<double>(state.t));
  const double v_corr = 1.0 - std::pow(c.beta2, static_cast<double>(state.t));
  params.array() -= c.learning_rate * (state.m.array() / m_corr) /
                    ((state.v.array() / v_corr).sqrt() + c.epsilon);
}

struct MomentumState {
  double learning_rate = 0.01;
  double momentum = 0.9;
  Vector velocity;

  MomentumState() = default;
  MomentumState(Eigen::Index n, double lr, double mu)
      : learning_rate(lr), momentum(mu), velocity(Vector::Zero(n)) {}
};

/// v <- mu*v - lr*g ; p <- p + v
inline void momentum_update(Vector& params, const Vector& grads, MomentumState& state) {
  detail::require_shape(params.size() == grads.size(), "momentum_update: grads shape mismatch");
  if (state.velocity.size() == 0) state.velocity = Vector::Zero(params.size());
  detail::require_shape(state.velocity.size() == params.size(),
                        "momentum_update: velocity shape mismatch");
  state.velocity = state.momentum * state.velocity - state.learning_rate * grads;
  params += state.velocity;
}

/// Rescales g in place so that its Euclidean norm is at most max_norm.
/// Returns the norm before clipping.
inline double clip_by_norm(Vector& g, double max_norm) {
  const double n = g.norm();
  if (n > max_norm && n > 0.0) g *= max_norm / n;
  return n;
}

}  // namespace spnpb::nn
