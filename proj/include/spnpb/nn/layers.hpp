#pragma once

#include <cmath>
#include <random>

#include "spnpb/nn/tape.hpp"

namespace spnpb::nn {

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;    // out

  DenseLayer() = default;
  DenseLayer(Matrix w, Vector b) : weight(std::move(w)), bias(std::move(b)) {
    detail::require_shape(weight.rows() == bias.size(), "DenseLayer: weight rows != bias length");
  }
  static DenseLayer zeros(Eigen::Index in, Eigen::Index out) {
    return DenseLayer(Matrix::Zero(out, in), Vector::Zero(out));
  }

  Eigen::Index in_dim() const { return weight.cols(); }
  Eigen::Index out_dim() const { return weight.rows(); }
};

/// Forget-gate LSTM without peepholes. Gate blocks are stacked (i, f, o, g)
/// along the rows of both weight matrices and the bias.
struct LstmCell {
  Matrix w_input;   // 4H x in
  Matrix w_hidden;  // 4H x H
  Vector bias;      // 4H

  static LstmCell zeros(Eigen::Index in, Eigen::Index hidden) {
    return LstmCell{Matrix::Zero(4 * hidden, in), Matrix::Zero(4 * hidden, hidden),
                    Vector::Zero(4 * hidden)};
  }

  Eigen::Index in_dim() const { return w_input.cols(); }
  Eigen::Index hidden_dim() const { return w_hidden.cols(); }
};

struct LstmState {
  Vector c;
  Vector h;

  static LstmState zeros(Eigen::Index hidden) {
    return LstmState{Vector::Zero(hidden), Vector::Zero(hidden)};
  }
};

// Glorot-uniform initialization. LSTM forget-gate bias starts at 1.
template <class Rng>
Matrix glorot_uniform(Eigen::Index rows, Eigen::Index cols, Eigen::Index fan_in,
                      Eigen::Index fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Matrix m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = rng.uniform(-limit, limit);
  return m;
}

template <class Rng>
DenseLayer init_dense(Eigen::Index in, Eigen::Index out, Rng& rng) {
  return DenseLayer(glorot_uniform(out, in, in, out, rng), Vector::Zero(out));
}

template <class Rng>
LstmCell init_lstm(Eigen::Index in, Eigen::Index hidden, Rng& rng) {
  LstmCell cell;
  cell.w_input = glorot_uniform(4 * hidden, in, in, hidden, rng);
  cell.w_hidden = glorot_uniform(4 * hidden, hidden, hidden, hidden, rng);
  cell.bias = Vector::Zero(4 * hidden);
  cell.bias.segment(hidden, hidden).setOnes();
  return cell;
}

/// A DenseLayer whose tensors have been recorded as tape leaves.
struct BoundDense {
  NodeId weight, bias;
};

struct BoundLstm {
  NodeId w_input, w_hidden, bias;
};

struct BoundLstmState {
  NodeId c, h;
};

inline BoundDense bind(Tape& tape, const DenseLayer& layer) {
  return {tape.leaf(layer.weight), tape.leaf(layer.bias)};
}

inline BoundLstm bind(Tape& tape, const LstmCell& cell) {
  return {tape.leaf(cell.w_input), tape.leaf(cell.w_hidden), tape.leaf(cell.bias)};
}

inline BoundLstmState bind(Tape& tape, const LstmState& state) {
  return {tape.leaf(state.c), tape.leaf(state.h)};
}

inline NodeId dense_forward(Tape& tape, const BoundDense& layer, NodeId x) {
  return tape.dense(layer.weight, layer.bias, x);
}

/// Records a fresh copy of the layer on the tape and applies it to x.
inline NodeId dense_forward(const DenseLayer& layer, NodeId x, Tape& tape) {
  detail::require_shape(tape.size(x) == layer.in_dim(), "dense_forward: input length mismatch");
  return dense_forward(tape, bind(tape, layer), x);
}

/// Advances `state` in place (as node handles) and returns the new h.
inline NodeId lstm_step(Tape& tape, const BoundLstm& cell, BoundLstmState& state, NodeId x) {
  auto [h, c] = tape.lstm_step(cell.w_input, cell.w_hidden, cell.bias, x, state.h, state.c);
  state.h = h;
  state.c = c;
  return h;
}

inline NodeId lstm_step(const LstmCell& cell, LstmState& state, NodeId x, Tape& tape) {
  detail::require_shape(tape.size(x) == cell.in_dim(), "lstm_step: input length mismatch");
  BoundLstmState bound = bind(tape, state);
  NodeId h = lstm_step(tape, bind(tape, cell), bound, x);
  state.h = tape.value(bound.h);
  state.c = tape.value(bound.c);
  return h;
}

}  // namespace spnpb::nn
