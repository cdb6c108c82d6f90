#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "spnpb/error.hpp"
#include "spnpb/nn/layers.hpp"
#include "spnpb/nn/tape.hpp"
#include "spnpb/random.hpp"

namespace spnpb {

using nn::Matrix;
using nn::NodeId;
using nn::Tape;
using nn::Vector;

/// Network dimensions. Only the state, command and parametric-bias sizes are
/// free; the hidden widths are fixed at {50, 20, 10 | LSTM 10, LSTM 10 | 10, 20, 50}.
struct ModelConfig {
  int state_dim = 2;
  int command_dim = 2;
  int pb_dim = 2;
  double tick_period = 0.2;

  static constexpr int kHidden = 10;
  static constexpr std::array<int, 3> kEncoderWidths{50, 20, 10};
  static constexpr std::array<int, 3> kDecoderWidths{10, 20, 50};

  int input_dim() const { return command_dim + state_dim + pb_dim; }
  int output_dim() const { return 2 * state_dim; }

  /// All ten unit counts, input through output.
  std::vector<int> widths() const {
    return {input_dim(), 50, 20, 10, kHidden, kHidden, 10, 20, 50, output_dim()};
  }

  void validate() const {
    if (state_dim < 1 || command_dim < 1 || pb_dim < 1)
      throw ArgumentError("ModelConfig: dimensions must be positive");
    if (!(tick_period > 0.0)) throw ArgumentError("ModelConfig: tick period must be positive");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline constexpr double kMinStd = 1e-6;
inline constexpr double kLogVarMin = -10.0;
inline constexpr double kLogVarMax = 10.0;

/// Per-dimension z-score statistics (population standard deviation).
struct NormStats {
  Vector s_mean, s_std, u_mean, u_std;

  NormStats() = default;
  NormStats(Vector sm, Vector ss, Vector um, Vector us)
      : s_mean(std::move(sm)), s_std(std::move(ss)), u_mean(std::move(um)), u_std(std::move(us)) {
    detail::require_shape(s_mean.size() == s_std.size() && u_mean.size() == u_std.size(),
                          "NormStats: mean/std length mismatch");
    s_std = s_std.cwiseMax(kMinStd);
    u_std = u_std.cwiseMax(kMinStd);
  }

  static NormStats identity(int state_dim, int command_dim) {
    return NormStats(Vector::Zero(state_dim), Vector::Ones(state_dim), Vector::Zero(command_dim),
                     Vector::Ones(command_dim));
  }

  Vector normalize_state(const Vector& s) const {
    detail::require_shape(s.size() == s_mean.size(), "normalize: state length mismatch");
    return ((s - s_mean).array() / s_std.array()).matrix();
  }
  Vector normalize_command(const Vector& u) const {
    detail::require_shape(u.size() == u_mean.size(), "normalize: command length mismatch");
    return ((u - u_mean).array() / u_std.array()).matrix();
  }
  Vector denormalize_state(const Vector& s) const {
    return (s.array() * s_std.array()).matrix() + s_mean;
  }
  Vector denormalize_command(const Vector& u) const {
    return (u.array() * u_std.array()).matrix() + u_mean;
  }
  /// Variance in normalized units squared -> raw units squared.
  Vector denormalize_variance(const Vector& v) const {
    return (v.array() * s_std.array().square()).matrix();
  }

  friend bool operator==(const NormStats&, const NormStats&) = default;
};

struct NormalizedPair {
  Vector s;
  Vector u;
};

inline NormalizedPair normalize(const NormStats& stats, const Vector& s, const Vector& u) {
  return {stats.normalize_state(s), stats.normalize_command(u)};
}

/// LSTM (c, h) for both recurrent layers.
struct RecurrentState {
  std::array<nn::LstmState, 2> layers;

  static RecurrentState zeros() {
    return RecurrentState{{nn::LstmState::zeros(ModelConfig::kHidden),
                           nn::LstmState::zeros(ModelConfig::kHidden)}};
  }

  friend bool operator==(const RecurrentState& a, const RecurrentState& b) {
    for (std::size_t i = 0; i < 2; ++i)
      if (a.layers[i].c != b.layers[i].c || a.layers[i].h != b.layers[i].h) return false;
    return true;
  }
};

/// Predicted next state in normalized units; variance is strictly positive.
struct GaussianPrediction {
  Vector mean;
  Vector variance;
};

struct ModelParams {
  ModelConfig config;
  std::array<nn::DenseLayer, 3> encoder;
  std::array<nn::LstmCell, 2> lstm;
  std::array<nn::DenseLayer, 4> decoder;
  NormStats norm;
  std::vector<Vector> pb_table;
  std::vector<std::string> pb_labels;

  /// Zero weights everywhere (including LSTM biases) and identity normalization.
  static ModelParams zeros(const ModelConfig& config) {
    config.validate();
    ModelParams p;
    p.config = config;
    const auto w = config.widths();
    for (std::size_t i = 0; i < 3; ++i) p.encoder[i] = nn::DenseLayer::zeros(w[i], w[i + 1]);
    p.lstm[0] = nn::LstmCell::zeros(w[3], w[4]);
    p.lstm[1] = nn::LstmCell::zeros(w[4], w[5]);
    for (std::size_t i = 0; i < 4; ++i) p.decoder[i] = nn::DenseLayer::zeros(w[5 + i], w[6 + i]);
    p.norm = NormStats::identity(config.state_dim, config.command_dim);
    return p;
  }

  static ModelParams initialize(const ModelConfig& config, std::uint64_t seed) {
    ModelParams p = zeros(config);
    Rng rng(seed);
    const auto w = config.widths();
    for (std::size_t i = 0; i < 3; ++i) p.encoder[i] = nn::init_dense(w[i], w[i + 1], rng);
    p.lstm[0] = nn::init_lstm(w[3], w[4], rng);
    p.lstm[1] = nn::init_lstm(w[4], w[5], rng);
    for (std::size_t i = 0; i < 4; ++i) p.decoder[i] = nn::init_dense(w[5 + i], w[6 + i], rng);
    return p;
  }

  /// Visits every weight tensor in serialization order.
  template <class F>
  void for_each_tensor(F&& f) { visit_tensors(*this, f); }
  template <class F>
  void for_each_tensor(F&& f) const { visit_tensors(*this, f); }

  Eigen::Index weight_count() const {
    Eigen::Index n = 0;
    for_each_tensor([&](const auto& t) { n += t.size(); });
    return n;
  }

  /// W as one flat vector (column-major within each tensor).
  Vector flat_weights() const {
    Vector out(weight_count());
    Eigen::Index at = 0;
    for_each_tensor([&](const auto& t) {
      out.segment(at, t.size()) = Eigen::Map<const Vector>(t.data(), t.size());
      at += t.size();
    });
    return out;
  }

  void set_flat_weights(const Vector& flat) {
    detail::require_shape(flat.size() == weight_count(), "set_flat_weights: length mismatch");
    Eigen::Index at = 0;
    for_each_tensor([&](auto& t) {
      Eigen::Map<Vector>(t.data(), t.size()) = flat.segment(at, t.size());
      at += t.size();
    });
  }

  /// Structural check of every tensor against the config.
  void validate() const {
    config.validate();
    const auto w = config.widths();
    for (std::size_t i = 0; i < 3; ++i)
      detail::require_shape(encoder[i].weight.rows() == w[i + 1] &&
                                encoder[i].weight.cols() == w[i] &&
                                encoder[i].bias.size() == w[i + 1],
                            "ModelParams: encoder shape");
    for (std::size_t i = 0; i < 2; ++i)
      detail::require_shape(lstm[i].w_input.rows() == 4 * w[4 + i] &&
                                lstm[i].w_input.cols() == w[3 + i] &&
                                lstm[i].w_hidden.rows() == 4 * w[4 + i] &&
                                lstm[i].w_hidden.cols() == w[4 + i] &&
                                lstm[i].bias.size() == 4 * w[4 + i],
                            "ModelParams: lstm shape");
    for (std::size_t i = 0; i < 4; ++i)
      detail::require_shape(decoder[i].weight.rows() == w[6 + i] &&
                                decoder[i].weight.cols() == w[5 + i] &&
                                decoder[i].bias.size() == w[6 + i],
                            "ModelParams: decoder shape");
    detail::require_shape(norm.s_mean.size() == config.state_dim &&
                              norm.u_mean.size() == config.command_dim,
                          "ModelParams: norm stats shape");
    for (const auto& p : pb_table)
      detail::require_shape(p.size() == config.pb_dim, "ModelParams: PB row length");
    detail::require_shape(pb_labels.empty() || pb_labels.size() == pb_table.size(),
                          "ModelParams: PB label count");
  }

 private:
  template <class Self, class F>
  static void visit_tensors(Self& self, F& f) {
    for (auto& l : self.encoder) { f(l.weight); f(l.bias); }
    for (auto& c : self.lstm) { f(c.w_input); f(c.w_hidden); f(c.bias); }
    for (auto& l : self.decoder) { f(l.weight); f(l.bias); }
  }
};

/// The network's weights recorded once on a tape, so every time step of a
/// sequence shares the same leaves and their gradients accumulate.
class ModelGraph {
 public:
  struct State {
    std::array<nn::BoundLstmState, 2> layers;
  };
  struct Step {
    NodeId mean;
    NodeId variance;
  };

  ModelGraph(const ModelParams& params, Tape& tape) : params_(&params), tape_(&tape) {
    for (std::size_t i = 0; i < 3; ++i) encoder_[i] = nn::bind(tape, params.encoder[i]);
    for (std::size_t i = 0; i < 2; ++i) lstm_[i] = nn::bind(tape, params.lstm[i]);
    for (std::size_t i = 0; i < 4; ++i) decoder_[i] = nn::bind(tape, params.decoder[i]);
  }

  State bind_state(const RecurrentState& rs) const {
    return State{{nn::bind(*tape_, rs.layers[0]), nn::bind(*tape_, rs.layers[1])}};
  }

  RecurrentState read_state(const State& st) const {
    RecurrentState rs;
    for (std::size_t i = 0; i < 2; ++i)
      rs.layers[i] = nn::LstmState{tape_->value(st.layers[i].c), tape_->value(st.layers[i].h)};
    return rs;
  }

  /// One tick. Input order is (u, s, p). Advances `state` to the new handles.
  Step step(State& state, NodeId s, NodeId u, NodeId p) const {
    const ModelConfig& cfg = params_->config;
    detail::require_shape(tape_->size(s) == cfg.state_dim, "forward: state length mismatch");
    detail::require_shape(tape_->size(u) == cfg.command_dim, "forward: command length mismatch");
    detail::require_shape(tape_->size(p) == cfg.pb_dim, "forward: PB length mismatch");
    Tape& t = *tape_;
    NodeId x = t.concat({u, s, p});
    for (const auto& layer : encoder_) x = t.tanh(nn::dense_forward(t, layer, x));
    for (std::size_t i = 0; i < 2; ++i) x = nn::lstm_step(t, lstm_[i], state.layers[i], x);
    for (std::size_t i = 0; i < 3; ++i) x = t.tanh(nn::dense_forward(t, decoder_[i], x));
    NodeId out = nn::dense_forward(t, decoder_[3], x);
    const Eigen::Index n = cfg.state_dim;
    NodeId mean = t.slice(out, 0, n);
    NodeId log_var = t.clamp(t.slice(out, n, n), kLogVarMin, kLogVarMax);
    return Step{mean, t.exp(log_var)};
  }

  GaussianPrediction read(const Step& st) const {
    return GaussianPrediction{tape_->value(st.mean), tape_->value(st.variance)};
  }

  /// dLoss/dW flattened in ModelParams::flat_weights order.
  Vector weight_gradient(const nn::Gradients& g) const {
    Vector out(params_->weight_count());
    Eigen::Index at = 0;
    auto put = [&](NodeId id) {
      const Vector& v = g.wrt(id);
      out.segment(at, v.size()) = v;
      at += v.size();
    };
    for (const auto& l : encoder_) { put(l.weight); put(l.bias); }
    for (const auto& c : lstm_) { put(c.w_input); put(c.w_hidden); put(c.bias); }
    for (const auto& l : decoder_) { put(l.weight); put(l.bias); }
    return out;
  }

  Tape& tape() const { return *tape_; }
  const ModelParams& params() const { return *params_; }

 private:
  const ModelParams* params_;
  Tape* tape_;
  std::array<nn::BoundDense, 3> encoder_;
  std::array<nn::BoundLstm, 2> lstm_;
  std::array<nn::BoundDense, 4> decoder_;
};

struct ForwardResult {
  GaussianPrediction prediction;
  RecurrentState next_state;
};

/// Single tick from normalized inputs. The input state is not modified.
inline ForwardResult forward(const ModelParams& params, const RecurrentState& state,
                             const Vector& s, const Vector& u, const Vector& p, Tape& tape) {
  ModelGraph graph(params, tape);
  ModelGraph::State st = graph.bind_state(state);
  NodeId sn = tape.leaf(s);
  NodeId un = tape.leaf(u);
  NodeId pn = tape.leaf(p);
  ModelGraph::Step out = graph.step(st, sn, un, pn);
  return ForwardResult{graph.read(out), graph.read_state(st)};
}

inline ForwardResult forward(const ModelParams& params, const RecurrentState& state,
                             const Vector& s, const Vector& u, const Vector& p) {
  Tape tape;
  return forward(params, state, s, u, p, tape);
}

/// Closed-loop prediction over a command horizon. Node handles are kept so
/// that a caller can seed adjoints on the predictions and read gradients
/// with respect to the commands.
struct Rollout {
  std::vector<GaussianPrediction> predictions;
  std::vector<ModelGraph::Step> steps;
  std::vector<NodeId> commands;
  NodeId pb;
  RecurrentState final_state;
};

inline Rollout rollout(const ModelParams& params, const RecurrentState& state, const Vector& s_t,
                       const std::vector<Vector>& u_seq, const Vector& p, Tape& tape) {
  if (u_seq.empty()) throw ArgumentError("rollout: command sequence is empty");
  ModelGraph graph(params, tape);
  ModelGraph::State st = graph.bind_state(state);
  Rollout r;
  r.pb = tape.leaf(p);
  NodeId s = tape.leaf(s_t);
  for (const Vector& u : u_seq) {
    NodeId un = tape.leaf(u);
    r.commands.push_back(un);
    ModelGraph::Step step = graph.step(st, s, un, r.pb);
    r.steps.push_back(step);
    r.predictions.push_back(graph.read(step));
    s = step.mean;  // feed back the predicted mean
  }
  r.final_state = graph.read_state(st);
  return r;
}

}  // namespace spnpb
