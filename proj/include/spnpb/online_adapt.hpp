#pragma once

#include <cstddef>
#include <deque>
#include <vector>

#include "spnpb/dataset.hpp"
#include "spnpb/model.hpp"
#include "spnpb/nn/optim.hpp"
#include "spnpb/trainer.hpp"

namespace spnpb {

struct AdaptConfig {
  std::size_t threshold = 10;  // updates start once the buffer holds more than this
  std::size_t capacity = 50;   // oldest samples are evicted beyond this
  int epochs = 1;
  double learning_rate = 0.003;
  double momentum = 0.9;

  void validate() const {
    if (capacity < 2) throw ArgumentError("AdaptConfig: capacity must be >= 2");
    if (threshold >= capacity) throw ArgumentError("AdaptConfig: threshold must be < capacity");
    if (epochs < 1) throw ArgumentError("AdaptConfig: epochs must be >= 1");
    if (!(learning_rate > 0.0)) throw ArgumentError("AdaptConfig: learning rate must be positive");
  }
};

/// Rolling window of recent samples. Each sample is stored with the
/// recurrent state that preceded it, so after any eviction the window can be
/// replayed exactly from its oldest entry.
class AdaptBuffer {
 public:
  struct Entry {
    TimedSample sample;
    RecurrentState state_before;
  };

  explicit AdaptBuffer(AdaptConfig config = {}) : config_(config) { config_.validate(); }

  void push(TimedSample sample, RecurrentState state_before) {
    if (!entries_.empty() && sample.tick <= entries_.back().sample.tick)
      throw ArgumentError("AdaptBuffer::push: tick must increase");
    entries_.push_back(Entry{std::move(sample), std::move(state_before)});
    if (entries_.size() > config_.capacity) entries_.pop_front();
  }

  bool update_ready() const { return entries_.size() > config_.threshold; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const AdaptConfig& config() const { return config_; }

  /// Recurrent state just before the oldest retained sample.
  const RecurrentState& snapshot() const {
    if (entries_.empty()) throw PreconditionError("AdaptBuffer::snapshot: buffer is empty");
    return entries_.front().state_before;
  }

  std::vector<TimedSample> samples() const {
    std::vector<TimedSample> out;
    out.reserve(entries_.size());
    for (const Entry& e : entries_) out.push_back(e.sample);
    return out;
  }

  const std::deque<Entry>& entries() const { return entries_; }

 private:
  AdaptConfig config_;
  std::deque<Entry> entries_;
};

/// The PB estimate being adapted online, with its optimizer state.
struct LivePB {
  Vector p;
  nn::MomentumState optimizer;

  static LivePB zeros(int pb_dim, const AdaptConfig& config) {
    return LivePB{Vector::Zero(pb_dim),
                  nn::MomentumState(pb_dim, config.learning_rate, config.momentum)};
  }
};

struct BufferLoss {
  double value = 0.0;
  Vector pb_grad;
};

/// Teacher-forced NLL of the whole window starting from its snapshot,
/// averaged per sample, and its gradient with respect to p only.
inline BufferLoss buffer_nll(const ModelParams& model, const AdaptBuffer& buffer, const Vector& p) {
  if (buffer.empty()) throw PreconditionError("buffer_nll: buffer is empty");
  const std::vector<TimedSample> window = buffer.samples();
  Tape tape;
  ModelGraph graph(model, tape);
  ModelGraph::State st = graph.bind_state(buffer.snapshot());
  NodeId pb = tape.leaf(p);
  Seeds seeds;
  BufferLoss out;
  const double scale = 1.0 / static_cast<double>(window.size());
  out.value = scale * teacher_forced_nll(graph, st, window, pb, model.norm, &seeds);
  for (auto& seed : seeds) seed.second *= scale;
  out.pb_grad = tape.backward(seeds).wrt(pb);
  return out;
}

/// One online update: full-window loss, gradient in p, Momentum SGD step.
/// The network weights are read-only here.
inline double adapt_step(const ModelParams& model, const AdaptBuffer& buffer, LivePB& live) {
  if (!buffer.update_ready()) throw PreconditionError("adapt_step: buffer below threshold");
  double loss = 0.0;
  for (int e = 0; e < buffer.config().epochs; ++e) {
    BufferLoss l = buffer_nll(model, buffer, live.p);
    if (!l.pb_grad.allFinite()) throw ArgumentError("adapt_step: non-finite PB gradient");
    nn::momentum_update(live.p, l.pb_grad, live.optimizer);
    loss = l.value;
  }
  return loss;
}

}  // namespace spnpb
