#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "spnpb/error.hpp"

namespace spnpb::nn {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Handle to a value recorded on a Tape.
struct NodeId {
  std::uint32_t index = 0;
  friend bool operator==(NodeId, NodeId) = default;
};

enum class OpKind { Dense, Tanh, Exp, Clamp, Concat, Slice, Add, LstmStep };

inline const char* to_string(OpKind kind) {
  switch (kind) {
    case OpKind::Dense: return "dense";
    case OpKind::Tanh: return "tanh";
    case OpKind::Exp: return "exp";
    case OpKind::Clamp: return "clamp";
    case OpKind::Concat: return "concat";
    case OpKind::Slice: return "slice";
    case OpKind::Add: return "add";
    case OpKind::LstmStep: return "lstm_step";
  }
  return "?";
}

namespace ops {

struct Dense {
  NodeId weight, bias, x, out;
  Eigen::Index rows, cols;
};
struct Tanh {
  NodeId x, out;
};
struct Exp {
  NodeId x, out;
};
struct Clamp {
  NodeId x, out;
  double lo, hi;
};
struct Concat {
  std::vector<NodeId> parts;
  NodeId out;
};
struct Slice {
  NodeId x, out;
  Eigen::Index offset;
};
struct Add {
  NodeId a, b, out;
};
// Gate layout in the stacked 4H pre-activation: (input, forget, output, candidate).
struct LstmStep {
  NodeId w_input, w_hidden, bias, x, h_prev, c_prev, h_out, c_out;
  Eigen::Index hidden, input;
  Vector gates;   // post-activation i, f, o, g
  Vector tanh_c;  // tanh of the new cell state
};

}  // namespace ops

using Op = std::variant<ops::Dense, ops::Tanh, ops::Exp, ops::Clamp, ops::Concat,
                        ops::Slice, ops::Add, ops::LstmStep>;

inline OpKind kind_of(const Op& op) { return static_cast<OpKind>(op.index()); }

class Gradients;

/// Records primitive vector operations during a forward pass so that the
/// adjoints of every leaf can be recovered by a single reverse sweep.
///
/// Matrices live on the tape as column-major flattened vectors; the Dense and
/// LstmStep records remember the shape.
class Tape {
 public:
  Tape() = default;

  NodeId leaf(Vector value) {
    NodeId id = push(std::move(value));
    is_leaf_.back() = true;
    return id;
  }

  /// Matrix leaf, stored flattened column-major.
  template <class Derived>
    requires(Derived::ColsAtCompileTime != 1)
  NodeId leaf(const Eigen::MatrixBase<Derived>& value) {
    const Matrix m = value;
    return leaf(Vector(Eigen::Map<const Vector>(m.data(), m.size())));
  }

  NodeId dense(NodeId weight, NodeId bias, NodeId x) {
    const Eigen::Index rows = size(bias);
    const Eigen::Index cols = size(x);
    detail::require_shape(size(weight) == rows * cols, "dense: weight is not rows x cols");
    Vector y = matrix(weight, rows, cols) * value(x) + value(bias);
    NodeId out = push(std::move(y));
    ops_.push_back(ops::Dense{weight, bias, x, out, rows, cols});
    return out;
  }

  NodeId tanh(NodeId x) {
    NodeId out = push(value(x).array().tanh().matrix());
    ops_.push_back(ops::Tanh{x, out});
    return out;
  }

  NodeId exp(NodeId x) {
    NodeId out = push(value(x).array().exp().matrix());
    ops_.push_back(ops::Exp{x, out});
    return out;
  }

  NodeId clamp(NodeId x, double lo, double hi) {
    NodeId out = push(value(x).cwiseMax(lo).cwiseMin(hi));
    ops_.push_back(ops::Clamp{x, out, lo, hi});
    return out;
  }

  NodeId concat(std::vector<NodeId> parts) {
    Eigen::Index n = 0;
    for (NodeId p : parts) n += size(p);
    Vector y(n);
    Eigen::Index at = 0;
    for (NodeId p : parts) {
      y.segment(at, size(p)) = value(p);
      at += size(p);
    }
    NodeId out = push(std::move(y));
    ops_.push_back(ops::Concat{std::move(parts), out});
    return out;
  }

  NodeId slice(NodeId x, Eigen::Index offset, Eigen::Index length) {
    detail::require_shape(offset >= 0 && length >= 0 && offset + length <= size(x),
                          "slice: range out of bounds");
    NodeId out = push(value(x).segment(offset, length));
    ops_.push_back(ops::Slice{x, out, offset});
    return out;
  }

  NodeId add(NodeId a, NodeId b) {
    detail::require_shape(size(a) == size(b), "add: length mismatch");
    NodeId out = push(value(a) + value(b));
    ops_.push_back(ops::Add{a, b, out});
    return out;
  }

  /// One forget-gate LSTM step. Returns (h, c).
  std::pair<NodeId, NodeId> lstm_step(NodeId w_input, NodeId w_hidden, NodeId bias, NodeId x,
                                      NodeId h_prev, NodeId c_prev) {
    const Eigen::Index hidden = size(h_prev);
    const Eigen::Index input = size(x);
    detail::require_shape(size(c_prev) == hidden, "lstm_step: c/h length mismatch");
    detail::require_shape(size(bias) == 4 * hidden, "lstm_step: bias must be 4H");
    detail::require_shape(size(w_input) == 4 * hidden * input, "lstm_step: input weight shape");
    detail::require_shape(size(w_hidden) == 4 * hidden * hidden, "lstm_step: hidden weight shape");

    Vector z = matrix(w_input, 4 * hidden, input) * value(x) +
               matrix(w_hidden, 4 * hidden, hidden) * value(h_prev) + value(bias);
    Vector gates(4 * hidden);
    gates.head(3 * hidden) = (1.0 / (1.0 + (-z.head(3 * hidden).array()).exp())).matrix();
    gates.tail(hidden) = z.tail(hidden).array().tanh().matrix();

    const auto i = gates.segment(0, hidden).array();
    const auto f = gates.segment(hidden, hidden).array();
    const auto o = gates.segment(2 * hidden, hidden).array();
    const auto g = gates.segment(3 * hidden, hidden).array();
    Vector c = (f * value(c_prev).array() + i * g).matrix();
    Vector tanh_c = c.array().tanh().matrix();
    Vector h = (o * tanh_c.array()).matrix();

    NodeId h_out = push(std::move(h));
    NodeId c_out = push(std::move(c));
    ops_.push_back(ops::LstmStep{w_input, w_hidden, bias, x, h_prev, c_prev, h_out, c_out,
                                 hidden, input, std::move(gates), std::move(tanh_c)});
    return {h_out, c_out};
  }

  const Vector& value(NodeId id) const { return values_.at(id.index); }
  Eigen::Index size(NodeId id) const { return value(id).size(); }
  bool is_leaf(NodeId id) const { return is_leaf_.at(id.index); }
  std::size_t node_count() const { return values_.size(); }
  const std::vector<Op>& ops() const { return ops_; }
  bool empty() const { return ops_.empty(); }

  /// Node produced by the most recent operation (or the last leaf if none).
  NodeId last() const {
    if (values_.empty()) throw PreconditionError("tape has no nodes");
    return NodeId{static_cast<std::uint32_t>(values_.size() - 1)};
  }

  /// Reverse sweep seeded with adjoints on arbitrary nodes.
  Gradients backward(std::span<const std::pair<NodeId, Vector>> seeds) const;

  /// Reverse sweep seeded on the last recorded node.
  Gradients backward(const Vector& output_grads) const;

 private:
  NodeId push(Vector v) {
    values_.push_back(std::move(v));
    is_leaf_.push_back(false);
    return NodeId{static_cast<std::uint32_t>(values_.size() - 1)};
  }

  Eigen::Map<const Matrix> matrix(NodeId id, Eigen::Index rows, Eigen::Index cols) const {
    return Eigen::Map<const Matrix>(value(id).data(), rows, cols);
  }

  std::vector<Vector> values_;
  std::vector<bool> is_leaf_;
  std::vector<Op> ops_;
};

/// Adjoints of every node after a reverse sweep. Nodes that did not
/// participate report exact zeros.
class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(std::vector<Vector> adjoints) : adjoints_(std::move(adjoints)) {}

  const Vector& wrt(NodeId id) const { return adjoints_.at(id.index); }

  /// Reshape a matrix leaf's adjoint.
  Matrix wrt(NodeId id, Eigen::Index rows, Eigen::Index cols) const {
    return Eigen::Map<const Matrix>(wrt(id).data(), rows, cols);
  }

  bool empty() const { return adjoints_.empty(); }

 private:
  std::vector<Vector> adjoints_;
};

inline Gradients Tape::backward(std::span<const std::pair<NodeId, Vector>> seeds) const {
  if (ops_.empty() && values_.empty()) return Gradients{};
  std::vector<Vector> adj(values_.size());
  for (std::size_t n = 0; n < values_.size(); ++n) adj[n] = Vector::Zero(values_[n].size());
  for (const auto& [id, g] : seeds) {
    detail::require_shape(g.size() == size(id), "backward: seed shape mismatch");
    adj.at(id.index) += g;
  }

  auto grad = [&adj](NodeId id) -> Vector& { return adj[id.index]; };

  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
    std::visit(
        [&](const auto& op) {
          using T = std::decay_t<decltype(op)>;
          if constexpr (std::is_same_v<T, ops::Dense>) {
            const Vector& gy = grad(op.out);
            if (gy.isZero(0.0)) return;
            Eigen::Map<Matrix> gw(grad(op.weight).data(), op.rows, op.cols);
            gw.noalias() += gy * value(op.x).transpose();
            grad(op.bias) += gy;
            grad(op.x).noalias() += matrix(op.weight, op.rows, op.cols).transpose() * gy;
          } else if constexpr (std::is_same_v<T, ops::Tanh>) {
            const auto y = value(op.out).array();
            grad(op.x).array() += grad(op.out).array() * (1.0 - y * y);
          } else if constexpr (std::is_same_v<T, ops::Exp>) {
            grad(op.x).array() += grad(op.out).array() * value(op.out).array();
          } else if constexpr (std::is_same_v<T, ops::Clamp>) {
            const Vector& x = value(op.x);
            const Vector& gy = grad(op.out);
            Vector& gx = grad(op.x);
            for (Eigen::Index k = 0; k < x.size(); ++k)
              if (x[k] > op.lo && x[k] < op.hi) gx[k] += gy[k];
          } else if constexpr (std::is_same_v<T, ops::Concat>) {
            const Vector& gy = grad(op.out);
            Eigen::Index at = 0;
            for (NodeId p : op.parts) {
              const Eigen::Index n = size(p);
              grad(p) += gy.segment(at, n);
              at += n;
            }
          } else if constexpr (std::is_same_v<T, ops::Slice>) {
            const Vector& gy = grad(op.out);
            grad(op.x).segment(op.offset, gy.size()) += gy;
          } else if constexpr (std::is_same_v<T, ops::Add>) {
            const Vector& gy = grad(op.out);
            grad(op.a) += gy;
            grad(op.b) += gy;
          } else if constexpr (std::is_same_v<T, ops::LstmStep>) {
            const Eigen::Index H = op.hidden;
            const Vector& dh = grad(op.h_out);
            const Vector& dc_out = grad(op.c_out);
            if (dh.isZero(0.0) && dc_out.isZero(0.0)) return;
            const auto i = op.gates.segment(0, H).array();
            const auto f = op.gates.segment(H, H).array();
            const auto o = op.gates.segment(2 * H, H).array();
            const auto g = op.gates.segment(3 * H, H).array();
            const auto tc = op.tanh_c.array();

            const Eigen::ArrayXd dc = dc_out.array() + dh.array() * o * (1.0 - tc * tc);
            Vector dz(4 * H);
            dz.segment(0, H) = (dc * g * i * (1.0 - i)).matrix();
            dz.segment(H, H) = (dc * value(op.c_prev).array() * f * (1.0 - f)).matrix();
            dz.segment(2 * H, H) = (dh.array() * tc * o * (1.0 - o)).matrix();
            dz.segment(3 * H, H) = (dc * i * (1.0 - g * g)).matrix();

            grad(op.c_prev).array() += dc * f;
            Eigen::Map<Matrix> gwx(grad(op.w_input).data(), 4 * H, op.input);
            Eigen::Map<Matrix> gwh(grad(op.w_hidden).data(), 4 * H, H);
            gwx.noalias() += dz * value(op.x).transpose();
            gwh.noalias() += dz * value(op.h_prev).transpose();
            grad(op.bias) += dz;
            grad(op.x).noalias() += matrix(op.w_input, 4 * H, op.input).transpose() * dz;
            grad(op.h_prev).noalias() += matrix(op.w_hidden, 4 * H, H).transpose() * dz;
          }
        },
        *it);
  }
  return Gradients(std::move(adj));
}

inline Gradients Tape::backward(const Vector& output_grads) const {
  if (values_.empty()) return Gradients{};
  const std::pair<NodeId, Vector> seed{last(), output_grads};
  return backward(std::span<const std::pair<NodeId, Vector>>(&seed, 1));
}

}  // namespace spnpb::nn
