#pragma once

#include <stdexcept>
#include <string>

namespace spnpb {

/// Tensor or vector dimensions that do not line up.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A caller passed a value outside the operation's domain.
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// An operation was invoked before its precondition was met.
class PreconditionError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(int epoch, const std::string& what)
      : std::runtime_error(what), epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

class ControllerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed file contents.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {
inline void require_shape(bool ok, const char* what) {
  if (!ok) throw ShapeError(what);
}
}  // namespace detail

}  // namespace spnpb
