#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace flatness {

/// Bad input: malformed shapes, invalid scale vectors, unparsable files.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Parameter shape does not match what the graph expects at `layer`.
class ShapeError : public ValidationError {
 public:
  ShapeError(std::size_t layer, const std::string& what)
      : ValidationError("layer " + std::to_string(layer) + ": " + what), layer_(layer) {}
  std::size_t layer() const noexcept { return layer_; }

 private:
  std::size_t layer_;
};

/// Binary file could not be parsed; `offset` is the byte position of the fault.
class ParseError : public ValidationError {
 public:
  ParseError(std::size_t offset, const std::string& what)
      : ValidationError("offset " + std::to_string(offset) + ": " + what), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// Numerical failure: non-finite values, divergence, off-manifold points.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A layer norm (or entry, for the nodewise metric) is too close to zero for
/// the invariant metric to be defined.
class DegenerateMetricError : public NumericalError {
 public:
  DegenerateMetricError(std::size_t layer, const std::string& what)
      : NumericalError("degenerate metric at layer " + std::to_string(layer) + ": " + what),
        layer_(layer) {}
  std::size_t layer() const noexcept { return layer_; }

 private:
  std::size_t layer_;
};

/// Non-finite value encountered inside an iterative procedure.
class IterationError : public NumericalError {
 public:
  IterationError(std::size_t iteration, const std::string& what)
      : NumericalError("iteration " + std::to_string(iteration) + ": " + what),
        iteration_(iteration) {}
  std::size_t iteration() const noexcept { return iteration_; }

 private:
  std::size_t iteration_;
};

}  // namespace flatness
