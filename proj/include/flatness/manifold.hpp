#pragma once

// Quotient geometry of rescaling-equivalent parameters.
//
// Two points are equivalent when one is obtained from the other by scaling
// layer i by lambda_i with prod(lambda) = 1 (biases scale by the running
// product lambda_1 ... lambda_i). The metric below divides each block by its
// squared norm, which makes it constant along equivalence classes.

#include <span>
#include <string>
#include <vector>

#include "flatness/graph.hpp"

namespace flatness {

/// Positive layer multipliers whose product is one.
class ScaleVector {
 public:
  /// Throws ValidationError unless every entry is positive and finite and
  /// |prod - 1| <= 1e-12.
  explicit ScaleVector(std::vector<double> values);

  static ScaleVector identity(std::size_t layers);
  /// exp(t * beta); beta must sum to zero.
  static ScaleVector exponential(std::span<const double> beta, double t);

  std::size_t size() const noexcept { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }
  const std::vector<double>& values() const noexcept { return values_; }
  /// lambda_1 * ... * lambda_{i+1}, the bias multiplier of layer i (0-based).
  double cumulative(std::size_t i) const;

 private:
  std::vector<double> values_;
};

enum class MetricMode { WeightsOnly, WeightsAndBiases, Nodewise };

std::string to_string(MetricMode mode);
MetricMode metric_mode_from_string(const std::string& name);
/// WeightsAndBiases for points with biases, WeightsOnly otherwise.
MetricMode default_mode(const ParamPoint& point);

/// Blocks and entries with magnitude below this are treated as off-manifold.
inline constexpr double kDegenerateNorm = 1e-12;

/// The invariant metric at a fixed base point. Validates the point once and
/// caches the diagonal of the inverse metric.
class InvariantMetric {
 public:
  InvariantMetric(MetricMode mode, const ParamPoint& point);

  MetricMode mode() const noexcept { return mode_; }
  const ParamPoint& point() const noexcept { return point_; }

  double inner(const TangentVector& eta, const TangentVector& xi) const;
  double norm(const TangentVector& xi) const;
  TangentVector apply_inverse(const TangentVector& v) const;
  /// Diagonal of G^{-1} laid out like the point.
  const TangentVector& inverse_diagonal() const noexcept { return inverse_diag_; }

 private:
  MetricMode mode_;
  ParamPoint point_;
  TangentVector inverse_diag_;
};

ParamPoint transform(const ParamPoint& point, const ScaleVector& lambda);
/// Pushforward of a tangent vector under the same rescaling.
TangentVector transform_tangent(const TangentVector& xi, const ScaleVector& lambda);

double metric(MetricMode mode, const ParamPoint& point, const TangentVector& eta, const TangentVector& xi);
double metric_norm(MetricMode mode, const ParamPoint& point, const TangentVector& xi);
TangentVector apply_inverse_metric(MetricMode mode, const ParamPoint& point, const TangentVector& v);

/// G^{-1} times the Euclidean gradient.
TangentVector rgrad(MetricMode mode, const LossGraph& graph, const ParamPoint& point, const Dataset& data,
                    EvalOptions opts = {});

/// L - 1 metric-orthonormal directions tangent to the equivalence class.
std::vector<TangentVector> vertical_basis(MetricMode mode, const ParamPoint& point);

/// Removes the vertical component of xi.
TangentVector horizontal_project(MetricMode mode, const ParamPoint& point, const TangentVector& xi);

/// Recovers beta with v_i = beta_i W_i from a vertical vector.
std::vector<double> vertical_generator(const ParamPoint& point, const TangentVector& v);

/// sum_i log ||block_i||^2, constant on equivalence classes.
double class_invariant(MetricMode mode, const ParamPoint& point);

}  // namespace flatness
