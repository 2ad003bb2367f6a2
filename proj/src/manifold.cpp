#include "flatness/manifold.hpp"

#include <cmath>

#include "flatness/errors.hpp"

namespace flatness {

ScaleVector::ScaleVector(std::vector<double> values) : values_(std::move(values)) {
  if (values_.empty()) throw ValidationError("scale vector is empty");
  double prod = 1.0;
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (!(values_[i] > 0.0) || !std::isfinite(values_[i])) {
      throw ValidationError("scale entry " + std::to_string(i) + " is not a positive finite number");
    }
    prod *= values_[i];
  }
  if (std::abs(prod - 1.0) > 1e-12) {
    throw ValidationError("scale entries multiply to " + std::to_string(prod) + ", not 1");
  }
}

ScaleVector ScaleVector::identity(std::size_t layers) { return ScaleVector(std::vector<double>(layers, 1.0)); }

ScaleVector ScaleVector::exponential(std::span<const double> beta, double t) {
  double sum = 0.0;
  for (double b : beta) sum += b;
  if (std::abs(sum) > 1e-12) throw ValidationError("vertical generator does not sum to zero");
  std::vector<double> v;
  for (double b : beta) v.push_back(std::exp(t * b));
  // exp(sum) = 1 holds to rounding; renormalize the last entry so the product check passes.
  double prod = 1.0;
  for (std::size_t i = 0; i + 1 < v.size(); ++i) prod *= v[i];
  v.back() = 1.0 / prod;
  return ScaleVector(std::move(v));
}

double ScaleVector::cumulative(std::size_t i) const {
  double c = 1.0;
  for (std::size_t j = 0; j <= i; ++j) c *= values_.at(j);
  return c;
}

std::string to_string(MetricMode mode) {
  switch (mode) {
    case MetricMode::WeightsOnly: return "weights";
    case MetricMode::WeightsAndBiases: return "weights-biases";
    case MetricMode::Nodewise: return "nodewise";
  }
  return "unknown";
}

MetricMode metric_mode_from_string(const std::string& name) {
  if (name == "weights" || name == "weights-only") return MetricMode::WeightsOnly;
  if (name == "weights-biases") return MetricMode::WeightsAndBiases;
  if (name == "nodewise") return MetricMode::Nodewise;
  throw ValidationError("unknown metric mode '" + name + "'");
}

MetricMode default_mode(const ParamPoint& point) {
  return point.has_bias() ? MetricMode::WeightsAndBiases : MetricMode::WeightsOnly;
}

InvariantMetric::InvariantMetric(MetricMode mode, const ParamPoint& point)
    : mode_(mode), point_(point), inverse_diag_(as_tangent(point)) {
  if (mode == MetricMode::WeightsOnly && point.has_bias()) {
    throw ValidationError("the weights-only metric needs a bias-free point");
  }
  if (mode == MetricMode::WeightsAndBiases && !point.has_bias()) {
    throw ValidationError("the weights-and-biases metric needs a point with biases");
  }
  auto blockwise = [](Tensor& diag, const Tensor& block, std::size_t layer, const char* what) {
    const double sq = block.vec().squaredNorm();
    if (!(std::sqrt(sq) >= kDegenerateNorm)) throw DegenerateMetricError(layer, std::string(what) + " norm is zero");
    diag.vec().setConstant(sq);
  };
  auto entrywise = [](Tensor& diag, const Tensor& block, std::size_t layer, const char* what) {
    if ((block.vec().array().abs() < kDegenerateNorm).any()) {
      throw DegenerateMetricError(layer, std::string(what) + " has a zero entry");
    }
    diag.vec() = block.vec().array().square().matrix();
  };
  for (std::size_t i = 0; i < point.layers(); ++i) {
    if (mode == MetricMode::Nodewise) {
      entrywise(inverse_diag_.weights[i], point.weights[i], i, "weight");
      if (point.has_bias()) entrywise(inverse_diag_.biases[i], point.biases[i], i, "bias");
    } else {
      blockwise(inverse_diag_.weights[i], point.weights[i], i, "weight");
      if (point.has_bias()) blockwise(inverse_diag_.biases[i], point.biases[i], i, "bias");
    }
  }
}

double InvariantMetric::inner(const TangentVector& eta, const TangentVector& xi) const {
  require_congruent(point_, eta, "metric");
  require_congruent(point_, xi, "metric");
  double s = 0.0;
  auto add = [&s](const Tensor& d, const Tensor& a, const Tensor& b) {
    s += (a.vec().array() * b.vec().array() / d.vec().array()).sum();
  };
  for (std::size_t i = 0; i < point_.layers(); ++i) {
    add(inverse_diag_.weights[i], eta.weights[i], xi.weights[i]);
    if (point_.has_bias()) add(inverse_diag_.biases[i], eta.biases[i], xi.biases[i]);
  }
  return s;
}

double InvariantMetric::norm(const TangentVector& xi) const { return std::sqrt(std::max(0.0, inner(xi, xi))); }

TangentVector InvariantMetric::apply_inverse(const TangentVector& v) const {
  require_congruent(point_, v, "apply_inverse_metric");
  TangentVector out = v;
  for_each_block(out, inverse_diag_, [](Tensor& x, const Tensor& d) { x.vec().array() *= d.vec().array(); });
  return out;
}

ParamPoint transform(const ParamPoint& point, const ScaleVector& lambda) {
  if (lambda.size() != point.layers()) {
    throw ValidationError("scale vector has " + std::to_string(lambda.size()) + " entries for " +
                          std::to_string(point.layers()) + " layers");
  }
  ParamPoint out = point;
  for (std::size_t i = 0; i < point.layers(); ++i) {
    out.weights[i].vec() *= lambda[i];
    if (point.has_bias()) out.biases[i].vec() *= lambda.cumulative(i);
  }
  return out;
}

TangentVector transform_tangent(const TangentVector& xi, const ScaleVector& lambda) {
  return as_tangent(transform(as_point(xi), lambda));
}

double metric(MetricMode mode, const ParamPoint& point, const TangentVector& eta, const TangentVector& xi) {
  return InvariantMetric(mode, point).inner(eta, xi);
}

double metric_norm(MetricMode mode, const ParamPoint& point, const TangentVector& xi) {
  return InvariantMetric(mode, point).norm(xi);
}

TangentVector apply_inverse_metric(MetricMode mode, const ParamPoint& point, const TangentVector& v) {
  return InvariantMetric(mode, point).apply_inverse(v);
}

TangentVector rgrad(MetricMode mode, const LossGraph& graph, const ParamPoint& point, const Dataset& data,
                    EvalOptions opts) {
  const InvariantMetric g(mode, point);
  return g.apply_inverse(egrad(graph, point, data, opts));
}

std::vector<TangentVector> vertical_basis(MetricMode mode, const ParamPoint& point) {
  if (mode == MetricMode::Nodewise) throw ValidationError("no vertical basis for the nodewise metric");
  const std::size_t layers = point.layers();
  if (layers < 2) throw ValidationError("vertical space needs at least two layers");
  const InvariantMetric g(mode, point);

  std::vector<TangentVector> basis;
  for (std::size_t k = 0; k + 1 < layers; ++k) {
    // beta_k = 1, beta_{k+1} = -1; gamma_i = beta_1 + ... + beta_i.
    TangentVector v = zero_tangent(point);
    v.weights[k] = point.weights[k];
    v.weights[k + 1].vec() = -point.weights[k + 1].vec();
    if (point.has_bias()) v.biases[k] = point.biases[k];
    for (const TangentVector& u : basis) v -= g.inner(v, u) * u;
    const double n = g.norm(v);
    v *= 1.0 / n;
    basis.push_back(std::move(v));
  }
  return basis;
}

TangentVector horizontal_project(MetricMode mode, const ParamPoint& point, const TangentVector& xi) {
  const InvariantMetric g(mode, point);
  TangentVector out = xi;
  for (const TangentVector& v : vertical_basis(mode, point)) out -= g.inner(xi, v) * v;
  return out;
}

std::vector<double> vertical_generator(const ParamPoint& point, const TangentVector& v) {
  require_congruent(point, v, "vertical_generator");
  std::vector<double> beta;
  for (std::size_t i = 0; i < point.layers(); ++i) {
    beta.push_back(point.weights[i].vec().dot(v.weights[i].vec()) / point.weights[i].vec().squaredNorm());
  }
  return beta;
}

double class_invariant(MetricMode mode, const ParamPoint& point) {
  if (mode == MetricMode::Nodewise) throw ValidationError("class invariant is not defined for the nodewise metric");
  const InvariantMetric g(mode, point);  // validates norms
  double s = 0.0;
  for (std::size_t i = 0; i < point.layers(); ++i) {
    double sq = point.weights[i].vec().squaredNorm();
    if (mode == MetricMode::WeightsAndBiases) {
      const double scale = i == 0 ? 1.0 : point.biases[i - 1].vec().squaredNorm();
      sq += point.biases[i].vec().squaredNorm() / scale;
    }
    s += std::log(sq);
  }
  return s;
}

}  // namespace flatness
