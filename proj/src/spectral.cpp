#include "flatness/spectral.hpp"

#include <cmath>
#include <random>

#include "flatness/errors.hpp"

namespace flatness {

void validate(const PowerConfig& cfg) {
  if (!(cfg.tol > 0.0)) throw ValidationError("power method tolerance must be positive");
  if (cfg.max_iter < 1) throw ValidationError("power method needs max_iter >= 1");
}

TangentVector riemannian_hvp(MetricMode mode, const LossGraph& graph, const ParamPoint& point,
                             const TangentVector& xi, const Dataset& data, EvalOptions opts) {
  const InvariantMetric g(mode, point);
  return g.apply_inverse(euclidean_hvp(graph, point, xi, data, opts));
}

namespace {

constexpr double kZeroDirection = 1e-14;

TangentVector random_tangent(const ParamPoint& point, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  TangentVector v = zero_tangent(point);
  for (auto& w : v.weights)
    for (Index k = 0; k < w.size(); ++k) w[k] = normal(rng);
  for (auto& b : v.biases)
    for (Index k = 0; k < b.size(); ++k) b[k] = normal(rng);
  return v;
}

// Generic power iteration: `apply` is the operator, `inner` the inner product
// it is self-adjoint under, `project` an optional map applied to each iterate.
template <class Apply, class Inner, class Project>
SpectralResult power_iterate(const ParamPoint& point, const PowerConfig& cfg, Apply&& apply, Inner&& inner,
                             Project&& project) {
  validate(cfg);
  auto norm = [&](const TangentVector& v) { return std::sqrt(std::max(0.0, inner(v, v))); };

  TangentVector xi = project(random_tangent(point, cfg.seed));
  xi *= 1.0 / norm(xi);

  SpectralResult res;
  for (int t = 0; t < cfg.max_iter; ++t) {
    TangentVector half = apply(xi);
    const double rayleigh = inner(xi, half);
    if (!std::isfinite(rayleigh)) throw IterationError(static_cast<std::size_t>(t), "non-finite Rayleigh quotient");
    res.trace.push_back(rayleigh);
    res.iterations = t + 1;

    const double n = norm(half);
    if (!std::isfinite(n)) throw IterationError(static_cast<std::size_t>(t), "non-finite Hessian-vector product");
    if (n <= kZeroDirection) {
      res.eigenvalue = 0.0;
      res.eigenvector = std::move(xi);
      res.converged = true;
      return res;
    }
    TangentVector next = project(std::move(half));
    next *= 1.0 / norm(next);
    const double delta = std::min(norm(next - xi), norm(next + xi));
    xi = std::move(next);
    if (delta <= cfg.tol) {
      res.converged = true;
      break;
    }
  }
  res.eigenvalue = inner(xi, apply(xi));
  if (!std::isfinite(res.eigenvalue)) {
    throw IterationError(static_cast<std::size_t>(res.iterations), "non-finite final eigenvalue");
  }
  res.eigenvector = std::move(xi);
  return res;
}

}  // namespace

SpectralResult riemannian_power_method(MetricMode mode, const LossGraph& graph, const ParamPoint& point,
                                       const Dataset& data, const PowerConfig& cfg) {
  graph.validate(point);
  const InvariantMetric g(mode, point);
  std::vector<TangentVector> vertical;
  if (cfg.project_horizontal) vertical = vertical_basis(mode, point);

  auto apply = [&](const TangentVector& xi) {
    return g.apply_inverse(euclidean_hvp(graph, point, xi, data, cfg.eval));
  };
  auto inner = [&](const TangentVector& a, const TangentVector& b) { return g.inner(a, b); };
  auto project = [&](TangentVector xi) {
    const TangentVector orig = xi;
    for (const auto& v : vertical) xi -= g.inner(orig, v) * v;
    return xi;
  };
  return power_iterate(point, cfg, apply, inner, project);
}

SpectralResult euclidean_power_method(const LossGraph& graph, const ParamPoint& point, const Dataset& data,
                                      const PowerConfig& cfg) {
  graph.validate(point);
  if (cfg.project_horizontal) throw ValidationError("horizontal projection needs a Riemannian metric");
  auto apply = [&](const TangentVector& xi) { return euclidean_hvp(graph, point, xi, data, cfg.eval); };
  auto inner = [](const TangentVector& a, const TangentVector& b) { return euclidean_dot(a, b); };
  auto project = [](TangentVector xi) { return xi; };
  return power_iterate(point, cfg, apply, inner, project);
}

Eigen::MatrixXd dense_hessian(const LossGraph& graph, const ParamPoint& point, const Dataset& data,
                              EvalOptions opts) {
  const Index n = point.size();
  if (n > kDenseLimit) {
    throw ValidationError("dense Hessian of " + std::to_string(n) + " parameters exceeds the limit of " +
                          std::to_string(kDenseLimit));
  }
  Eigen::MatrixXd h(n, n);
  Eigen::VectorXd e = Eigen::VectorXd::Zero(n);
  for (Index j = 0; j < n; ++j) {
    e[j] = 1.0;
    const TangentVector col = euclidean_hvp(graph, point, unflatten<TangentTag>(e, point), data, opts);
    h.col(j) = flatten(col);
    e[j] = 0.0;
  }
  return h;
}

Eigen::VectorXd oracle_spectrum(MetricMode mode, const LossGraph& graph, const ParamPoint& point,
                                const Dataset& data, EvalOptions opts) {
  const InvariantMetric g(mode, point);
  const Eigen::MatrixXd h = dense_hessian(graph, point, data, opts);
  const Eigen::VectorXd s = flatten(g.inverse_diagonal()).cwiseSqrt();
  Eigen::MatrixXd m = s.asDiagonal() * h * s.asDiagonal();
  m = 0.5 * (m + m.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(m, Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success) throw NumericalError("dense eigensolver failed");
  return solver.eigenvalues();
}

double oracle_spectral_norm(MetricMode mode, const LossGraph& graph, const ParamPoint& point, const Dataset& data,
                            EvalOptions opts) {
  const Eigen::VectorXd ev = oracle_spectrum(mode, graph, point, data, opts);
  return ev[ev.size() - 1];
}

double epsilon_sharpness(double loss_at_min, double spectral_norm, double eps) {
  if (!(eps > 0.0)) throw ValidationError("epsilon must be positive");
  if (loss_at_min < 0.0) throw ValidationError("loss must be non-negative");
  if (spectral_norm < 0.0) throw ValidationError("spectral norm must be non-negative");
  return spectral_norm * eps * eps / (2.0 * (1.0 + loss_at_min));
}

double relative_difference(double sigma_a, double sigma_b) {
  if (sigma_a == 0.0) throw ValidationError("relative difference against a zero reference");
  return std::abs(sigma_a - sigma_b) / std::abs(sigma_a);
}

}  // namespace flatness
