#pragma once

#include <cstdint>
#include <vector>

#include "flatness/manifold.hpp"

namespace flatness {

struct PowerConfig {
  double tol = 1e-8;
  int max_iter = 1000;
  std::uint64_t seed = 0;
  /// Project every iterate onto the horizontal space. Not needed for
  /// rescaling-invariant losses; kept as a verification switch.
  bool project_horizontal = false;
  EvalOptions eval;
};

void validate(const PowerConfig& cfg);

struct SpectralResult {
  /// Rayleigh quotient at the returned eigenvector (signed).
  double eigenvalue = 0.0;
  /// Unit length in the norm the iteration used.
  TangentVector eigenvector;
  int iterations = 0;
  /// Rayleigh quotient of each iterate, one entry per iteration.
  std::vector<double> trace;
  bool converged = false;
};

/// Hess f(W)[xi] = G^{-1} (Euclidean Hessian) xi.
TangentVector riemannian_hvp(MetricMode mode, const LossGraph& graph, const ParamPoint& point,
                             const TangentVector& xi, const Dataset& data, EvalOptions opts = {});

/// Power iteration on the Riemannian Hessian with metric normalization. Stops
/// when min(||x' - x||_g, ||x' + x||_g) <= tol.
SpectralResult riemannian_power_method(MetricMode mode, const LossGraph& graph, const ParamPoint& point,
                                       const Dataset& data, const PowerConfig& cfg = {});

/// Same iteration with the Euclidean inner product.
SpectralResult euclidean_power_method(const LossGraph& graph, const ParamPoint& point, const Dataset& data,
                                      const PowerConfig& cfg = {});

/// Largest parameter count the dense routines accept.
inline constexpr Index kDenseLimit = 2000;

/// Column j is the Hessian-vector product with the j-th unit vector, in
/// flatten() order.
Eigen::MatrixXd dense_hessian(const LossGraph& graph, const ParamPoint& point, const Dataset& data,
                              EvalOptions opts = {});

/// Ascending eigenvalues of G^{-1/2} H G^{-1/2}.
Eigen::VectorXd oracle_spectrum(MetricMode mode, const LossGraph& graph, const ParamPoint& point,
                                const Dataset& data, EvalOptions opts = {});

/// Largest eigenvalue of G^{-1/2} H G^{-1/2} from a dense symmetric eigensolve.
double oracle_spectral_norm(MetricMode mode, const LossGraph& graph, const ParamPoint& point, const Dataset& data,
                            EvalOptions opts = {});

/// spectral_norm * eps^2 / (2 (1 + loss)).
double epsilon_sharpness(double loss_at_min, double spectral_norm, double eps);

/// |a - b| / a.
double relative_difference(double sigma_a, double sigma_b);

}  // namespace flatness
