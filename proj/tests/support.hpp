#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "flatness/network.hpp"
#include "flatness/params.hpp"

namespace flatness::testing {

inline double rel_err(const Eigen::VectorXd& got, const Eigen::VectorXd& want) {
  const double scale = want.norm();
  return (got - want).norm() / (scale > 0.0 ? scale : 1.0);
}

inline double rel_err(double got, double want) {
  return std::abs(got - want) / (want != 0.0 ? std::abs(want) : 1.0);
}

template <class Tag>
double rel_err(const LayerBlocks<Tag>& got, const LayerBlocks<Tag>& want) {
  return rel_err(flatten(got), flatten(want));
}

/// Standard normal entries laid out like `point`.
inline TangentVector random_tangent(const ParamPoint& point, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd flat(point.size());
  for (Index i = 0; i < flat.size(); ++i) flat[i] = normal(rng);
  return unflatten<TangentTag>(flat, point);
}

inline ParamPoint random_point(const ParamPoint& like, std::uint64_t seed) {
  return as_point(random_tangent(like, seed));
}

/// Valid scaling with entries exp(u_i), u_i uniform in [-a, a], renormalized.
inline std::vector<double> random_lambda(std::size_t layers, double a, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unif(-a, a);
  std::vector<double> logs(layers);
  double sum = 0.0;
  for (auto& l : logs) sum += (l = unif(rng));
  std::vector<double> out;
  for (auto l : logs) out.push_back(std::exp(l - sum / static_cast<double>(layers)));
  return out;
}

/// 6x6x1 input, conv 3x3 to 2 channels, 2x2 pooling, FC(8, 3).
inline NetworkSpec tiny_conv_spec(bool with_bias) {
  NetworkSpec s;
  s.name = "tiny-conv";
  s.input = {6, 6, 1};
  s.layers = {ConvLayer{3, 2}, MaxPoolLayer{}, FcLayer{8, 3}};
  s.with_bias = with_bias;
  s.classes = 3;
  return s;
}

}  // namespace flatness::testing
