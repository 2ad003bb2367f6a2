#pragma once

// Per-layer parameter blocks. A ParamPoint is a lifted point (W, b) of the
// quotient space; a TangentVector has the same block layout and carries the
// vector-space operations.

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "flatness/errors.hpp"
#include "flatness/tensor.hpp"

namespace flatness {

template <class Tag>
struct LayerBlocks {
  std::vector<Tensor> weights;
  /// Empty for bias-free networks, otherwise one vector per layer.
  std::vector<Tensor> biases;

  std::size_t layers() const noexcept { return weights.size(); }
  bool has_bias() const noexcept { return !biases.empty(); }

  /// Entry counts d_i of the weight blocks.
  std::vector<Index> weight_dims() const {
    std::vector<Index> d;
    for (const auto& w : weights) d.push_back(w.size());
    return d;
  }
  std::vector<Index> bias_dims() const {
    std::vector<Index> n;
    for (const auto& b : biases) n.push_back(b.size());
    return n;
  }

  Index size() const {
    Index n = 0;
    for (const auto& w : weights) n += w.size();
    for (const auto& b : biases) n += b.size();
    return n;
  }

  friend bool operator==(const LayerBlocks& a, const LayerBlocks& b) {
    return a.weights == b.weights && a.biases == b.biases;
  }
};

struct PointTag {};
struct TangentTag {};

using ParamPoint = LayerBlocks<PointTag>;
using TangentVector = LayerBlocks<TangentTag>;

template <class A, class B>
bool congruent(const LayerBlocks<A>& a, const LayerBlocks<B>& b) {
  if (a.weights.size() != b.weights.size() || a.biases.size() != b.biases.size()) return false;
  for (std::size_t i = 0; i < a.weights.size(); ++i)
    if (a.weights[i].shape() != b.weights[i].shape()) return false;
  for (std::size_t i = 0; i < a.biases.size(); ++i)
    if (a.biases[i].shape() != b.biases[i].shape()) return false;
  return true;
}

template <class A, class B>
void require_congruent(const LayerBlocks<A>& a, const LayerBlocks<B>& b, const char* what) {
  if (a.weights.size() != b.weights.size()) {
    throw ValidationError(std::string(what) + ": " + std::to_string(a.weights.size()) + " vs " +
                          std::to_string(b.weights.size()) + " layers");
  }
  if (a.biases.size() != b.biases.size()) throw ValidationError(std::string(what) + ": bias layout differs");
  for (std::size_t i = 0; i < a.weights.size(); ++i) {
    if (a.weights[i].shape() != b.weights[i].shape()) throw ShapeError(i, std::string(what) + ": weight shape differs");
    if (a.has_bias() && a.biases[i].shape() != b.biases[i].shape())
      throw ShapeError(i, std::string(what) + ": bias shape differs");
  }
}

/// Applies `f(Tensor& dst, const Tensor& src)` blockwise.
template <class A, class B, class F>
void for_each_block(LayerBlocks<A>& dst, const LayerBlocks<B>& src, F&& f) {
  for (std::size_t i = 0; i < dst.weights.size(); ++i) f(dst.weights[i], src.weights[i]);
  for (std::size_t i = 0; i < dst.biases.size(); ++i) f(dst.biases[i], src.biases[i]);
}

template <class To, class From>
LayerBlocks<To> retag(const LayerBlocks<From>& x) {
  return LayerBlocks<To>{x.weights, x.biases};
}

inline TangentVector as_tangent(const ParamPoint& p) { return retag<TangentTag>(p); }
inline ParamPoint as_point(const TangentVector& v) { return retag<PointTag>(v); }

template <class Tag>
LayerBlocks<Tag> zeros_like(const LayerBlocks<Tag>& x) {
  LayerBlocks<Tag> z = x;
  for (auto& w : z.weights) w.vec().setZero();
  for (auto& b : z.biases) b.vec().setZero();
  return z;
}

inline TangentVector zero_tangent(const ParamPoint& p) { return zeros_like(as_tangent(p)); }

/// Euclidean inner product over all blocks.
template <class A, class B>
double euclidean_dot(const LayerBlocks<A>& a, const LayerBlocks<B>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.weights.size(); ++i) s += a.weights[i].vec().dot(b.weights[i].vec());
  for (std::size_t i = 0; i < a.biases.size(); ++i) s += a.biases[i].vec().dot(b.biases[i].vec());
  return s;
}

template <class Tag>
double euclidean_norm(const LayerBlocks<Tag>& a) {
  return std::sqrt(euclidean_dot(a, a));
}

TangentVector& operator+=(TangentVector& a, const TangentVector& b);
TangentVector& operator-=(TangentVector& a, const TangentVector& b);
TangentVector& operator*=(TangentVector& a, double s);
TangentVector operator+(TangentVector a, const TangentVector& b);
TangentVector operator-(TangentVector a, const TangentVector& b);
TangentVector operator*(double s, TangentVector a);
TangentVector operator*(TangentVector a, double s);

/// point + t * direction.
ParamPoint displaced(const ParamPoint& point, double t, const TangentVector& direction);

/// Concatenation layer-major: W_1, b_1, W_2, b_2, ...
template <class Tag>
Eigen::VectorXd flatten(const LayerBlocks<Tag>& x) {
  Eigen::VectorXd out(x.size());
  Index pos = 0;
  for (std::size_t i = 0; i < x.weights.size(); ++i) {
    out.segment(pos, x.weights[i].size()) = x.weights[i].vec();
    pos += x.weights[i].size();
    if (x.has_bias()) {
      out.segment(pos, x.biases[i].size()) = x.biases[i].vec();
      pos += x.biases[i].size();
    }
  }
  return out;
}

/// Inverse of flatten, using `like` for the layout. Entries are not checked.
template <class Tag, class LikeTag>
LayerBlocks<Tag> unflatten(const Eigen::Ref<const Eigen::VectorXd>& flat, const LayerBlocks<LikeTag>& like) {
  if (flat.size() != like.size()) {
    throw ValidationError("unflatten: " + std::to_string(flat.size()) + " values for " +
                          std::to_string(like.size()) + " parameters");
  }
  LayerBlocks<Tag> out;
  Index pos = 0;
  for (std::size_t i = 0; i < like.weights.size(); ++i) {
    const Index d = like.weights[i].size();
    out.weights.push_back(Tensor::unchecked(like.weights[i].shape(), flat.segment(pos, d)));
    pos += d;
    if (like.has_bias()) {
      const Index nb = like.biases[i].size();
      out.biases.push_back(Tensor::unchecked(like.biases[i].shape(), flat.segment(pos, nb)));
      pos += nb;
    }
  }
  return out;
}

}  // namespace flatness
