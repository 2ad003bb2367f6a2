#pragma once

// Tape-based reverse-mode differentiation over dense tensors.
//
// Backward rules are themselves written in terms of recorded operations, so a
// gradient computed with `create_graph = true` can be differentiated again.
// That second pass is what gives exact Hessian-vector products:
//
//   H v = d/dw < df/dw, v >,   v held constant.
//
// Third and higher derivatives are not supported; the softmax cross-entropy
// gradient node refuses to be differentiated while the tape is recording.

#include <cstddef>
#include <deque>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "flatness/tensor.hpp"

namespace flatness::ad {

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  bool valid() const noexcept { return tape_ != nullptr; }
  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  /// Maps the upstream gradient to one gradient per input (invalid Var = none).
  using Backward = std::function<std::vector<Var>(const Var& grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var variable(Tensor value);

  /// Records an operation result. When the tape is not recording, or no input
  /// requires a gradient, the result is stored as a constant.
  Var record(Tensor value, std::vector<Var> inputs, Backward backward);

  /// Gradient of a scalar `output` with respect to each of `wrt`. Leaves that
  /// do not influence the output get a zero gradient. With `create_graph` the
  /// backward pass is recorded and the returned Vars are differentiable.
  std::vector<Var> gradient(const Var& output, std::span<const Var> wrt, bool create_graph = false);

  bool recording() const noexcept { return recording_; }
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  friend class Var;

  struct Node {
    Tensor value;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    Backward backward;
  };

  std::deque<Node> nodes_;
  bool recording_ = true;
};

/// Index map for gather/scatter: target[k] = source[index[k]], with -1 meaning 0.
struct GatherMap {
  Shape source_shape;
  Shape target_shape;
  std::vector<Index> index;
};
using GatherMapPtr = std::shared_ptr<const GatherMap>;
using LabelsPtr = std::shared_ptr<const std::vector<int>>;

// Linear algebra and bookkeeping.
Var add(const Var& a, const Var& b);
/// op(a) * op(b) for rank-2 operands.
Var matmul(const Var& a, const Var& b, bool transpose_a = false, bool transpose_b = false);
/// x (M x C) plus b (C) broadcast over rows.
Var add_rowvec(const Var& x, const Var& b);
Var sum_rows(const Var& x);
Var broadcast_rows(const Var& b, Index rows);
Var reshape(const Var& x, Shape shape);
Var gather(const Var& x, GatherMapPtr map);
Var scatter_add(const Var& x, GatherMapPtr map);
/// Elementwise product with a constant mask.
Var mask_mul(const Var& x, std::shared_ptr<const Eigen::VectorXd> mask);
Var dot(const Var& a, const Var& b);
/// s * x with s a rank-0 Var.
Var scale(const Var& s, const Var& x);
Var scale(const Var& x, double c);

// Network primitives.
Var relu(const Var& x);
/// Adds b along the last axis of x.
Var add_bias(const Var& x, const Var& b);
/// Valid-padding, stride-1 convolution. x is NHWC, weight is (out, in, k, k).
Var conv2d(const Var& x, const Var& weight);
/// 2x2 max pooling with stride 2 over an NHWC tensor; odd edges are dropped.
Var maxpool2x2(const Var& x);
/// Mean softmax cross-entropy of logits (N x C) against integer labels.
Var softmax_cross_entropy(const Var& logits, LabelsPtr labels);

}  // namespace flatness::ad
