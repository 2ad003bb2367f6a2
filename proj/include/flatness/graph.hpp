#pragma once

#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "flatness/autodiff.hpp"
#include "flatness/dataset.hpp"
#include "flatness/params.hpp"

namespace flatness {

/// Tape handles for one layer's parameters.
struct LayerVars {
  ad::Var weight;
  std::optional<ad::Var> bias;
};

/// A scalar loss over a batch, recorded onto a tape from parameter leaves.
class LossGraph {
 public:
  virtual ~LossGraph() = default;

  /// Throws ShapeError naming the offending layer.
  virtual void validate(const ParamPoint& point) const = 0;

  /// Rough count of intermediate doubles per sample; 0 when unknown.
  virtual Index activations_per_sample() const { return 0; }

  /// Records the mean loss over `batch`.
  virtual ad::Var record_loss(ad::Tape& tape, std::span<const LayerVars> params, const Dataset& batch) const = 0;
};

/// Datasets larger than `chunk_size` are processed in consecutive chunks whose
/// contributions are summed in order, so results do not depend on threading.
struct EvalOptions {
  /// 0 sizes chunks so their activations stay near kChunkActivations.
  Index chunk_size = 0;
};

/// Small chunks keep the tape's buffers cache-resident and below the
/// allocator's mmap threshold, which is several times faster on conv nets.
inline constexpr Index kChunkActivations = Index{1} << 19;

double eval(const LossGraph& graph, const ParamPoint& point, const Dataset& data, EvalOptions opts = {});

/// Mean loss and its Euclidean gradient.
std::pair<double, TangentVector> value_and_egrad(const LossGraph& graph, const ParamPoint& point,
                                                 const Dataset& data, EvalOptions opts = {});

TangentVector egrad(const LossGraph& graph, const ParamPoint& point, const Dataset& data, EvalOptions opts = {});

/// Exact Hessian-vector product, obtained by differentiating <egrad, v> with v
/// held constant.
TangentVector euclidean_hvp(const LossGraph& graph, const ParamPoint& point, const TangentVector& v,
                            const Dataset& data, EvalOptions opts = {});

/// f(w) = 1/2 w^T A w over the concatenated parameter vector. Ignores the data.
class QuadraticGraph final : public LossGraph {
 public:
  /// `layout` fixes the block structure; A must be square of matching size.
  QuadraticGraph(Eigen::MatrixXd a, ParamPoint layout);

  void validate(const ParamPoint& point) const override;
  ad::Var record_loss(ad::Tape& tape, std::span<const LayerVars> params, const Dataset& batch) const override;

  const Eigen::MatrixXd& matrix() const noexcept { return a_; }

 private:
  Eigen::MatrixXd a_;
  ParamPoint layout_;
};

}  // namespace flatness
