#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "flatness/network.hpp"

namespace flatness {

enum class Optimizer { SGD, Adam };

std::string to_string(Optimizer opt);
Optimizer optimizer_from_string(const std::string& name);

struct TrainConfig {
  Optimizer optimizer = Optimizer::Adam;
  Index batch_size = 256;
  double learning_rate = 1e-3;
  int max_epochs = 100;
  /// Training stops once the full-data accuracy reaches this value ...
  double target_train_accuracy = 0.99;
  /// ... and, when set, the full-data loss is at most this value.
  std::optional<double> target_loss;
  std::uint64_t seed = 0;
};

/// Checks batch_size in [1, n], learning_rate > 0, target accuracy in (0, 1].
void validate(const TrainConfig& cfg, Index n);

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  double accuracy = 0.0;
};

struct TrainResult {
  ParamPoint point;
  std::vector<EpochRecord> history;
  bool reached_target = false;
};

struct AdamState {
  TangentVector m;
  TangentVector v;
  long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

AdamState adam_init(const ParamPoint& point);

/// w - lr * g.
ParamPoint sgd_step(const ParamPoint& point, const TangentVector& grad, double lr);

/// One bias-corrected Adam update; returns the new point and state.
std::pair<ParamPoint, AdamState> adam_step(const ParamPoint& point, const TangentVector& grad, AdamState state,
                                           double lr);

/// Mini-batch training with per-epoch shuffling. Throws NumericalError naming
/// the epoch if the loss becomes non-finite.
TrainResult train(const NetworkGraph& graph, ParamPoint init_point, const Dataset& data, const TrainConfig& cfg);

}  // namespace flatness
