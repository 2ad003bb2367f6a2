#include "flatness/train.hpp"

#include <cmath>
#include <numeric>
#include <random>

#include "flatness/errors.hpp"

namespace flatness {

std::string to_string(Optimizer opt) { return opt == Optimizer::SGD ? "sgd" : "adam"; }

Optimizer optimizer_from_string(const std::string& name) {
  if (name == "sgd" || name == "SGD") return Optimizer::SGD;
  if (name == "adam" || name == "Adam") return Optimizer::Adam;
  throw ValidationError("unknown optimizer '" + name + "'");
}

void validate(const TrainConfig& cfg, Index n) {
  if (cfg.batch_size < 1 || cfg.batch_size > n) {
    throw ValidationError("batch size " + std::to_string(cfg.batch_size) + " outside [1, " + std::to_string(n) + "]");
  }
  if (!(cfg.learning_rate > 0.0)) throw ValidationError("learning rate must be positive");
  if (!(cfg.target_train_accuracy > 0.0 && cfg.target_train_accuracy <= 1.0)) {
    throw ValidationError("target accuracy must lie in (0, 1]");
  }
  if (cfg.max_epochs < 0) throw ValidationError("max_epochs must be non-negative");
}

AdamState adam_init(const ParamPoint& point) {
  AdamState s;
  s.m = zero_tangent(point);
  s.v = zero_tangent(point);
  return s;
}

ParamPoint sgd_step(const ParamPoint& point, const TangentVector& grad, double lr) {
  return displaced(point, -lr, grad);
}

std::pair<ParamPoint, AdamState> adam_step(const ParamPoint& point, const TangentVector& grad, AdamState state,
                                           double lr) {
  require_congruent(point, grad, "adam_step");
  if (state.m.layers() == 0) state = adam_init(point);
  ++state.step;
  const double b1 = state.beta1, b2 = state.beta2, eps = state.eps;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  ParamPoint out = point;
  auto update = [&](Tensor& w, Tensor& m, Tensor& v, const Tensor& g) {
    m.vec() = b1 * m.vec() + (1.0 - b1) * g.vec();
    v.vec() = b2 * v.vec() + (1.0 - b2) * g.vec().cwiseAbs2();
    w.vec().array() -= lr * (m.vec().array() / c1) / ((v.vec().array() / c2).sqrt() + eps);
  };
  for (std::size_t i = 0; i < point.layers(); ++i) {
    update(out.weights[i], state.m.weights[i], state.v.weights[i], grad.weights[i]);
    if (point.has_bias()) update(out.biases[i], state.m.biases[i], state.v.biases[i], grad.biases[i]);
  }
  return {std::move(out), std::move(state)};
}

TrainResult train(const NetworkGraph& graph, ParamPoint init_point, const Dataset& data, const TrainConfig& cfg) {
  validate(data);
  validate(cfg, data.size());
  graph.validate(init_point);

  std::mt19937_64 rng(cfg.seed);
  std::vector<Index> order(static_cast<std::size_t>(data.size()));
  std::iota(order.begin(), order.end(), Index{0});

  TrainResult res;
  res.point = std::move(init_point);
  AdamState adam = adam_init(res.point);

  auto done = [&](double loss, double acc) {
    return acc >= cfg.target_train_accuracy && (!cfg.target_loss || loss <= *cfg.target_loss);
  };
  auto record = [&](int epoch) {
    const double loss = eval(graph, res.point, data);
    if (!std::isfinite(loss)) throw NumericalError("training diverged at epoch " + std::to_string(epoch));
    const double acc = accuracy(graph, res.point, data);
    res.history.push_back({epoch, loss, acc});
    return done(loss, acc);
  };

  if (record(0)) {
    res.reached_target = true;
    return res;
  }
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (Index begin = 0; begin < data.size(); begin += cfg.batch_size) {
      const Index end = std::min(data.size(), begin + cfg.batch_size);
      const Dataset batch =
          data.select(std::span<const Index>(order.data() + begin, static_cast<std::size_t>(end - begin)));
      std::pair<double, TangentVector> step;
      try {
        step = value_and_egrad(graph, res.point, batch);
      } catch (const NumericalError& e) {
        throw NumericalError("training diverged at epoch " + std::to_string(epoch) + ": " + e.what());
      }
      const TangentVector& grad = step.second;
      if (cfg.optimizer == Optimizer::SGD) {
        res.point = sgd_step(res.point, grad, cfg.learning_rate);
      } else {
        std::tie(res.point, adam) = adam_step(res.point, grad, std::move(adam), cfg.learning_rate);
      }
    }
    if (record(epoch)) {
      res.reached_target = true;
      break;
    }
  }
  return res;
}

}  // namespace flatness
