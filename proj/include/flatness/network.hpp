#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "flatness/graph.hpp"

namespace flatness {

struct FcLayer {
  Index in = 0;
  Index out = 0;
};

/// Square kernel, valid padding, stride 1.
struct ConvLayer {
  Index kernel = 0;
  Index out_channels = 0;
};

/// 2x2 window, stride 2.
struct MaxPoolLayer {};

using LayerSpec = std::variant<FcLayer, ConvLayer, MaxPoolLayer>;

struct InputGeometry {
  Index height = 1;
  Index width = 1;
  Index channels = 1;
  Index size() const { return height * width * channels; }
};

/// Layer stack with a ReLU after every trainable layer except the last.
struct NetworkSpec {
  std::string name;
  InputGeometry input;
  std::vector<LayerSpec> layers;
  bool with_bias = false;
  int classes = 10;
};

/// [FC(784,300), FC(300,100), FC(100,10)]
NetworkSpec f1_spec(bool with_bias);
/// [conv(5,5,10), conv(5,5,20), FC(320,120), FC(120,84), FC(84,10)], each conv followed by 2x2 pooling.
NetworkSpec c1_spec(bool with_bias);
/// 784 -> hidden x width -> 10.
NetworkSpec mlp_spec(Index input, std::vector<Index> hidden, int classes, bool with_bias);
/// Two conv-pool blocks (6 and 16 channels) then FC 120, 84, 10.
NetworkSpec lenet_spec(bool with_bias);
/// Named presets: F1, C1, mnist-fc (5 x 512), mnist-fc-small (3 x 128), lenet.
NetworkSpec preset(const std::string& name, bool with_bias);

/// Throws ValidationError when adjacent layers do not fit together or the
/// last layer does not produce `classes` outputs.
void validate(const NetworkSpec& spec);

/// Weight shapes of the trainable layers: (out, in) for FC, (out, in, k, k) for conv.
std::vector<Shape> weight_shapes(const NetworkSpec& spec);
std::vector<Index> bias_sizes(const NetworkSpec& spec);
Index param_count(const NetworkSpec& spec);

/// Softmax cross-entropy loss graph of a network.
class NetworkGraph final : public LossGraph {
 public:
  explicit NetworkGraph(NetworkSpec spec);

  const NetworkSpec& spec() const noexcept { return spec_; }
  std::size_t layers() const noexcept { return weight_shapes_.size(); }

  void validate(const ParamPoint& point) const override;
  Index activations_per_sample() const override { return activations_; }
  ad::Var record_loss(ad::Tape& tape, std::span<const LayerVars> params, const Dataset& batch) const override;
  ad::Var record_logits(ad::Tape& tape, std::span<const LayerVars> params, const Tensor& inputs) const;

  /// Forward pass only; returns N x classes logits.
  Tensor logits(const ParamPoint& point, const Tensor& inputs) const;

 private:
  NetworkSpec spec_;
  std::vector<Shape> weight_shapes_;
  std::vector<Index> bias_sizes_;
  Index activations_ = 0;
};

NetworkGraph build(const NetworkSpec& spec);

/// Glorot-uniform weights; biases uniform in [0.01, 0.1] when the network has them.
ParamPoint init(const NetworkSpec& spec, std::uint64_t seed);

std::vector<int> predict(const NetworkGraph& graph, const ParamPoint& point, const Tensor& inputs);
double accuracy(const NetworkGraph& graph, const ParamPoint& point, const Dataset& data);

}  // namespace flatness
