#include "flatness/network.hpp"

#include <cmath>
#include <random>

#include "flatness/errors.hpp"

namespace flatness {

NetworkSpec f1_spec(bool with_bias) {
  NetworkSpec s = mlp_spec(784, {300, 100}, 10, with_bias);
  s.name = "F1";
  return s;
}

NetworkSpec c1_spec(bool with_bias) {
  NetworkSpec s;
  s.name = "C1";
  s.input = {28, 28, 1};
  s.layers = {ConvLayer{5, 10}, MaxPoolLayer{}, ConvLayer{5, 20}, MaxPoolLayer{},
              FcLayer{320, 120}, FcLayer{120, 84}, FcLayer{84, 10}};
  s.with_bias = with_bias;
  s.classes = 10;
  return s;
}

NetworkSpec mlp_spec(Index input, std::vector<Index> hidden, int classes, bool with_bias) {
  NetworkSpec s;
  s.name = "mlp";
  s.input = {1, input, 1};
  Index prev = input;
  for (Index h : hidden) {
    s.layers.push_back(FcLayer{prev, h});
    prev = h;
  }
  s.layers.push_back(FcLayer{prev, classes});
  s.with_bias = with_bias;
  s.classes = classes;
  return s;
}

NetworkSpec lenet_spec(bool with_bias) {
  NetworkSpec s;
  s.name = "lenet";
  s.input = {28, 28, 1};
  s.layers = {ConvLayer{5, 6}, MaxPoolLayer{}, ConvLayer{5, 16}, MaxPoolLayer{},
              FcLayer{256, 120}, FcLayer{120, 84}, FcLayer{84, 10}};
  s.with_bias = with_bias;
  s.classes = 10;
  return s;
}

NetworkSpec preset(const std::string& name, bool with_bias) {
  NetworkSpec s;
  if (name == "F1" || name == "f1") {
    s = f1_spec(with_bias);
  } else if (name == "C1" || name == "c1") {
    s = c1_spec(with_bias);
  } else if (name == "mnist-fc") {
    s = mlp_spec(784, {512, 512, 512, 512, 512}, 10, with_bias);
    s.name = name;
  } else if (name == "mnist-fc-small") {
    s = mlp_spec(784, {128, 128, 128}, 10, with_bias);
    s.name = name;
  } else if (name == "lenet") {
    s = lenet_spec(with_bias);
  } else {
    throw ValidationError("unknown architecture '" + name + "'");
  }
  return s;
}

namespace {

struct Walk {
  std::vector<Shape> weights;
  std::vector<Index> biases;
  /// Doubles of input, im2col and layer outputs per sample.
  Index activations = 0;
};

Walk walk(const NetworkSpec& spec) {
  if (spec.layers.empty()) throw ValidationError("network has no layers");
  if (spec.input.height < 1 || spec.input.width < 1 || spec.input.channels < 1) {
    throw ValidationError("input geometry must be positive");
  }
  if (spec.classes < 1) throw ValidationError("class count must be positive");
  if (!std::holds_alternative<FcLayer>(spec.layers.back())) {
    throw ValidationError("the last layer must be fully connected");
  }

  Walk out;
  bool spatial = true;
  Index h = spec.input.height, w = spec.input.width, c = spec.input.channels;
  Index flat = spec.input.size();
  out.activations = flat;
  for (std::size_t k = 0; k < spec.layers.size(); ++k) {
    const std::size_t layer = out.weights.size();
    const auto& ls = spec.layers[k];
    if (const auto* fc = std::get_if<FcLayer>(&ls)) {
      const Index in = spatial ? h * w * c : flat;
      if (fc->in != in || fc->out < 1) {
        throw ShapeError(layer, "FC(" + std::to_string(fc->in) + ", " + std::to_string(fc->out) +
                                    ") receives " + std::to_string(in) + " inputs");
      }
      out.weights.push_back({fc->out, fc->in});
      out.biases.push_back(fc->out);
      spatial = false;
      flat = fc->out;
      out.activations += fc->out;
    } else if (const auto* conv = std::get_if<ConvLayer>(&ls)) {
      if (!spatial) throw ShapeError(layer, "convolution after a fully connected layer");
      if (conv->kernel < 1 || conv->kernel > h || conv->kernel > w || conv->out_channels < 1) {
        throw ShapeError(layer, "kernel " + std::to_string(conv->kernel) + " does not fit " + std::to_string(h) +
                                    "x" + std::to_string(w) + " input");
      }
      out.weights.push_back({conv->out_channels, c, conv->kernel, conv->kernel});
      out.biases.push_back(conv->out_channels);
      h = h - conv->kernel + 1;
      w = w - conv->kernel + 1;
      out.activations += h * w * (conv->kernel * conv->kernel * c + conv->out_channels);
      c = conv->out_channels;
    } else {
      if (!spatial) throw ValidationError("max pooling after a fully connected layer");
      if (h < 2 || w < 2) {
        throw ValidationError("max pooling of a " + std::to_string(h) + "x" + std::to_string(w) + " map");
      }
      h /= 2;
      w /= 2;
      out.activations += h * w * c;
    }
  }
  if (flat != spec.classes) {
    throw ValidationError("final layer has " + std::to_string(flat) + " outputs for " +
                          std::to_string(spec.classes) + " classes");
  }
  return out;
}

}  // namespace

void validate(const NetworkSpec& spec) { walk(spec); }

std::vector<Shape> weight_shapes(const NetworkSpec& spec) { return walk(spec).weights; }

std::vector<Index> bias_sizes(const NetworkSpec& spec) { return walk(spec).biases; }

Index param_count(const NetworkSpec& spec) {
  const Walk wk = walk(spec);
  Index n = 0;
  for (const auto& s : wk.weights) n += shape_size(s);
  if (spec.with_bias)
    for (Index b : wk.biases) n += b;
  return n;
}

NetworkGraph::NetworkGraph(NetworkSpec spec) : spec_(std::move(spec)) {
  const Walk wk = walk(spec_);
  weight_shapes_ = wk.weights;
  bias_sizes_ = wk.biases;
  activations_ = wk.activations;
}

NetworkGraph build(const NetworkSpec& spec) { return NetworkGraph(spec); }

void NetworkGraph::validate(const ParamPoint& point) const {
  if (point.layers() != weight_shapes_.size()) {
    throw ShapeError(std::min(point.layers(), weight_shapes_.size()),
                     "expected " + std::to_string(weight_shapes_.size()) + " layers, got " +
                         std::to_string(point.layers()));
  }
  if (point.has_bias() != spec_.with_bias) {
    throw ValidationError(spec_.with_bias ? "network expects biases" : "network has no biases");
  }
  for (std::size_t i = 0; i < weight_shapes_.size(); ++i) {
    if (point.weights[i].shape() != weight_shapes_[i]) {
      throw ShapeError(i, "weight shape " + shape_string(point.weights[i].shape()) + ", expected " +
                              shape_string(weight_shapes_[i]));
    }
    if (spec_.with_bias && point.biases[i].shape() != Shape{bias_sizes_[i]}) {
      throw ShapeError(i, "bias shape " + shape_string(point.biases[i].shape()) + ", expected (" +
                              std::to_string(bias_sizes_[i]) + ")");
    }
  }
}

ad::Var NetworkGraph::record_logits(ad::Tape& tape, std::span<const LayerVars> params, const Tensor& inputs) const {
  if (params.size() != weight_shapes_.size()) throw ShapeError(params.size(), "parameter count mismatch");
  if (inputs.rank() != 2 || inputs.dim(1) != spec_.input.size()) {
    throw ValidationError("inputs " + shape_string(inputs.shape()) + " do not match " +
                          std::to_string(spec_.input.size()) + " features");
  }
  const Index n = inputs.dim(0);
  ad::Var x = tape.constant(inputs);
  std::size_t layer = 0;
  const std::size_t last = weight_shapes_.size() - 1;
  for (const auto& ls : spec_.layers) {
    if (std::holds_alternative<MaxPoolLayer>(ls)) {
      x = ad::maxpool2x2(x);
      continue;
    }
    const LayerVars& p = params[layer];
    if (std::holds_alternative<ConvLayer>(ls)) {
      if (x.value().rank() == 2) x = ad::reshape(x, {n, spec_.input.height, spec_.input.width, spec_.input.channels});
      x = ad::conv2d(x, p.weight);
    } else {
      if (x.value().rank() != 2) x = ad::reshape(x, {n, x.value().size() / n});
      x = ad::matmul(x, p.weight, false, true);
    }
    if (p.bias) x = ad::add_bias(x, *p.bias);
    if (layer != last) x = ad::relu(x);
    ++layer;
  }
  return x;
}

ad::Var NetworkGraph::record_loss(ad::Tape& tape, std::span<const LayerVars> params, const Dataset& batch) const {
  ad::Var logits = record_logits(tape, params, batch.inputs);
  return ad::softmax_cross_entropy(logits, std::make_shared<const std::vector<int>>(batch.labels));
}

Tensor NetworkGraph::logits(const ParamPoint& point, const Tensor& inputs) const {
  validate(point);
  ad::Tape tape;
  std::vector<LayerVars> params;
  for (std::size_t i = 0; i < point.layers(); ++i) {
    LayerVars lv{tape.constant(point.weights[i]), std::nullopt};
    if (point.has_bias()) lv.bias = tape.constant(point.biases[i]);
    params.push_back(lv);
  }
  return record_logits(tape, params, inputs).value();
}

ParamPoint init(const NetworkSpec& spec, std::uint64_t seed) {
  const Walk wk = walk(spec);
  std::mt19937_64 rng(seed);
  ParamPoint p;
  for (const Shape& s : wk.weights) {
    Index fan_in = 1;
    for (std::size_t k = 1; k < s.size(); ++k) fan_in *= s[k];
    Index fan_out = s[0];
    for (std::size_t k = 2; k < s.size(); ++k) fan_out *= s[k];
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> u(-bound, bound);
    Eigen::VectorXd v(shape_size(s));
    for (Index k = 0; k < v.size(); ++k) v[k] = u(rng);
    p.weights.push_back(Tensor(s, std::move(v)));
  }
  if (spec.with_bias) {
    std::uniform_real_distribution<double> u(0.01, 0.1);
    for (Index n : wk.biases) {
      Eigen::VectorXd v(n);
      for (Index k = 0; k < n; ++k) v[k] = u(rng);
      p.biases.push_back(Tensor({n}, std::move(v)));
    }
  }
  return p;
}

std::vector<int> predict(const NetworkGraph& graph, const ParamPoint& point, const Tensor& inputs) {
  const Tensor z = graph.logits(point, inputs);
  const auto m = z.matrix();
  std::vector<int> out(static_cast<std::size_t>(m.rows()));
  for (Index i = 0; i < m.rows(); ++i) {
    Index arg = 0;
    m.row(i).maxCoeff(&arg);
    out[static_cast<std::size_t>(i)] = static_cast<int>(arg);
  }
  return out;
}

double accuracy(const NetworkGraph& graph, const ParamPoint& point, const Dataset& data) {
  validate(data);
  std::size_t correct = 0;
  const Index chunk = 2000;
  for (Index begin = 0; begin < data.size(); begin += chunk) {
    const Dataset part = data.slice(begin, std::min(data.size(), begin + chunk));
    const auto pred = predict(graph, point, part.inputs);
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == part.labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace flatness
