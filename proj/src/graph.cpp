#include "flatness/graph.hpp"

namespace flatness {

namespace {

struct Leaves {
  std::vector<LayerVars> layers;
  std::vector<ad::Var> flat;  // layer-major, weight then bias
};

Leaves make_leaves(ad::Tape& tape, const ParamPoint& point) {
  Leaves out;
  for (std::size_t i = 0; i < point.layers(); ++i) {
    LayerVars lv{tape.variable(point.weights[i]), std::nullopt};
    out.flat.push_back(lv.weight);
    if (point.has_bias()) {
      lv.bias = tape.variable(point.biases[i]);
      out.flat.push_back(*lv.bias);
    }
    out.layers.push_back(lv);
  }
  return out;
}

TangentVector to_tangent(const std::vector<ad::Var>& grads, const ParamPoint& like) {
  TangentVector out;
  std::size_t k = 0;
  for (std::size_t i = 0; i < like.layers(); ++i) {
    out.weights.push_back(grads[k++].value());
    if (like.has_bias()) out.biases.push_back(grads[k++].value());
  }
  return out;
}

// Calls fn(batch, weight) for each chunk; weight = chunk size / N.
template <class F>
void for_each_chunk(const LossGraph& graph, const Dataset& data, EvalOptions opts, F&& fn) {
  validate(data);
  const Index n = data.size();
  Index chunk = opts.chunk_size;
  if (chunk <= 0) {
    const Index per_sample = graph.activations_per_sample();
    chunk = per_sample > 0 ? std::max<Index>(1, kChunkActivations / per_sample) : n;
  }
  if (n <= chunk) {
    fn(data, 1.0);
    return;
  }
  for (Index begin = 0; begin < n; begin += chunk) {
    const Index end = std::min(n, begin + chunk);
    fn(data.slice(begin, end), static_cast<double>(end - begin) / static_cast<double>(n));
  }
}

void require_finite(double value, const char* what) {
  if (!std::isfinite(value)) throw NumericalError(std::string(what) + " is not finite");
}

}  // namespace

double eval(const LossGraph& graph, const ParamPoint& point, const Dataset& data, EvalOptions opts) {
  graph.validate(point);
  double total = 0.0;
  for_each_chunk(graph, data, opts, [&](const Dataset& batch, double weight) {
    ad::Tape tape;
    Leaves leaves = make_leaves(tape, point);
    total += weight * graph.record_loss(tape, leaves.layers, batch).value().item();
  });
  return total;
}

std::pair<double, TangentVector> value_and_egrad(const LossGraph& graph, const ParamPoint& point,
                                                 const Dataset& data, EvalOptions opts) {
  graph.validate(point);
  double total = 0.0;
  std::optional<TangentVector> grad;
  for_each_chunk(graph, data, opts, [&](const Dataset& batch, double weight) {
    ad::Tape tape;
    Leaves leaves = make_leaves(tape, point);
    ad::Var loss = graph.record_loss(tape, leaves.layers, batch);
    total += weight * loss.value().item();
    TangentVector g = to_tangent(tape.gradient(loss, leaves.flat), point);
    g *= weight;
    if (grad) {
      *grad += g;
    } else {
      grad = std::move(g);
    }
  });
  require_finite(total, "loss");
  return {total, std::move(*grad)};
}

TangentVector egrad(const LossGraph& graph, const ParamPoint& point, const Dataset& data, EvalOptions opts) {
  return value_and_egrad(graph, point, data, opts).second;
}

TangentVector euclidean_hvp(const LossGraph& graph, const ParamPoint& point, const TangentVector& v,
                            const Dataset& data, EvalOptions opts) {
  graph.validate(point);
  require_congruent(point, v, "euclidean_hvp");
  std::optional<TangentVector> result;
  for_each_chunk(graph, data, opts, [&](const Dataset& batch, double weight) {
    ad::Tape tape;
    Leaves leaves = make_leaves(tape, point);
    ad::Var loss = graph.record_loss(tape, leaves.layers, batch);
    std::vector<ad::Var> grads = tape.gradient(loss, leaves.flat, /*create_graph=*/true);

    // <grad, v> with v constant.
    std::optional<ad::Var> inner;
    std::size_t k = 0;
    for (std::size_t i = 0; i < v.layers(); ++i) {
      ad::Var term = ad::dot(grads[k++], tape.constant(v.weights[i]));
      inner = inner ? ad::add(*inner, term) : term;
      if (v.has_bias()) inner = ad::add(*inner, ad::dot(grads[k++], tape.constant(v.biases[i])));
    }
    TangentVector hv = to_tangent(tape.gradient(*inner, leaves.flat), point);
    hv *= weight;
    if (result) {
      *result += hv;
    } else {
      result = std::move(hv);
    }
  });
  return std::move(*result);
}

QuadraticGraph::QuadraticGraph(Eigen::MatrixXd a, ParamPoint layout) : a_(std::move(a)), layout_(std::move(layout)) {
  if (a_.rows() != a_.cols() || a_.rows() != layout_.size()) {
    throw ValidationError("QuadraticGraph: matrix size does not match the parameter layout");
  }
}

void QuadraticGraph::validate(const ParamPoint& point) const {
  require_congruent(layout_, point, "QuadraticGraph");
}

ad::Var QuadraticGraph::record_loss(ad::Tape& tape, std::span<const LayerVars> params, const Dataset&) const {
  std::vector<ad::Var> pieces;
  for (const auto& lv : params) {
    pieces.push_back(lv.weight);
    if (lv.bias) pieces.push_back(*lv.bias);
  }
  ad::Var a = tape.constant(Tensor::unchecked({a_.rows(), a_.cols()},
                                              Eigen::Map<const Eigen::VectorXd>(RowMatrix(a_).data(), a_.size())));
  // w = [p_1; p_2; ...] built as a sum of scattered blocks.
  const Index n = a_.rows();
  std::optional<ad::Var> w;
  Index offset = 0;
  for (const ad::Var& p : pieces) {
    const Index len = p.value().size();
    auto map = std::make_shared<ad::GatherMap>();
    map->source_shape = {n, 1};
    map->target_shape = p.shape();
    map->index.resize(static_cast<std::size_t>(len));
    for (Index j = 0; j < len; ++j) map->index[static_cast<std::size_t>(j)] = offset + j;
    ad::Var placed = ad::scatter_add(p, map);
    w = w ? ad::add(*w, placed) : placed;
    offset += len;
  }
  return ad::scale(ad::dot(*w, ad::matmul(a, *w)), 0.5);
}

}  // namespace flatness
