#include "flatness/autodiff.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <stdexcept>

#include "flatness/errors.hpp"

namespace flatness::ad {

const Tensor& Var::value() const { return tape_->nodes_.at(id_).value; }

bool Var::requires_grad() const { return tape_->nodes_.at(id_).requires_grad; }

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), false, {}, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::variable(Tensor value) {
  nodes_.push_back(Node{std::move(value), true, {}, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::vector<Var> inputs, Backward backward) {
  const bool needs = recording_ && std::any_of(inputs.begin(), inputs.end(),
                                               [](const Var& v) { return v.requires_grad(); });
  if (!needs) return constant(std::move(value));
  Node node{std::move(value), true, {}, std::move(backward)};
  node.inputs.reserve(inputs.size());
  for (const Var& v : inputs) node.inputs.push_back(v.id());
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

std::vector<Var> Tape::gradient(const Var& output, std::span<const Var> wrt, bool create_graph) {
  if (&output.tape() != this) throw std::invalid_argument("gradient: output belongs to another tape");
  if (output.value().size() != 1) {
    throw ValidationError("gradient: output must be scalar, got shape " + shape_string(output.shape()));
  }

  const bool saved = recording_;
  recording_ = create_graph;
  const std::size_t n = output.id() + 1;
  std::vector<Var> grads(n);
  grads[output.id()] = constant(Tensor::unchecked(output.shape(), Eigen::VectorXd::Ones(1)));

  try {
    for (std::size_t i = n; i-- > 0;) {
      if (!grads[i].valid()) continue;
      // Copy what we need: the backward call appends nodes.
      const Node& node = nodes_[i];
      if (!node.backward) continue;
      const std::vector<std::size_t> inputs = node.inputs;
      const Backward backward = node.backward;
      std::vector<Var> input_grads = backward(grads[i]);
      for (std::size_t k = 0; k < inputs.size(); ++k) {
        const std::size_t p = inputs[k];
        if (k >= input_grads.size() || !input_grads[k].valid() || !nodes_[p].requires_grad) continue;
        grads[p] = grads[p].valid() ? add(grads[p], input_grads[k]) : input_grads[k];
      }
    }
  } catch (...) {
    recording_ = saved;
    throw;
  }
  recording_ = saved;

  std::vector<Var> out;
  out.reserve(wrt.size());
  for (const Var& w : wrt) {
    if (w.id() < n && grads[w.id()].valid()) {
      out.push_back(grads[w.id()]);
    } else {
      out.push_back(constant(Tensor::zeros(w.shape())));
    }
  }
  return out;
}

namespace {

void require_rank(const Var& x, Index rank, const char* op) {
  if (x.value().rank() != rank) {
    throw ValidationError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                          shape_string(x.shape()));
  }
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ValidationError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                          shape_string(b.shape()));
  }
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out = Tensor::unchecked(a.shape(), a.value().vec() + b.value().vec());
  return a.tape().record(std::move(out), {a, b}, [](const Var& g) { return std::vector<Var>{g, g}; });
}

Var matmul(const Var& a, const Var& b, bool transpose_a, bool transpose_b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const auto A = a.value().matrix();
  const auto B = b.value().matrix();
  const Index m = transpose_a ? A.cols() : A.rows();
  const Index k = transpose_a ? A.rows() : A.cols();
  const Index kb = transpose_b ? B.cols() : B.rows();
  const Index n = transpose_b ? B.rows() : B.cols();
  if (k != kb) {
    throw ValidationError("matmul: inner dimensions differ, " + shape_string(a.shape()) + " and " +
                          shape_string(b.shape()));
  }
  Tensor out = Tensor::zeros({m, n});
  auto C = out.matrix();
  if (!transpose_a && !transpose_b) {
    C.noalias() = A * B;
  } else if (transpose_a && !transpose_b) {
    C.noalias() = A.transpose() * B;
  } else if (!transpose_a && transpose_b) {
    C.noalias() = A * B.transpose();
  } else {
    C.noalias() = A.transpose() * B.transpose();
  }
  return a.tape().record(std::move(out), {a, b}, [a, b, transpose_a, transpose_b](const Var& g) {
    if (!transpose_a && !transpose_b) return std::vector<Var>{matmul(g, b, false, true), matmul(a, g, true, false)};
    if (transpose_a && !transpose_b) return std::vector<Var>{matmul(b, g, false, true), matmul(a, g, false, false)};
    if (!transpose_a && transpose_b) return std::vector<Var>{matmul(g, b, false, false), matmul(g, a, true, false)};
    return std::vector<Var>{matmul(b, g, true, true), matmul(g, a, true, true)};
  });
}

Var add_rowvec(const Var& x, const Var& b) {
  require_rank(x, 2, "add_rowvec");
  require_rank(b, 1, "add_rowvec");
  if (x.shape()[1] != b.shape()[0]) {
    throw ValidationError("add_rowvec: bias of size " + std::to_string(b.shape()[0]) + " for " +
                          shape_string(x.shape()));
  }
  Tensor out = x.value();
  out.matrix().rowwise() += b.value().vec().transpose();
  return x.tape().record(std::move(out), {x, b},
                         [](const Var& g) { return std::vector<Var>{g, sum_rows(g)}; });
}

Var sum_rows(const Var& x) {
  require_rank(x, 2, "sum_rows");
  Tensor out = Tensor::unchecked({x.shape()[1]}, x.value().matrix().colwise().sum().transpose());
  const Index rows = x.shape()[0];
  return x.tape().record(std::move(out), {x},
                         [rows](const Var& g) { return std::vector<Var>{broadcast_rows(g, rows)}; });
}

Var broadcast_rows(const Var& b, Index rows) {
  require_rank(b, 1, "broadcast_rows");
  Tensor out = Tensor::zeros({rows, b.shape()[0]});
  out.matrix().rowwise() = b.value().vec().transpose();
  return b.tape().record(std::move(out), {b}, [](const Var& g) { return std::vector<Var>{sum_rows(g)}; });
}

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  Shape original = x.shape();
  return x.tape().record(std::move(out), {x}, [original](const Var& g) {
    return std::vector<Var>{reshape(g, original)};
  });
}

Var gather(const Var& x, GatherMapPtr map) {
  if (x.shape() != map->source_shape) {
    throw ValidationError("gather: source shape " + shape_string(x.shape()) + " vs map " +
                          shape_string(map->source_shape));
  }
  const double* src = x.value().data();
  Eigen::VectorXd data(static_cast<Index>(map->index.size()));
  for (std::size_t k = 0; k < map->index.size(); ++k) {
    const Index s = map->index[k];
    data[static_cast<Index>(k)] = s < 0 ? 0.0 : src[s];
  }
  Tensor out = Tensor::unchecked(map->target_shape, std::move(data));
  return x.tape().record(std::move(out), {x}, [map](const Var& g) { return std::vector<Var>{scatter_add(g, map)}; });
}

Var scatter_add(const Var& x, GatherMapPtr map) {
  if (x.shape() != map->target_shape) {
    throw ValidationError("scatter_add: input shape " + shape_string(x.shape()) + " vs map " +
                          shape_string(map->target_shape));
  }
  Tensor out = Tensor::zeros(map->source_shape);
  double* dst = out.data();
  const double* src = x.value().data();
  for (std::size_t k = 0; k < map->index.size(); ++k) {
    const Index s = map->index[k];
    if (s >= 0) dst[s] += src[k];
  }
  return x.tape().record(std::move(out), {x}, [map](const Var& g) { return std::vector<Var>{gather(g, map)}; });
}

Var mask_mul(const Var& x, std::shared_ptr<const Eigen::VectorXd> mask) {
  if (mask->size() != x.value().size()) throw ValidationError("mask_mul: mask size mismatch");
  Tensor out = Tensor::unchecked(x.shape(), x.value().vec().cwiseProduct(*mask));
  return x.tape().record(std::move(out), {x}, [mask](const Var& g) { return std::vector<Var>{mask_mul(g, mask)}; });
}

Var dot(const Var& a, const Var& b) {
  require_same_shape(a, b, "dot");
  Tensor out = Tensor::scalar(a.value().vec().dot(b.value().vec()));
  return a.tape().record(std::move(out), {a, b},
                         [a, b](const Var& g) { return std::vector<Var>{scale(g, b), scale(g, a)}; });
}

Var scale(const Var& s, const Var& x) {
  if (s.value().size() != 1) throw ValidationError("scale: factor must be scalar");
  Tensor out = Tensor::unchecked(x.shape(), s.value()[0] * x.value().vec());
  return x.tape().record(std::move(out), {s, x}, [s, x](const Var& g) {
    return std::vector<Var>{dot(x, g), scale(s, g)};
  });
}

Var scale(const Var& x, double c) {
  Tensor out = Tensor::unchecked(x.shape(), c * x.value().vec());
  return x.tape().record(std::move(out), {x}, [c](const Var& g) { return std::vector<Var>{scale(g, c)}; });
}

Var relu(const Var& x) {
  // Subgradient 0 at 0; second derivative 0 everywhere.
  auto mask = std::make_shared<Eigen::VectorXd>(
      (x.value().vec().array() > 0.0).cast<double>().matrix());
  return mask_mul(x, std::move(mask));
}

Var add_bias(const Var& x, const Var& b) {
  const Shape shape = x.shape();
  if (shape.empty()) throw ValidationError("add_bias: scalar input");
  const Index channels = shape.back();
  const Index rows = x.value().size() / channels;
  if (shape.size() == 2) return add_rowvec(x, b);
  return reshape(add_rowvec(reshape(x, {rows, channels}), b), shape);
}

namespace {

GatherMapPtr im2col_map(Index n, Index h, Index w, Index c, Index k) {
  using Key = std::array<Index, 5>;
  thread_local std::map<Key, GatherMapPtr> cache;
  const Key key{n, h, w, c, k};
  if (auto it = cache.find(key); it != cache.end()) return it->second;
  if (cache.size() >= 8) cache.clear();

  const Index oh = h - k + 1;
  const Index ow = w - k + 1;
  const Index cols = c * k * k;
  auto map = std::make_shared<GatherMap>();
  map->source_shape = {n, h, w, c};
  map->target_shape = {n * oh * ow, cols};
  map->index.resize(static_cast<std::size_t>(n * oh * ow * cols));
  std::size_t pos = 0;
  for (Index s = 0; s < n; ++s)
    for (Index oy = 0; oy < oh; ++oy)
      for (Index ox = 0; ox < ow; ++ox)
        for (Index ch = 0; ch < c; ++ch)
          for (Index ky = 0; ky < k; ++ky)
            for (Index kx = 0; kx < k; ++kx) map->index[pos++] = ((s * h + oy + ky) * w + ox + kx) * c + ch;
  cache.emplace(key, map);
  return map;
}

}  // namespace

Var conv2d(const Var& x, const Var& weight) {
  require_rank(x, 4, "conv2d");
  require_rank(weight, 4, "conv2d");
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  const Index n = xs[0], h = xs[1], w = xs[2], c = xs[3];
  const Index out_channels = ws[0], k = ws[2];
  if (ws[1] != c || ws[3] != k) {
    throw ValidationError("conv2d: weight " + shape_string(ws) + " incompatible with input " + shape_string(xs));
  }
  if (k > h || k > w) throw ValidationError("conv2d: kernel larger than input " + shape_string(xs));
  const Index oh = h - k + 1;
  const Index ow = w - k + 1;
  Var cols = gather(x, im2col_map(n, h, w, c, k));
  Var kernel = reshape(weight, {out_channels, c * k * k});
  return reshape(matmul(cols, kernel, false, true), {n, oh, ow, out_channels});
}

Var maxpool2x2(const Var& x) {
  require_rank(x, 4, "maxpool2x2");
  const Shape& xs = x.shape();
  const Index n = xs[0], h = xs[1], w = xs[2], c = xs[3];
  const Index ph = h / 2, pw = w / 2;
  if (ph == 0 || pw == 0) throw ValidationError("maxpool2x2: input too small " + shape_string(xs));
  auto map = std::make_shared<GatherMap>();
  map->source_shape = xs;
  map->target_shape = {n, ph, pw, c};
  map->index.resize(static_cast<std::size_t>(n * ph * pw * c));
  const double* v = x.value().data();
  std::size_t pos = 0;
  for (Index s = 0; s < n; ++s)
    for (Index py = 0; py < ph; ++py)
      for (Index px = 0; px < pw; ++px)
        for (Index ch = 0; ch < c; ++ch) {
          Index best = -1;
          for (Index dy = 0; dy < 2; ++dy)
            for (Index dx = 0; dx < 2; ++dx) {
              const Index idx = ((s * h + 2 * py + dy) * w + 2 * px + dx) * c + ch;
              if (best < 0 || v[idx] > v[best]) best = idx;
            }
          map->index[pos++] = best;
        }
  return gather(x, std::move(map));
}

namespace {

// Row-wise softmax of a logits matrix.
RowMatrix softmax_rows(const ConstMatrixMap& z) {
  RowMatrix s = z;
  for (Index i = 0; i < s.rows(); ++i) {
    const double m = s.row(i).maxCoeff();
    s.row(i) = (s.row(i).array() - m).exp();
    s.row(i) /= s.row(i).sum();
  }
  return s;
}

void check_labels(const std::vector<int>& labels, Index rows, Index classes) {
  if (static_cast<Index>(labels.size()) != rows) {
    throw ValidationError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                          std::to_string(rows) + " rows");
  }
  for (int y : labels) {
    if (y < 0 || y >= classes) {
      throw ValidationError("softmax_cross_entropy: label " + std::to_string(y) + " out of range");
    }
  }
}

// (softmax(z) - onehot(y)) / N; differentiable once, with respect to z.
Var xent_grad(const Var& logits, const LabelsPtr& labels) {
  const auto z = logits.value().matrix();
  const Index n = z.rows();
  RowMatrix s = softmax_rows(z);
  RowMatrix g = s;
  for (Index i = 0; i < n; ++i) g(i, (*labels)[static_cast<std::size_t>(i)]) -= 1.0;
  g /= static_cast<double>(n);
  Tensor out = Tensor::zeros(logits.shape());
  out.matrix() = g;
  auto probs = std::make_shared<RowMatrix>(std::move(s));
  return logits.tape().record(std::move(out), {logits}, [logits, probs](const Var& u) {
    if (u.tape().recording()) {
      throw std::logic_error("third-order derivatives of softmax cross-entropy are not supported");
    }
    const RowMatrix& s = *probs;
    const auto U = u.value().matrix();
    RowMatrix su = s.cwiseProduct(U);
    Eigen::VectorXd row = su.rowwise().sum();
    RowMatrix dz = su - s.cwiseProduct(row.replicate(1, s.cols()));
    dz /= static_cast<double>(s.rows());
    Tensor t = Tensor::zeros(logits.shape());
    t.matrix() = dz;
    return std::vector<Var>{u.tape().constant(std::move(t))};
  });
}

}  // namespace

Var softmax_cross_entropy(const Var& logits, LabelsPtr labels) {
  require_rank(logits, 2, "softmax_cross_entropy");
  const auto z = logits.value().matrix();
  check_labels(*labels, z.rows(), z.cols());
  double total = 0.0;
  for (Index i = 0; i < z.rows(); ++i) {
    const double m = z.row(i).maxCoeff();
    const double lse = m + std::log((z.row(i).array() - m).exp().sum());
    total += lse - z(i, (*labels)[static_cast<std::size_t>(i)]);
  }
  Tensor out = Tensor::scalar(total / static_cast<double>(z.rows()));
  return logits.tape().record(std::move(out), {logits}, [logits, labels](const Var& g) {
    return std::vector<Var>{scale(g, xent_grad(logits, labels))};
  });
}

}  // namespace flatness::ad
