#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "flatness/errors.hpp"
#include "flatness/train.hpp"
#include "support.hpp"

using namespace flatness;
using namespace flatness::testing;

namespace {

void put_be32(std::ofstream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

struct IdxFiles {
  std::filesystem::path dir;
  std::string images, labels;

  explicit IdxFiles(const std::string& tag) {
    dir = std::filesystem::temp_directory_path() / ("flatness_idx_" + tag);
    std::filesystem::create_directories(dir);
    images = (dir / "images").string();
    labels = (dir / "labels").string();
  }
  ~IdxFiles() { std::filesystem::remove_all(dir); }

  /// n 2x3 images with pixel value (i * 6 + k) % 256 and labels i % 10.
  void write(std::uint32_t n, std::uint32_t image_magic = 0x803, std::uint32_t label_count = 0) const {
    std::ofstream im(images, std::ios::binary);
    put_be32(im, image_magic);
    put_be32(im, n);
    put_be32(im, 2);
    put_be32(im, 3);
    for (std::uint32_t i = 0; i < n * 6; ++i) im.put(static_cast<char>(i % 256));
    std::ofstream lb(labels, std::ios::binary);
    put_be32(lb, 0x801);
    put_be32(lb, label_count ? label_count : n);
    for (std::uint32_t i = 0; i < n; ++i) lb.put(static_cast<char>(i % 10));
  }
};

// Two Gaussian blobs separated along the first axis.
Dataset separable(Index n, std::uint64_t seed) {
  Dataset d = gen_synthetic(n, 2, 2, seed);
  for (Index i = 0; i < n; ++i) d.inputs[2 * i] += d.labels[i] == 1 ? 4.0 : -4.0;
  return d;
}

}  // namespace

TEST(Synthetic, ShapesAndLabels) {
  const Dataset d = gen_synthetic(500, 784, 10, 3);
  EXPECT_EQ(d.inputs.shape(), (Shape{500, 784}));
  ASSERT_EQ(d.labels.size(), 500u);
  for (int y : d.labels) {
    EXPECT_GE(y, 0);
    EXPECT_LT(y, 10);
  }
  EXPECT_EQ(d.classes, 10);
  EXPECT_NO_THROW(validate(d));
}

TEST(Synthetic, DeterministicPerSeed) {
  const Dataset a = gen_synthetic(50, 7, 3, 9), b = gen_synthetic(50, 7, 3, 9), c = gen_synthetic(50, 7, 3, 10);
  EXPECT_EQ(a.inputs, b.inputs);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_NE(a.inputs, c.inputs);
}

TEST(Synthetic, LabelHistogramWithinFiveSigma) {
  const Index n = 20000;
  const int classes = 10;
  const Dataset d = gen_synthetic(n, 1, classes, 4);
  std::vector<int> counts(classes, 0);
  for (int y : d.labels) ++counts[y];
  const double p = 1.0 / classes;
  const double mean = n * p, sigma = std::sqrt(n * p * (1 - p));
  for (int c : counts) EXPECT_LE(std::abs(c - mean), 5 * sigma);
  // Inputs are standard normal.
  EXPECT_NEAR(d.inputs.vec().mean(), 0.0, 5.0 / std::sqrt(static_cast<double>(n)));
}

TEST(Synthetic, RejectsEmptyRequests) {
  EXPECT_THROW(gen_synthetic(0, 3, 2, 0), ValidationError);
  EXPECT_THROW(gen_synthetic(3, 0, 2, 0), ValidationError);
  EXPECT_THROW(gen_synthetic(3, 3, 0, 0), ValidationError);
}

TEST(Dataset, SliceAndSelect) {
  const Dataset d = gen_synthetic(10, 3, 4, 5);
  const Dataset s = d.slice(2, 5);
  EXPECT_EQ(s.size(), 3);
  EXPECT_EQ(s.labels[0], d.labels[2]);
  EXPECT_EQ(s.inputs[0], d.inputs[6]);
  const std::vector<Index> rows{7, 1};
  const Dataset t = d.select(rows);
  EXPECT_EQ(t.labels, (std::vector<int>{d.labels[7], d.labels[1]}));
  EXPECT_EQ(t.inputs[3], d.inputs[3]);
}

TEST(Idx, ReadsImagesAndLabels) {
  IdxFiles f("ok");
  f.write(12);
  const Dataset d = load_mnist_idx(f.images, f.labels);
  EXPECT_EQ(d.inputs.shape(), (Shape{12, 6}));
  EXPECT_EQ(d.classes, 10);
  EXPECT_DOUBLE_EQ(d.inputs[7], 7.0 / 255.0);
  EXPECT_EQ(d.labels[11], 1);
  const Dataset s = load_mnist_idx(f.images, f.labels, 5);
  EXPECT_EQ(s.size(), 5);
  EXPECT_EQ(s.inputs, d.slice(0, 5).inputs);
}

TEST(Idx, BadMagicNamesOffsetZero) {
  IdxFiles f("magic");
  f.write(3, 0x804);
  try {
    load_mnist_idx(f.images, f.labels);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }
}

TEST(Idx, TruncatedAndMismatchedFilesAreRejected) {
  IdxFiles f("trunc");
  f.write(4);
  std::filesystem::resize_file(f.images, 16 + 4 * 6 - 1);
  EXPECT_THROW(load_mnist_idx(f.images, f.labels), ParseError);
  f.write(4, 0x803, 5);
  try {
    load_mnist_idx(f.images, f.labels);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), 4u);
  }
  EXPECT_THROW(load_mnist_idx((f.dir / "missing").string(), f.labels), ValidationError);
}

TEST(Idx, BundledMnistFiles) {
  const std::filesystem::path dir(FLATNESS_MNIST_DIR);
  const Dataset d =
      load_mnist_idx((dir / "train-images-idx3-ubyte").string(), (dir / "train-labels-idx1-ubyte").string());
  EXPECT_EQ(d.features(), 784);
  EXPECT_EQ(d.size(), 8000);
  EXPECT_GE(d.inputs.vec().minCoeff(), 0.0);
  EXPECT_LE(d.inputs.vec().maxCoeff(), 1.0);
  const Dataset s = load_mnist_idx((dir / "train-images-idx3-ubyte").string(),
                                   (dir / "train-labels-idx1-ubyte").string(), 5000);
  EXPECT_EQ(s.size(), 5000);
  EXPECT_EQ(s.inputs, d.slice(0, 5000).inputs);
}

TEST(Optimizers, SgdStep) {
  ParamPoint p;
  p.weights = {Tensor({1}, {1.0})};
  TangentVector g;
  g.weights = {Tensor({1}, {2.0})};
  EXPECT_DOUBLE_EQ(sgd_step(p, g, 0.1).weights[0][0], 0.8);
  EXPECT_EQ(sgd_step(p, zero_tangent(p), 0.1), p);
}

TEST(Optimizers, AdamFirstStepIsBiasCorrected) {
  ParamPoint p;
  p.weights = {Tensor({3}, {1.0, -2.0, 0.5})};
  TangentVector g;
  g.weights = {Tensor({3}, {0.3, -4.0, 1e-3})};
  const double lr = 0.01;
  const auto [q, state] = adam_step(p, g, adam_init(p), lr);
  EXPECT_EQ(state.step, 1);
  for (Index k = 0; k < 3; ++k) {
    // m_hat = g, v_hat = g^2 after one step.
    const double gk = g.weights[0][k];
    const double expect = p.weights[0][k] - lr * gk / (std::sqrt(gk * gk) + 1e-8);
    EXPECT_NEAR(q.weights[0][k], expect, 1e-15);
  }
  EXPECT_NEAR(std::abs(q.weights[0][0] - p.weights[0][0]), lr, 1e-7);
}

TEST(Train, ConfigValidation) {
  TrainConfig c;
  c.batch_size = 11;
  EXPECT_THROW(validate(c, 10), ValidationError);
  c.batch_size = 5;
  c.learning_rate = 0;
  EXPECT_THROW(validate(c, 10), ValidationError);
  c.learning_rate = 1e-3;
  c.target_train_accuracy = 0;
  EXPECT_THROW(validate(c, 10), ValidationError);
  c.target_train_accuracy = 1;
  EXPECT_NO_THROW(validate(c, 10));
}

TEST(Train, LinearModelSeparatesSeparableData) {
  const NetworkSpec spec = mlp_spec(2, {}, 2, true);
  const Dataset d = separable(100, 6);
  for (Optimizer opt : {Optimizer::SGD, Optimizer::Adam}) {
    TrainConfig cfg;
    cfg.optimizer = opt;
    cfg.batch_size = 10;
    cfg.learning_rate = opt == Optimizer::SGD ? 0.1 : 0.01;
    cfg.max_epochs = 200;
    cfg.target_train_accuracy = 1.0;
    const TrainResult r = train(build(spec), init(spec, 1), d, cfg);
    EXPECT_TRUE(r.reached_target) << to_string(opt);
    EXPECT_DOUBLE_EQ(r.history.back().accuracy, 1.0);
    EXPECT_DOUBLE_EQ(accuracy(build(spec), r.point, d), 1.0);
  }
}

TEST(Train, HistoryStartsAtEpochZeroAndStopsAtTarget) {
  const NetworkSpec spec = mlp_spec(2, {}, 2, true);
  TrainConfig cfg;
  cfg.batch_size = 10;
  cfg.learning_rate = 0.01;
  cfg.max_epochs = 3;
  cfg.target_train_accuracy = 1.0;
  cfg.target_loss = 0.0;
  const TrainResult r = train(build(spec), init(spec, 1), separable(50, 2), cfg);
  ASSERT_EQ(r.history.size(), 4u);
  EXPECT_EQ(r.history.front().epoch, 0);
  EXPECT_EQ(r.history.back().epoch, 3);
  EXPECT_FALSE(r.reached_target);
}

TEST(Train, DeterministicPerSeed) {
  const NetworkSpec spec = mlp_spec(6, {8}, 3, true);
  const Dataset d = gen_synthetic(40, 6, 3, 7);
  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.max_epochs = 5;
  cfg.seed = 3;
  const TrainResult a = train(build(spec), init(spec, 1), d, cfg);
  const TrainResult b = train(build(spec), init(spec, 1), d, cfg);
  EXPECT_EQ(a.point, b.point);
  ASSERT_EQ(a.history.size(), b.history.size());
  for (std::size_t k = 0; k < a.history.size(); ++k) EXPECT_EQ(a.history[k].loss, b.history[k].loss);
  cfg.seed = 4;
  EXPECT_NE(train(build(spec), init(spec, 1), d, cfg).point, a.point);
}

TEST(Train, DivergenceNamesTheEpoch) {
  const NetworkSpec spec = mlp_spec(6, {8}, 3, false);
  const Dataset d = gen_synthetic(40, 6, 3, 7);
  TrainConfig cfg;
  cfg.optimizer = Optimizer::SGD;
  cfg.batch_size = 8;
  cfg.learning_rate = 1e200;
  cfg.max_epochs = 5;
  try {
    train(build(spec), init(spec, 1), d, cfg);
    FAIL() << "expected divergence";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos) << e.what();
  }
}
