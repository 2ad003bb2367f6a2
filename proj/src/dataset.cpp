#include "flatness/dataset.hpp"

#include <array>
#include <fstream>
#include <iterator>
#include <random>

#include "flatness/errors.hpp"

namespace flatness {

Dataset Dataset::slice(Index begin, Index end) const {
  if (begin < 0 || end > size() || begin >= end) {
    throw ValidationError("dataset slice [" + std::to_string(begin) + ", " + std::to_string(end) + ") of " +
                          std::to_string(size()) + " samples");
  }
  const Index d = features();
  Dataset out;
  out.classes = classes;
  out.inputs = Tensor::unchecked({end - begin, d}, inputs.vec().segment(begin * d, (end - begin) * d));
  out.labels.assign(labels.begin() + begin, labels.begin() + end);
  return out;
}

Dataset Dataset::select(std::span<const Index> rows) const {
  const Index d = features();
  Dataset out;
  out.classes = classes;
  out.inputs = Tensor::zeros({static_cast<Index>(rows.size()), d});
  auto dst = out.inputs.matrix();
  const auto src = inputs.matrix();
  out.labels.reserve(rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    dst.row(static_cast<Index>(k)) = src.row(rows[k]);
    out.labels.push_back(labels[static_cast<std::size_t>(rows[k])]);
  }
  return out;
}

void validate(const Dataset& data) {
  if (data.size() < 1) throw ValidationError("dataset is empty");
  if (data.inputs.rank() != 2 || data.inputs.dim(0) != data.size()) {
    throw ValidationError("dataset inputs " + shape_string(data.inputs.shape()) + " do not match " +
                          std::to_string(data.size()) + " labels");
  }
  for (int y : data.labels) {
    if (y < 0 || y >= data.classes) throw ValidationError("label " + std::to_string(y) + " outside [0, classes)");
  }
}

Dataset gen_synthetic(Index n, Index d, int classes, std::uint64_t seed) {
  if (n < 1 || d < 1 || classes < 1) throw ValidationError("gen_synthetic: n, d and classes must be >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<int> label(0, classes - 1);
  Dataset out;
  out.classes = classes;
  Eigen::VectorXd x(n * d);
  for (Index i = 0; i < x.size(); ++i) x[i] = normal(rng);
  out.inputs = Tensor::unchecked({n, d}, std::move(x));
  out.labels.resize(static_cast<std::size_t>(n));
  for (auto& y : out.labels) y = label(rng);
  return out;
}

namespace {

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& buf, std::size_t offset, const std::string& path) {
  if (offset + 4 > buf.size()) throw ParseError(offset, path + ": truncated header");
  return (std::uint32_t{buf[offset]} << 24) | (std::uint32_t{buf[offset + 1]} << 16) |
         (std::uint32_t{buf[offset + 2]} << 8) | std::uint32_t{buf[offset + 3]};
}

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

}  // namespace

Dataset load_mnist_idx(const std::string& images_path, const std::string& labels_path,
                       std::optional<Index> subset) {
  const auto images = read_file(images_path);
  const auto labels = read_file(labels_path);

  if (read_be32(images, 0, images_path) != kImageMagic) throw ParseError(0, images_path + ": bad image magic");
  if (read_be32(labels, 0, labels_path) != kLabelMagic) throw ParseError(0, labels_path + ": bad label magic");

  const std::size_t count = read_be32(images, 4, images_path);
  const std::size_t rows = read_be32(images, 8, images_path);
  const std::size_t cols = read_be32(images, 12, images_path);
  const std::size_t label_count = read_be32(labels, 4, labels_path);
  if (count != label_count) {
    throw ParseError(4, "image count " + std::to_string(count) + " does not match label count " +
                            std::to_string(label_count));
  }
  const std::size_t pixels = rows * cols;
  if (images.size() < 16 + count * pixels) throw ParseError(images.size(), images_path + ": truncated image data");
  if (labels.size() < 8 + count) throw ParseError(labels.size(), labels_path + ": truncated label data");

  std::size_t n = count;
  if (subset) {
    if (*subset < 1 || static_cast<std::size_t>(*subset) > count) {
      throw ValidationError("subset " + std::to_string(*subset) + " outside [1, " + std::to_string(count) + "]");
    }
    n = static_cast<std::size_t>(*subset);
  }
  if (n == 0) throw ValidationError(images_path + ": no samples");

  Dataset out;
  out.classes = 10;
  Eigen::VectorXd x(static_cast<Index>(n * pixels));
  for (std::size_t i = 0; i < n * pixels; ++i) x[static_cast<Index>(i)] = images[16 + i] / 255.0;
  out.inputs = Tensor::unchecked({static_cast<Index>(n), static_cast<Index>(pixels)}, std::move(x));
  out.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = labels[8 + i];
    if (y > 9) throw ParseError(8 + i, labels_path + ": label " + std::to_string(y) + " out of range");
    out.labels[i] = y;
  }
  return out;
}

}  // namespace flatness
