#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "flatness/tensor.hpp"

namespace flatness {

/// Inputs are stored one sample per row (N x d). Image inputs are flattened
/// row-major, height x width x channels.
struct Dataset {
  Tensor inputs;
  std::vector<int> labels;
  int classes = 0;

  Index size() const noexcept { return static_cast<Index>(labels.size()); }
  Index features() const { return inputs.dim(1); }

  /// Rows [begin, end).
  Dataset slice(Index begin, Index end) const;
  Dataset select(std::span<const Index> rows) const;
};

/// Checks N >= 1, a rank-2 input matrix with N rows and labels in [0, classes).
void validate(const Dataset& data);

/// Standard normal inputs with uniformly random labels.
Dataset gen_synthetic(Index n, Index d, int classes, std::uint64_t seed);

/// Reads an IDX image/label file pair. Pixels are scaled to [0, 1]. With
/// `subset`, only the first `subset` samples are kept.
Dataset load_mnist_idx(const std::string& images_path, const std::string& labels_path,
                       std::optional<Index> subset = std::nullopt);

}  // namespace flatness
