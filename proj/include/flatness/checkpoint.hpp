#pragma once

// Checkpoints are a JSON header plus a flat little-endian f64 file holding
// every parameter layer-major (weight, then bias, per layer). The header
// carries the network spec, the seed, the layer shapes and a CRC-32 of the
// binary payload.

#include <cstdint>
#include <string>

#include <json.hpp>

#include "flatness/network.hpp"

namespace flatness {

inline constexpr int kCheckpointVersion = 1;

class CheckpointError : public ValidationError {
 public:
  enum class Kind { Io, Version, Checksum, Layout };
  CheckpointError(Kind kind, const std::string& what) : ValidationError(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

struct Checkpoint {
  NetworkSpec spec;
  std::uint64_t seed = 0;
  ParamPoint point;
};

nlohmann::json spec_to_json(const NetworkSpec& spec);
NetworkSpec spec_from_json(const nlohmann::json& j);

/// Path of the binary payload belonging to a header path ("x.json" -> "x.bin").
std::string checkpoint_data_path(const std::string& header_path);

void checkpoint_save(const std::string& header_path, const ParamPoint& point, const NetworkSpec& spec,
                     std::uint64_t seed);
Checkpoint checkpoint_load(const std::string& header_path);

}  // namespace flatness
