#include "flatness/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include <zlib.h>

namespace flatness {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

json spec_to_json(const NetworkSpec& spec) {
  json layers = json::array();
  for (const auto& ls : spec.layers) {
    if (const auto* fc = std::get_if<FcLayer>(&ls)) {
      layers.push_back({{"type", "fc"}, {"in", fc->in}, {"out", fc->out}});
    } else if (const auto* conv = std::get_if<ConvLayer>(&ls)) {
      layers.push_back({{"type", "conv"}, {"kernel", conv->kernel}, {"out_channels", conv->out_channels}});
    } else {
      layers.push_back({{"type", "maxpool"}});
    }
  }
  return {{"name", spec.name},
          {"input", {spec.input.height, spec.input.width, spec.input.channels}},
          {"layers", layers},
          {"with_bias", spec.with_bias},
          {"classes", spec.classes}};
}

NetworkSpec spec_from_json(const json& j) {
  try {
    NetworkSpec s;
    s.name = j.value("name", std::string{});
    const auto& in = j.at("input");
    s.input = {in.at(0).get<Index>(), in.at(1).get<Index>(), in.at(2).get<Index>()};
    for (const auto& l : j.at("layers")) {
      const auto type = l.at("type").get<std::string>();
      if (type == "fc") {
        s.layers.push_back(FcLayer{l.at("in").get<Index>(), l.at("out").get<Index>()});
      } else if (type == "conv") {
        s.layers.push_back(ConvLayer{l.at("kernel").get<Index>(), l.at("out_channels").get<Index>()});
      } else if (type == "maxpool") {
        s.layers.push_back(MaxPoolLayer{});
      } else {
        throw ValidationError("unknown layer type '" + type + "'");
      }
    }
    s.with_bias = j.at("with_bias").get<bool>();
    s.classes = j.at("classes").get<int>();
    validate(s);
    return s;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed network spec: ") + e.what());
  }
}

std::string checkpoint_data_path(const std::string& header_path) {
  std::filesystem::path p(header_path);
  p.replace_extension(".bin");
  return p.string();
}

namespace {

std::uint32_t crc_of(const std::string& bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  return static_cast<std::uint32_t>(
      crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

}  // namespace

void checkpoint_save(const std::string& header_path, const ParamPoint& point, const NetworkSpec& spec,
                     std::uint64_t seed) {
  build(spec).validate(point);
  const Eigen::VectorXd flat = flatten(point);
  std::string bytes(static_cast<std::size_t>(flat.size()) * sizeof(double), '\0');
  std::memcpy(bytes.data(), flat.data(), bytes.size());

  json shapes = json::array();
  for (std::size_t i = 0; i < point.layers(); ++i) {
    json layer = {{"weight", point.weights[i].shape()}};
    if (point.has_bias()) layer["bias"] = point.biases[i].shape();
    shapes.push_back(layer);
  }
  const std::string data_path = checkpoint_data_path(header_path);
  json header = {{"format", "flatness-checkpoint"},
                 {"version", kCheckpointVersion},
                 {"spec", spec_to_json(spec)},
                 {"seed", seed},
                 {"layers", shapes},
                 {"param_count", flat.size()},
                 {"dtype", "f64"},
                 {"byte_order", "little-endian"},
                 {"data_file", std::filesystem::path(data_path).filename().string()},
                 {"crc32", crc_of(bytes)}};

  std::ofstream bin(data_path, std::ios::binary | std::ios::trunc);
  if (!bin) throw CheckpointError(CheckpointError::Kind::Io, "cannot write " + data_path);
  bin.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  std::ofstream hdr(header_path, std::ios::trunc);
  if (!hdr) throw CheckpointError(CheckpointError::Kind::Io, "cannot write " + header_path);
  hdr << header.dump(2) << '\n';
}

Checkpoint checkpoint_load(const std::string& header_path) {
  using Kind = CheckpointError::Kind;
  std::ifstream hdr(header_path);
  if (!hdr) throw CheckpointError(Kind::Io, "cannot open " + header_path);
  json header;
  try {
    header = json::parse(hdr);
  } catch (const json::exception& e) {
    throw CheckpointError(Kind::Layout, header_path + ": " + e.what());
  }
  if (header.value("format", std::string{}) != "flatness-checkpoint") {
    throw CheckpointError(Kind::Layout, header_path + ": not a checkpoint header");
  }
  if (header.value("version", -1) != kCheckpointVersion) {
    throw CheckpointError(Kind::Version,
                          header_path + ": unsupported version " + header.value("version", json()).dump());
  }
  if (header.value("dtype", std::string{}) != "f64" || header.value("byte_order", std::string{}) != "little-endian") {
    throw CheckpointError(Kind::Layout, header_path + ": only little-endian f64 payloads are supported");
  }

  const auto dir = std::filesystem::path(header_path).parent_path();
  const std::string data_path = (dir / header.at("data_file").get<std::string>()).string();
  std::ifstream bin(data_path, std::ios::binary);
  if (!bin) throw CheckpointError(Kind::Io, "cannot open " + data_path);
  const std::string bytes{std::istreambuf_iterator<char>(bin), std::istreambuf_iterator<char>()};
  if (crc_of(bytes) != header.at("crc32").get<std::uint32_t>()) {
    throw CheckpointError(Kind::Checksum, data_path + ": checksum mismatch");
  }

  Checkpoint ck;
  ck.spec = spec_from_json(header.at("spec"));
  ck.seed = header.value("seed", std::uint64_t{0});

  const auto wshapes = weight_shapes(ck.spec);
  const auto bsizes = bias_sizes(ck.spec);
  const auto& layers = header.at("layers");
  if (layers.size() != wshapes.size()) {
    throw CheckpointError(Kind::Layout, header_path + ": header lists " + std::to_string(layers.size()) +
                                            " layers, spec has " + std::to_string(wshapes.size()));
  }
  Index expected = 0;
  for (std::size_t i = 0; i < wshapes.size(); ++i) {
    const auto w = layers[i].at("weight").get<Shape>();
    if (w != wshapes[i]) {
      throw CheckpointError(Kind::Layout, header_path + ": layer " + std::to_string(i) + " weight shape " +
                                              shape_string(w) + " disagrees with spec " + shape_string(wshapes[i]));
    }
    expected += shape_size(w);
    if (ck.spec.with_bias) {
      const auto b = layers[i].at("bias").get<Shape>();
      if (b != Shape{bsizes[i]}) {
        throw CheckpointError(Kind::Layout,
                              header_path + ": layer " + std::to_string(i) + " bias shape disagrees with spec");
      }
      expected += bsizes[i];
    }
  }
  if (header.value("param_count", Index{-1}) != expected ||
      static_cast<Index>(bytes.size()) != expected * static_cast<Index>(sizeof(double))) {
    throw CheckpointError(Kind::Layout, header_path + ": payload of " + std::to_string(bytes.size()) +
                                            " bytes, spec needs " + std::to_string(expected) + " parameters");
  }

  Eigen::VectorXd flat(expected);
  std::memcpy(flat.data(), bytes.data(), bytes.size());
  ParamPoint like;
  for (std::size_t i = 0; i < wshapes.size(); ++i) {
    like.weights.push_back(Tensor::zeros(wshapes[i]));
    if (ck.spec.with_bias) like.biases.push_back(Tensor::zeros({bsizes[i]}));
  }
  ck.point = unflatten<PointTag>(flat, like);
  for (std::size_t i = 0; i < ck.point.layers(); ++i) {
    if (!ck.point.weights[i].all_finite() || (ck.point.has_bias() && !ck.point.biases[i].all_finite())) {
      throw CheckpointError(Kind::Layout, header_path + ": non-finite parameters in layer " + std::to_string(i));
    }
  }
  return ck;
}

}  // namespace flatness
