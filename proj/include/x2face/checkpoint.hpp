#pragma once

// Binary container shared by model and comparator checkpoints:
//   8-byte magic | u64 LE manifest length | UTF-8 JSON manifest | float32 LE blob
// The manifest lists {name, shape, offset, length} per tensor; offset and
// length are in bytes, relative to the start of the blob.

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "x2face/networks.hpp"

namespace x2face {

inline constexpr std::string_view kModelMagic{"X2FCKPT1", 8};
inline constexpr std::string_view kComparatorMagic{"X2FCMP1\0", 8};
inline constexpr int kFormatVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor<float> value;
};

// `header` carries every manifest field except format_version and tensors.
void write_container(const std::filesystem::path& path, std::string_view magic,
                     const nlohmann::json& header, const std::vector<NamedTensor>& tensors);

struct Container {
  nlohmann::json manifest;
  std::vector<NamedTensor> tensors;  // manifest order
};

Container read_container(const std::filesystem::path& path, std::string_view magic);

// Copies container tensors into the given parameter/buffer slots, validating
// names and shapes.
void assign_tensors(const Container& c, const std::vector<Parameter<float>*>& params,
                    const std::vector<Buffer<float>*>& buffers);
std::vector<NamedTensor> collect_tensors(const std::vector<Parameter<float>*>& params,
                                         const std::vector<Buffer<float>*>& buffers);

nlohmann::json to_json(const NetConfig& cfg);
NetConfig net_config_from_json(const nlohmann::json& j);

void save_checkpoint(const std::filesystem::path& path, X2FaceModel<float>& model,
                     const nlohmann::json& training_meta);

struct LoadedCheckpoint {
  X2FaceModel<float> model;
  nlohmann::json training_meta;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace x2face
