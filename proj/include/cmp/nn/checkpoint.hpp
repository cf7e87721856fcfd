#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace cmp::nn {

struct NamedTensor {
  std::string name;
  std::vector<std::int32_t> dims;
  std::vector<float> values;

  bool operator==(const NamedTensor&) const = default;
};

// Flat container, all integers and floats little-endian:
//   "CMPW" u32 version u32 count
//   count x { u32 name_len, name bytes, u32 ndims, i32 dims[ndims], f32 values[prod(dims)] }
std::vector<std::uint8_t> encode_tensors(std::span<const NamedTensor> tensors);
std::vector<NamedTensor> decode_tensors(std::span<const std::uint8_t> bytes);

// Weights go to `path`; the JSON sidecar (architecture, iteration, ...) to `path + ".json"`.
void save_checkpoint(const std::string& path, std::span<const NamedTensor> tensors, const nlohmann::json& sidecar);

struct LoadedCheckpoint {
  std::vector<NamedTensor> tensors;
  nlohmann::json sidecar;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace cmp::nn
