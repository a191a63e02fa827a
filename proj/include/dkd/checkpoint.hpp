#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <json.hpp>

#include "dkd/models.hpp"

namespace dkd {

// Binary layout, all integers little-endian u32:
//   "DKDC" | version | descriptor length | descriptor (UTF-8 JSON)
//   | array count | per array: name length | name | rank | dims... | f32 payload
// The descriptor holds {"architecture": <layer graph>, "metadata": {...}}.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMetadata {
  std::uint64_t epoch = 0;
  std::uint64_t seed = 0;
  nlohmann::json metrics = nlohmann::json::object();
};

struct Checkpoint {
  ModelGraph<float> model;
  CheckpointMetadata metadata;
};

std::vector<std::uint8_t> encode_checkpoint(const ModelGraph<float>& model, const CheckpointMetadata& metadata);
// Throws FormatError with the failing byte offset; never returns a partial model.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const ModelGraph<float>& model, const CheckpointMetadata& metadata,
                     const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace dkd
