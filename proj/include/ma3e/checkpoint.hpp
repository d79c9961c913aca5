#pragma once

#include <cstdint>
#include <filesystem>

#include "ma3e/config.hpp"
#include "ma3e/model.hpp"

namespace ma3e {

/// Checkpoint container, little-endian throughout:
///   "MA3ECKPT" | u32 version | u64 n, n bytes of `key = value` config text |
///   u32 entries | per entry: u32 len, name, u32 ndim, u64 dims[ndim], u64 byte offset |
///   payload of f32 values.
/// Only learnable tensors are stored; positional tables are rebuilt from the config.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    TrainConfig config;
    ModelParams params;
};

void save_checkpoint(const std::filesystem::path& path, const TrainConfig& config, const ModelParams& params);

// Rejects a wrong magic, a different version, and any tensor whose name or shape
// disagrees with the model the stored config describes.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace ma3e
