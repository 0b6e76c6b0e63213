#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>

#include "formt/model.hpp"

namespace formt {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Binary layout, all integers little-endian u32:
//   magic "FORMTCKP", version, byte-order marker 0x01020304,
//   config JSON length + bytes, tensor count,
//   per tensor: name length + bytes, rows, cols, rows*cols IEEE-754 float32.
void save_checkpoint(const std::filesystem::path& path, const Model<float>& model);

// Throws CheckpointError on a bad header, a version mismatch, or when `expected`
// is given and differs from the stored config.
Model<float> load_checkpoint(const std::filesystem::path& path,
                             const std::optional<ModelConfig>& expected = std::nullopt);

}  // namespace formt
