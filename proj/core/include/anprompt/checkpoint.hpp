#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "anprompt/autograd.hpp"

namespace anprompt {

enum class TensorTag { trainable, buffer, frozen };

[[nodiscard]] std::string to_string(TensorTag t);

struct CheckpointEntry {
  std::string name;
  TensorTag tag = TensorTag::trainable;
  /// Values as stored: 32-bit floats widened back to double.
  Mat value;
};

/// Directory archive: manifest.json lists name, shape, dtype ("f32"), tag and
/// byte offset of each tensor; params.bin holds the little-endian payloads
/// back to back in manifest order.
void save_checkpoint(const std::filesystem::path& dir, const std::vector<CheckpointEntry>& entries);
[[nodiscard]] std::vector<CheckpointEntry> load_checkpoint(const std::filesystem::path& dir);

/// Rounds through float so in-memory values compare exactly with a reload.
[[nodiscard]] Mat round_to_f32(const Mat& m);

}  // namespace anprompt
