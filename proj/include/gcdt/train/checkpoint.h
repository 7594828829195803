#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "gcdt/model/model.h"

namespace gcdt::train {

inline constexpr char kCheckpointMagic[4] = {'G', 'C', 'D', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Any reason a checkpoint cannot be read; nothing is loaded when thrown.
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ManifestEntry {
  std::string name;
  num::Shape shape;
  /// Byte offset of the tensor within the payload.
  std::uint64_t offset = 0;
};

/// Parsed checkpoint header (everything except the tensor payload).
struct CheckpointInfo {
  std::uint32_t version = 0;
  model::ModelConfig config;
  std::uint64_t seed = 0;
  data::TaskRegistry tasks;
  data::NormStats norm;
  std::vector<ManifestEntry> manifest;
  std::uint64_t payload_bytes = 0;
};

/// Layout: "GCDT", u32 version, u64 header length, u32 CRC-32 of the header,
/// UTF-8 JSON header, then every tensor as little-endian float32 in
/// manifest order, followed by a u32 CRC-32 of that payload. Written
/// atomically.
void save_checkpoint(const model::ModelBundle& bundle, const std::filesystem::path& path);
std::vector<std::uint8_t> serialize_checkpoint(const model::ModelBundle& bundle);

/// Throws CheckpointError on a bad magic, an unsupported version (message
/// names expected and found), a corrupt or inconsistent header, a
/// manifest that disagrees with the architecture, or a truncated payload.
model::ModelBundle load_checkpoint(const std::filesystem::path& path);
model::ModelBundle deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);
/// Reads and validates only the header.
CheckpointInfo read_checkpoint_info(const std::filesystem::path& path);

}  // namespace gcdt::train
