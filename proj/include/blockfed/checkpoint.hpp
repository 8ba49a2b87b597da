#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "blockfed/model.hpp"

namespace blockfed {

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

// A set of blocks plus the architecture they belong to. Server checkpoints
// under PH/PHF hold only the shared blocks, so the block list may be partial.
//
// Binary layout, all integers and floats little-endian:
//   char[8]  magic "BFCKPT\0\0"
//   u32      format version
//   u32      n_modalities, then u32 input_dim per modality
//   u32      hidden_dim, embed_dim, fusion_dim, n_classes
//   u8       fusion variant (0 concat, 1 attention)
//   u64      init seed
//   u32      block count
//   per block: u8 kind, u32 modality, u64 length, f64[length]
struct Checkpoint {
  ModelSpec spec;
  std::uint64_t seed = 0;
  std::vector<std::pair<BlockId, std::vector<double>>> blocks;
};

Checkpoint make_checkpoint(const BlockedModel& model);
// Requires every block of the architecture to be present.
BlockedModel to_model(const Checkpoint& checkpoint);

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(const std::filesystem::path& path);

// Block boundaries as byte offsets into the binary file.
nlohmann::json checkpoint_sidecar(const Checkpoint& checkpoint);
// Sidecar path for a checkpoint: "<path>.json".
std::filesystem::path sidecar_path(const std::filesystem::path& path);

}  // namespace blockfed
