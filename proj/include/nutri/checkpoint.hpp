#pragma once

// Single-file checkpoints.
//
//   bytes 0..3  magic "NCKP"
//   u32         format version (1)
//   u64         metadata length, then that many bytes of JSON
//   u32         tensor count
//   per tensor: u32 name length, name bytes, one float64 NTSR record
//
// Metadata carries the full config, the model fingerprint, the epoch, the
// task weights and the optimizer step count.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "nutri/losses.hpp"
#include "nutri/params.hpp"

namespace nutri {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::map<std::string, std::string> config;
  std::string fingerprint;
  int epoch = 0;
  TaskWeights weights;
  std::int64_t optimizer_steps = 0;
  std::vector<NamedTensor> tensors;    // parameters and buffers
  std::vector<NamedTensor> optimizer;  // Adam moments
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
// Throws DataError on unreadable or malformed files.
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Snapshot of the current values, detached from any graph.
std::vector<NamedTensor> snapshot(const ParamList& params);

// Copies checkpoint values into `target` by name. Throws ConfigError
// listing every missing, unexpected or differently shaped tensor.
void restore(const ParamList& target, const std::vector<NamedTensor>& values);

}  // namespace nutri
