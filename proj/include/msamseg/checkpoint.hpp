#pragma once

// Binary checkpoint container (all integers and floats little-endian):
//
//   "MSAMCKPT"            8-byte magic
//   u32 version           currently 1
//   u32 n, n bytes        model configuration, JSON
//   u32 n, n bytes        training metadata, JSON (fold statistics, seed, ...)
//   u32 count             parameter tensors, each:
//     u32 n, n bytes        name
//     u32 x4                shape (N, C, H, W)
//     f32 x numel           values
//   u8 has_optimizer      1 when an Adam state follows:
//     u64 step, f64 lr, f64 beta1, f64 beta2, f64 eps
//     f32 first moments, then f32 second moments, per parameter in order
//   u32 crc32             over every preceding byte

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "msamseg/data.hpp"
#include "msamseg/network.hpp"
#include "msamseg/optimizer.hpp"

namespace msamseg {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TrainingMetadata {
  FoldStats stats;
  std::uint64_t seed = 0;
  std::size_t epochs_completed = 0;
  std::string train_config_json = "{}";

  friend bool operator==(const TrainingMetadata& a, const TrainingMetadata& b) {
    return a.stats.pet.mean == b.stats.pet.mean && a.stats.pet.stddev == b.stats.pet.stddev &&
           a.stats.ct.mean == b.stats.ct.mean && a.stats.ct.stddev == b.stats.ct.stddev &&
           a.stats.fold_hash == b.stats.fold_hash && a.seed == b.seed && a.epochs_completed == b.epochs_completed &&
           a.train_config_json == b.train_config_json;
  }
};

struct Checkpoint {
  ModelConfig config;
  NetworkParams<float> params;
  std::optional<OptimizerState<float>> optimizer;
  TrainingMetadata meta;
};

std::vector<char> serialize_checkpoint(const Checkpoint& ckpt);
// Throws LoadError on a bad magic, version, checksum or truncation.
Checkpoint deserialize_checkpoint(const std::vector<char>& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace msamseg
