#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "qrw/model.hpp"
#include "qrw/optimizer.hpp"

namespace qrw {

// On-disk layout (all integers little-endian):
//   "QRW1"
//   u32 metadata length, metadata bytes (UTF-8 JSON: config, role, vocab
//       hash, step counter, dtype, optimizer step)
//   u32 tensor count, then per tensor:
//       u32 name length, name bytes, u32 rows, u32 cols, row-major values
// Values are 32-bit floats; 64-bit parameter sets are stored as 64-bit
// floats and tagged dtype "f64" so that reloading is exact. Optimizer
// moments, when present, follow the parameters as "adam.m.*" / "adam.v.*".
template <typename T>
struct Checkpoint {
  ModelParameters<T> params;
  std::uint64_t vocab_hash = 0;
  std::uint64_t step = 0;
  std::optional<OptimizerState<T>> optimizer;
};

template <typename T>
std::string serialize_checkpoint(const Checkpoint<T>& ckpt);
template <typename T>
Checkpoint<T> deserialize_checkpoint(const std::string& bytes);

template <typename T>
void save_checkpoint(const std::string& path, const Checkpoint<T>& ckpt);
template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path);

// Reads only the metadata block; useful to pick the numeric precision.
struct CheckpointInfo {
  ModelConfig config;
  ModelRole role = ModelRole::kForward;
  std::uint64_t vocab_hash = 0;
  std::uint64_t step = 0;
  bool f64 = false;
};
CheckpointInfo read_checkpoint_info(const std::string& path);

}  // namespace qrw
