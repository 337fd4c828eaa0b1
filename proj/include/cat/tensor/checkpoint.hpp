#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cat/tensor/optim.hpp"
#include "cat/tensor/tensor.hpp"

namespace cat::tensor {

// Binary layout, all integers and floats little-endian:
//   magic "CATCKPT1", u32 format version,
//   u64 length + bytes of the model config text,
//   u64 parameter count, then per parameter:
//     u32 name length, name bytes, u32 rank, u64 extents, f64 values (row-major),
//   u8 optimizer flag, then if set:
//     f64 lr, beta1, beta2, eps, weight_decay, u64 step,
//     u64 buffer count, then per buffer u64 length + f64 values for m, then for v.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct StoredArray {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::string config_text;
  std::vector<StoredArray> params;
  std::optional<OptimizerState> optimizer;
};

void save_checkpoint(const std::filesystem::path& path, const std::string& config_text,
                     const ParameterList& params, const OptimizerState* optimizer = nullptr);
Checkpoint read_checkpoint(const std::filesystem::path& path);

// Copies stored values into `params`. The name sets must agree and every
// shape must match, otherwise CheckpointMismatch.
void load_parameters(const Checkpoint& ckpt, ParameterList& params);

}  // namespace cat::tensor
