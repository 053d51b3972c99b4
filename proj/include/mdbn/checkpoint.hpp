#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "mdbn/model.hpp"
#include "mdbn/tensor.hpp"

namespace mdbn {

// Binary container, little-endian:
//   "MDBN" | u32 version | config block | u32 tensor count | tensors...
// config block: u32 scale, u32 channels, u32 n_rmdb, u32 mdbm_per_rmdb,
//               u8 hf_branch, u8 activation, u64 seed
// tensor: u16 name length, UTF-8 name, u8 dtype (0 = f32), u8 ndim,
//         ndim x u64 dims, raw f32 payload
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint8_t kDtypeF32 = 0;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CheckpointEntry {
  std::string name;
  Tensor<float> value;
};

struct Checkpoint {
  ModelConfig config;
  std::vector<CheckpointEntry> tensors;

  const Tensor<float>* find(const std::string& name) const;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

Checkpoint checkpoint_from_model(const Model<float>& model);
// Extra entries (optimizer state) are ignored; missing or misshapen model
// tensors are an error.
Model<float> model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace mdbn
