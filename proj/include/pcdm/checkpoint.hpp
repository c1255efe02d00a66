#pragma once

// Binary checkpoint container. All integers and floats are little-endian.
//
//   magic        8 bytes  "PCDMCKPT"
//   version      u32      (kCheckpointVersion)
//   config_hash  u64
//   n_meta       u32, then n_meta x (key: str, value: str)
//   n_params     u32, then n_params x (name: str, ndim: u32, dims: ndim x u64, values: numel x f64)
//   has_adam     u8; if 1:
//     step u64, lr f64, beta1 f64, beta2 f64, eps f64, weight_decay f64,
//     n u32, then n x (m values: u64 count + f64s, v values: u64 count + f64s)
//   trailer      4 bytes  "END!"
//
// str = u32 byte length followed by UTF-8 bytes.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "pcdm/adam.hpp"
#include "pcdm/tensor.hpp"

namespace pcdm {

inline constexpr uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  uint32_t format_version = kCheckpointVersion;
  uint64_t config_hash = 0;
  std::map<std::string, std::string> metadata;
  std::vector<std::pair<std::string, Tensor>> parameters;
  std::optional<AdamState> adam;
};

std::vector<uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<uint8_t>& bytes);

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace pcdm
