#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sfit/tensor.hpp"

namespace sfit::models {

constexpr char kCheckpointMagic[8] = {'S', 'F', 'I', 'T', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor value;
};

/// Ordered list of named tensors. Binary layout, little-endian throughout:
///   "SFITCKPT" | u32 version | u32 count |
///   count x (u16 name_len | name bytes | u8 ndim | ndim x u32 dims | f32 payload)
struct Checkpoint {
  std::vector<NamedTensor> entries;

  const Tensor* find(const std::string& name) const;
  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

bool operator==(const NamedTensor& a, const NamedTensor& b);

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

/// Writes to a sibling temporary file and renames it into place.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// FNV-1a over names, shapes and payload bytes.
std::uint64_t fingerprint(const Checkpoint& ckpt);

}  // namespace sfit::models
