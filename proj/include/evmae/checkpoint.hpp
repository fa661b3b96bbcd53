#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "evmae/region.hpp"

namespace evmae {

// EMCK checkpoint blob v1: magic "EMCK", version byte 0x01, u32 tensor
// count, then length-prefixed named tensors with the same dtype/dim
// conventions as EVSH source records (u8 name_len, name, u8 dtype code,
// u32 x4 dims, raw little-endian payload). Save -> load -> save is
// byte-identical.

inline constexpr char kCheckpointMagic[4] = {'E', 'M', 'C', 'K'};
inline constexpr uint8_t kCheckpointVersion = 0x01;

struct TensorBlob {
  Dtype dtype = Dtype::f32;
  std::array<uint32_t, 4> dims{1, 1, 1, 0};
  std::vector<uint8_t> raw;

  size_t value_count() const {
    return static_cast<size_t>(dims[0]) * dims[1] * dims[2] * dims[3];
  }
};

struct Checkpoint {
  std::vector<std::pair<std::string, TensorBlob>> tensors;  // write order

  const TensorBlob* find(std::string_view name) const;
  TensorBlob& add(std::string name);
};

TensorBlob blob_from_floats(const float* values, size_t n, int64_t rows,
                            int64_t cols);
TensorBlob blob_from_doubles(const double* values, size_t n);  // u8 payload
TensorBlob blob_from_u64(uint64_t value);
TensorBlob blob_from_string(std::string_view text);

std::vector<float> floats_from_blob(const TensorBlob& blob);
std::vector<double> doubles_from_blob(const TensorBlob& blob);
uint64_t u64_from_blob(const TensorBlob& blob);
std::string string_from_blob(const TensorBlob& blob);

uint64_t save_checkpoint(const Checkpoint& ckpt,
                         const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace evmae
