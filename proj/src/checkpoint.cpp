#include "evmae/checkpoint.hpp"

#include <cstring>
#include <fmt/format.h>
#include <fstream>

namespace evmae {

const TensorBlob* Checkpoint::find(std::string_view name) const {
  for (const auto& [n, blob] : tensors)
    if (n == name) return &blob;
  return nullptr;
}

TensorBlob& Checkpoint::add(std::string name) {
  tensors.emplace_back(std::move(name), TensorBlob{});
  return tensors.back().second;
}

TensorBlob blob_from_floats(const float* values, size_t n, int64_t rows,
                            int64_t cols) {
  TensorBlob b;
  b.dtype = Dtype::f32;
  b.dims = {1, 1, static_cast<uint32_t>(rows), static_cast<uint32_t>(cols)};
  b.raw.resize(n * 4);
  std::memcpy(b.raw.data(), values, n * 4);
  return b;
}

TensorBlob blob_from_doubles(const double* values, size_t n) {
  TensorBlob b;
  b.dtype = Dtype::u8;
  b.dims = {1, 1, 1, static_cast<uint32_t>(n * 8)};
  b.raw.resize(n * 8);
  std::memcpy(b.raw.data(), values, n * 8);
  return b;
}

TensorBlob blob_from_u64(uint64_t value) {
  TensorBlob b;
  b.dtype = Dtype::u8;
  b.dims = {1, 1, 1, 8};
  b.raw.resize(8);
  for (int i = 0; i < 8; ++i)
    b.raw[static_cast<size_t>(i)] = static_cast<uint8_t>(value >> (8 * i));
  return b;
}

TensorBlob blob_from_string(std::string_view text) {
  TensorBlob b;
  b.dtype = Dtype::u8;
  b.dims = {1, 1, 1, static_cast<uint32_t>(text.size())};
  b.raw.assign(text.begin(), text.end());
  return b;
}

std::vector<float> floats_from_blob(const TensorBlob& blob) {
  if (blob.dtype != Dtype::f32)
    throw data_error("checkpoint tensor is not f32");
  std::vector<float> out(blob.raw.size() / 4);
  std::memcpy(out.data(), blob.raw.data(), blob.raw.size());
  return out;
}

std::vector<double> doubles_from_blob(const TensorBlob& blob) {
  std::vector<double> out(blob.raw.size() / 8);
  std::memcpy(out.data(), blob.raw.data(), blob.raw.size());
  return out;
}

uint64_t u64_from_blob(const TensorBlob& blob) {
  if (blob.raw.size() != 8) throw data_error("checkpoint u64 field corrupt");
  uint64_t v = 0;
  for (int i = 7; i >= 0; --i)
    v = (v << 8) | blob.raw[static_cast<size_t>(i)];
  return v;
}

std::string string_from_blob(const TensorBlob& blob) {
  return {blob.raw.begin(), blob.raw.end()};
}

uint64_t save_checkpoint(const Checkpoint& ckpt,
                         const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw io_error(fmt::format("cannot open '{}' for write", path.string()));
  uint64_t written = 0;
  const auto bytes = [&](const void* p, size_t n) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    written += n;
  };
  const auto u32 = [&](uint32_t v) {
    const uint8_t b[4] = {static_cast<uint8_t>(v), static_cast<uint8_t>(v >> 8),
                          static_cast<uint8_t>(v >> 16),
                          static_cast<uint8_t>(v >> 24)};
    bytes(b, 4);
  };

  bytes(kCheckpointMagic, 4);
  const uint8_t version = kCheckpointVersion;
  bytes(&version, 1);
  u32(static_cast<uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, blob] : ckpt.tensors) {
    const uint8_t name_len = static_cast<uint8_t>(name.size());
    bytes(&name_len, 1);
    bytes(name.data(), name.size());
    const uint8_t code = static_cast<uint8_t>(blob.dtype);
    bytes(&code, 1);
    for (const uint32_t d : blob.dims) u32(d);
    bytes(blob.raw.data(), blob.raw.size());
  }
  if (!out) throw io_error(fmt::format("write failed on '{}'", path.string()));
  return written;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error(fmt::format("cannot open '{}'", path.string()));
  const auto bytes = [&](void* p, size_t n) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(in.gcount()) != n)
      throw data_error(
          fmt::format("truncated checkpoint '{}'", path.string()));
  };
  const auto u32 = [&]() {
    uint8_t b[4];
    bytes(b, 4);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) |
           (static_cast<uint32_t>(b[3]) << 24);
  };

  char magic[4];
  bytes(magic, 4);
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw data_error(fmt::format("bad magic in '{}'", path.string()));
  uint8_t version;
  bytes(&version, 1);
  if (version != kCheckpointVersion)
    throw data_error(
        fmt::format("unsupported checkpoint version {}", version));

  Checkpoint ckpt;
  const uint32_t count = u32();
  for (uint32_t i = 0; i < count; ++i) {
    uint8_t name_len;
    bytes(&name_len, 1);
    std::string name(name_len, '\0');
    bytes(name.data(), name_len);
    TensorBlob blob;
    uint8_t code;
    bytes(&code, 1);
    if (!dtype_from_code(code, blob.dtype))
      throw data_error(fmt::format("dtype code out of range ({})", code));
    for (uint32_t& d : blob.dims) d = u32();
    blob.raw.resize(blob.value_count() * dtype_size(blob.dtype));
    bytes(blob.raw.data(), blob.raw.size());
    ckpt.tensors.emplace_back(std::move(name), std::move(blob));
  }
  return ckpt;
}

}  // namespace evmae
