#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <cstring>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace evmae {

// File/content problems (bad magic, truncation, failed validation, ...).
class data_error : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

// OS-level I/O failures.
class io_error : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Dtype : uint8_t { u8 = 0, u16 = 1, f32 = 2 };

inline size_t dtype_size(Dtype d) {
  switch (d) {
    case Dtype::u8: return 1;
    case Dtype::u16: return 2;
    case Dtype::f32: return 4;
  }
  return 0;
}

inline const char* dtype_name(Dtype d) {
  switch (d) {
    case Dtype::u8: return "u8";
    case Dtype::u16: return "u16";
    case Dtype::f32: return "f32";
  }
  return "?";
}

inline bool dtype_from_code(uint8_t code, Dtype& out) {
  if (code > 2) return false;
  out = static_cast<Dtype>(code);
  return true;
}

// Static description of a sensor source. gsd_m is informative only and is
// not serialized into shards.
struct SourceProfile {
  std::string name;
  int bands = 1;
  double gsd_m = 0.0;
  int height = 1;
  int width = 1;
  Dtype dtype = Dtype::u8;
};

// Calendar components; 0 in any component means unknown. Observed hours are
// stored shifted into 1..24 so that 0 stays free for "unknown".
struct Timestamp {
  int year = 0;
  int month = 0;
  int day = 0;
  int hour = 0;

  auto operator<=>(const Timestamp&) const = default;
};

// One source's 4-D stack (time, bands, height, width), raw row-major bytes.
struct SourceTensor {
  SourceProfile profile;
  std::array<uint32_t, 4> dims{};  // (t, c, h, w)
  std::vector<uint8_t> data;
  std::vector<Timestamp> timestamps;

  size_t value_count() const {
    return static_cast<size_t>(dims[0]) * dims[1] * dims[2] * dims[3];
  }
  size_t byte_size() const { return value_count() * dtype_size(profile.dtype); }

  double value_at(size_t flat) const {
    switch (profile.dtype) {
      case Dtype::u8: return data[flat];
      case Dtype::u16: {
        uint16_t x;
        std::memcpy(&x, data.data() + 2 * flat, 2);
        return x;
      }
      case Dtype::f32: {
        float x;
        std::memcpy(&x, data.data() + 4 * flat, 4);
        return x;
      }
    }
    return 0.0;
  }
};

struct Region {
  std::string region_id;
  std::array<double, 4> bounds{};  // lon_min, lat_min, lon_max, lat_max
  std::map<std::string, SourceTensor> sources;
};

// Returns one message per invariant breach; empty means valid.
std::vector<std::string> validate_region(const Region& region);

}  // namespace evmae
