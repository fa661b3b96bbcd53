#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "evmae/region.hpp"

namespace evmae {

// EVSH shard format v1 (all integers little-endian):
//
//   bytes 0-3   magic "EVSH"
//   byte  4     version = 0x01
//   byte  5     endian flag = 0x01 (little-endian; reserved for future use)
//   bytes 6-7   zero
//   u32         region_count
//   per region:
//     u32       meta_len
//     bytes     UTF-8 JSON metadata, keys in fixed order:
//               {region_id, bounds:[4 f64],
//                sources:{name:{timestamps:[[y,m,d,h],...]}}}
//     u16       source_count
//     per source (lexicographic by name):
//       u8      name_len
//       bytes   name
//       u8      dtype code (0=u8, 1=u16, 2=f32)
//       u32 x4  dims (t, c, h, w)
//       bytes   raw row-major payload
//
// Identical input always produces byte-identical files.

inline constexpr char kShardMagic[4] = {'E', 'V', 'S', 'H'};
inline constexpr uint8_t kShardVersion = 0x01;

// Writes a shard; returns the number of bytes written.
// Throws data_error if any region fails validate_region (message names the
// region_id) and io_error on filesystem failures.
uint64_t write_shard(const std::vector<Region>& regions,
                     const std::filesystem::path& path);

// Reads back a shard in stored order; every returned region passes
// validate_region. Throws data_error on malformed content ("bad magic",
// "unsupported version", "truncated payload", "dtype code out of range").
std::vector<Region> read_shard(const std::filesystem::path& path);

}  // namespace evmae
