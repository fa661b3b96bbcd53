#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "evmae/linalg.hpp"

namespace evmae {

enum class MaskScheme { random, tube, combined };

MaskScheme mask_scheme_from_name(const std::string& name);
const char* mask_scheme_name(MaskScheme s);

// Boolean selection over the (timestep, source, patch) token lattice.
struct Mask {
  int t = 0, s = 0, p = 0;
  std::vector<uint8_t> lattice;  // t*s*p entries, 1 = masked
  int64_t masked_count = 0;
  MaskScheme scheme = MaskScheme::random;
  uint64_t seed = 0;

  int64_t size() const { return static_cast<int64_t>(t) * s * p; }
  bool at(int ti, int si, int pi) const {
    return lattice[static_cast<size_t>((ti * s + si) * p + pi)] != 0;
  }
};

// Exactly floor(ratio * t*s*p) positions masked, uniform without
// replacement; deterministic given the seed.
Mask random_mask(int t, int s, int p, double ratio, uint64_t seed);

// One patch set of floor(ratio * p) ids masked identically across every
// (timestep, source) slice.
Mask tube_mask(int t, int s, int p, double ratio, uint64_t seed);

// Tube stage of floor(tube_ratio * p) patches, then independently per slice
// floor(rand_ratio * remaining) additional patches.
Mask combined_mask(int t, int s, int p, double tube_ratio = 0.75,
                   double rand_ratio = 0.25, uint64_t seed = 0);

template <typename T>
struct GatherResult {
  Mat<T> visible;                 // (n_vis, width)
  std::vector<int64_t> index_map; // flat lattice index per visible row
};

// Visible rows in lattice row-major order; throws "no visible tokens" when
// everything is masked.
template <typename T>
GatherResult<T> gather_visible(const Mat<T>& tokens, const Mask& mask);

// Writes rows back to the lattice positions recorded in index_map.
template <typename T>
void scatter_rows(const Mat<T>& rows, std::span<const int64_t> index_map,
                  Mat<T>& out);

}  // namespace evmae
