#pragma once

#include <array>
#include <span>

#include "evmae/linalg.hpp"
#include "evmae/region.hpp"
#include "evmae/rng.hpp"

namespace evmae {

// Vocabulary sizes: index 0 is reserved for "unknown" in every table.
inline constexpr int kYearVocab = 7;    // six years plus unknown
inline constexpr int kMonthVocab = 13;
inline constexpr int kDayVocab = 32;
inline constexpr int kHourVocab = 25;
inline constexpr int kTimeComponentDim = 16;
inline constexpr int kTimeEmbedDim = 4 * kTimeComponentDim;  // 64
inline constexpr int kSourceEmbedDim = 64;
inline constexpr int kYearBase = 2016;  // 2017 -> 1 ... 2022 -> 6

// Maps timestamp components to embedding indices; anything out of range
// becomes the unknown index 0 (never an error).
std::array<int, 4> time_index(const Timestamp& ts);

// Fixed 2-D sinusoidal table over a grid x grid patch lattice: the row for
// cell (r, c) concatenates 1-D sin-cos codes of r and of c, dim/2 each.
// Pure function of (dim, grid); entries lie in [-1, 1].
template <typename T>
Mat<T> positional_grid(int dim, int grid = 14);

// Row ti = concat(year[iy], month[im], day[id], hour[ih]); (t, 64).
template <typename T>
Mat<T> embed_time(std::span<const std::array<int, 4>> indices,
                  const MatView<const T>& year, const MatView<const T>& month,
                  const MatView<const T>& day, const MatView<const T>& hour);

// Row si = table[source_ids[si]]; throws on unregistered ids.
template <typename T>
Mat<T> embed_source(std::span<const int> source_ids,
                    const MatView<const T>& table);

// (t * s * p, D + 64 + 64); slice (ti, si, pi) is exactly
// concat(pos[pi], src[si], time[ti]).
template <typename T>
Mat<T> compose_encoding(const Mat<T>& pos, const Mat<T>& src,
                        const Mat<T>& time);

// With probability prob the whole timestep block is replaced by unknowns
// (one draw per call); otherwise returned unchanged.
std::vector<Timestamp> timestep_dropout(std::span<const Timestamp> timesteps,
                                        double prob, SplitMix64& rng);

}  // namespace evmae
