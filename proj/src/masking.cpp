#include "evmae/masking.hpp"

#include <cmath>
#include <fmt/format.h>
#include <stdexcept>

#include "evmae/region.hpp"
#include "evmae/rng.hpp"

namespace evmae {

namespace {

void check_ratio(double ratio) {
  if (!(ratio >= 0.0 && ratio <= 1.0))
    throw std::invalid_argument(fmt::format("ratio {} outside [0, 1]", ratio));
}

Mask empty_mask(int t, int s, int p, MaskScheme scheme, uint64_t seed) {
  if (t < 1 || s < 1 || p < 1)
    throw std::invalid_argument("mask dims must be >= 1");
  Mask m;
  m.t = t;
  m.s = s;
  m.p = p;
  m.scheme = scheme;
  m.seed = seed;
  m.lattice.assign(static_cast<size_t>(m.size()), 0);
  return m;
}

}  // namespace

MaskScheme mask_scheme_from_name(const std::string& name) {
  if (name == "random") return MaskScheme::random;
  if (name == "tube") return MaskScheme::tube;
  if (name == "combined") return MaskScheme::combined;
  throw std::invalid_argument(fmt::format("unknown mask scheme '{}'", name));
}

const char* mask_scheme_name(MaskScheme s) {
  switch (s) {
    case MaskScheme::random: return "random";
    case MaskScheme::tube: return "tube";
    case MaskScheme::combined: return "combined";
  }
  return "?";
}

Mask random_mask(int t, int s, int p, double ratio, uint64_t seed) {
  check_ratio(ratio);
  Mask m = empty_mask(t, s, p, MaskScheme::random, seed);
  const int64_t domain = m.size();
  const int64_t k =
      static_cast<int64_t>(std::floor(ratio * static_cast<double>(domain)));
  SplitMix64 rng(seed);
  for (const int64_t idx : sample_without_replacement(domain, k, rng))
    m.lattice[static_cast<size_t>(idx)] = 1;
  m.masked_count = k;
  return m;
}

Mask tube_mask(int t, int s, int p, double ratio, uint64_t seed) {
  check_ratio(ratio);
  Mask m = empty_mask(t, s, p, MaskScheme::tube, seed);
  const int64_t k =
      static_cast<int64_t>(std::floor(ratio * static_cast<double>(p)));
  SplitMix64 rng(seed);
  std::vector<uint8_t> patch_masked(static_cast<size_t>(p), 0);
  for (const int64_t pi : sample_without_replacement(p, k, rng))
    patch_masked[static_cast<size_t>(pi)] = 1;
  for (int64_t slice = 0; slice < static_cast<int64_t>(t) * s; ++slice)
    std::copy(patch_masked.begin(), patch_masked.end(),
              m.lattice.begin() + slice * p);
  m.masked_count = k * t * s;
  return m;
}

Mask combined_mask(int t, int s, int p, double tube_ratio, double rand_ratio,
                   uint64_t seed) {
  check_ratio(tube_ratio);
  check_ratio(rand_ratio);
  Mask m = empty_mask(t, s, p, MaskScheme::combined, seed);

  SplitMix64 rng(seed);
  const int64_t k_tube =
      static_cast<int64_t>(std::floor(tube_ratio * static_cast<double>(p)));
  std::vector<uint8_t> tube(static_cast<size_t>(p), 0);
  for (const int64_t pi : sample_without_replacement(p, k_tube, rng))
    tube[static_cast<size_t>(pi)] = 1;

  std::vector<int64_t> remaining;
  for (int64_t pi = 0; pi < p; ++pi)
    if (!tube[static_cast<size_t>(pi)]) remaining.push_back(pi);
  const int64_t k_rand = static_cast<int64_t>(std::floor(
      rand_ratio * static_cast<double>(remaining.size())));

  // Slices consume the same stream in row-major (ti, si) order.
  for (int64_t slice = 0; slice < static_cast<int64_t>(t) * s; ++slice) {
    uint8_t* dst = m.lattice.data() + slice * p;
    std::copy(tube.begin(), tube.end(), dst);
    for (const int64_t ri : sample_without_replacement(
             static_cast<int64_t>(remaining.size()), k_rand, rng))
      dst[remaining[static_cast<size_t>(ri)]] = 1;
  }
  m.masked_count = (k_tube + k_rand) * t * s;
  return m;
}

template <typename T>
GatherResult<T> gather_visible(const Mat<T>& tokens, const Mask& mask) {
  if (tokens.rows != mask.size())
    throw std::invalid_argument(
        fmt::format("token rows {} != lattice size {}", tokens.rows,
                    mask.size()));
  const int64_t n_vis = mask.size() - mask.masked_count;
  if (n_vis == 0) throw data_error("no visible tokens");

  GatherResult<T> out;
  out.visible = Mat<T>(n_vis, tokens.cols);
  out.index_map.reserve(static_cast<size_t>(n_vis));
  int64_t j = 0;
  for (int64_t i = 0; i < mask.size(); ++i) {
    if (mask.lattice[static_cast<size_t>(i)]) continue;
    std::copy(tokens.row(i), tokens.row(i) + tokens.cols, out.visible.row(j));
    out.index_map.push_back(i);
    ++j;
  }
  return out;
}

template <typename T>
void scatter_rows(const Mat<T>& rows, std::span<const int64_t> index_map,
                  Mat<T>& out) {
  if (rows.rows != static_cast<int64_t>(index_map.size()) ||
      rows.cols != out.cols)
    throw std::invalid_argument("scatter shape mismatch");
  for (int64_t j = 0; j < rows.rows; ++j)
    std::copy(rows.row(j), rows.row(j) + rows.cols,
              out.row(index_map[static_cast<size_t>(j)]));
}

template GatherResult<float> gather_visible<float>(const Mat<float>&,
                                                   const Mask&);
template GatherResult<double> gather_visible<double>(const Mat<double>&,
                                                     const Mask&);
template void scatter_rows<float>(const Mat<float>&, std::span<const int64_t>,
                                  Mat<float>&);
template void scatter_rows<double>(const Mat<double>&,
                                   std::span<const int64_t>, Mat<double>&);

}  // namespace evmae
