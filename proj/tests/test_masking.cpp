#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "evmae/masking.hpp"
#include "evmae/region.hpp"
#include "evmae/rng.hpp"

using namespace evmae;

namespace {

int64_t count_slice(const Mask& m, int ti, int si) {
  int64_t n = 0;
  for (int pi = 0; pi < m.p; ++pi) n += m.at(ti, si, pi) ? 1 : 0;
  return n;
}

int64_t count_set(const Mask& m) {
  int64_t n = 0;
  for (const uint8_t b : m.lattice) n += b;
  return n;
}

}  // namespace

TEST_CASE("random mask hits the exact floor count") {
  const Mask m = random_mask(2, 2, 196, 0.95, 7);
  CHECK(m.masked_count == 744);  // floor(0.95 * 784)
  CHECK(count_set(m) == 744);

  CHECK(random_mask(3, 2, 10, 1.0, 1).masked_count == 60);
  CHECK(random_mask(3, 2, 10, 0.0, 1).masked_count == 0);
  CHECK_THROWS_AS(random_mask(1, 1, 4, 1.5, 0), std::invalid_argument);
}

TEST_CASE("tube mask repeats one patch set across all slices") {
  const Mask m = tube_mask(3, 2, 4, 0.75, 5);
  CHECK(count_slice(m, 0, 0) == 3);
  for (int ti = 0; ti < 3; ++ti)
    for (int si = 0; si < 2; ++si)
      for (int pi = 0; pi < 4; ++pi)
        CHECK(m.at(ti, si, pi) == m.at(0, 0, pi));

  const Mask big = tube_mask(2, 1, 196, 0.90, 9);
  CHECK(count_slice(big, 0, 0) == 176);  // floor(0.9 * 196)
  CHECK(big.masked_count == 2 * 176);

  CHECK(tube_mask(2, 2, 8, 0.0, 3).masked_count == 0);
}

TEST_CASE("combined mask layers per-slice randomness over a tube set") {
  const Mask m = combined_mask(2, 2, 196, 0.75, 0.25, 11);
  for (int ti = 0; ti < 2; ++ti)
    for (int si = 0; si < 2; ++si)
      CHECK(count_slice(m, ti, si) == 147 + 12);  // floor arithmetic
  CHECK(m.masked_count == 4 * 159);

  CHECK(combined_mask(2, 2, 8, 0.0, 0.0, 1).masked_count == 0);

  const Mask small = combined_mask(2, 1, 4, 0.75, 0.25, 2);
  for (int ti = 0; ti < 2; ++ti)
    CHECK(count_slice(small, ti, 0) == 3);  // 3 tube + floor(0.25 * 1) = 0
}

TEST_CASE("exact-count law on a ratio grid") {
  for (int k = 0; k <= 1000; k += 7) {
    const double ratio = k / 1000.0;
    const uint64_t seed = static_cast<uint64_t>(k);
    const Mask r = random_mask(2, 2, 49, ratio, seed);
    CHECK(r.masked_count ==
          static_cast<int64_t>(std::floor(ratio * (2 * 2 * 49))));
    const Mask t = tube_mask(2, 2, 49, ratio, seed);
    CHECK(count_slice(t, 0, 0) == static_cast<int64_t>(std::floor(ratio * 49)));
  }
}

TEST_CASE("masks are deterministic in the seed and differ across seeds") {
  const Mask a = random_mask(2, 2, 100, 0.5, 42);
  const Mask b = random_mask(2, 2, 100, 0.5, 42);
  CHECK(a.lattice == b.lattice);

  int differing = 0;
  for (uint64_t seed = 0; seed < 20; ++seed) {
    const Mask c = random_mask(2, 2, 100, 0.5, seed);
    differing += c.lattice != a.lattice ? 1 : 0;
  }
  CHECK(differing >= 19);
}

TEST_CASE("masked positions form a set of the declared size") {
  SplitMix64 rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    const int t = 1 + static_cast<int>(rng.next_below(4));
    const int s = 1 + static_cast<int>(rng.next_below(3));
    const int p = 1 + static_cast<int>(rng.next_below(200));
    const double ratio = rng.next_double();
    const Mask m = random_mask(t, s, p, ratio, rng.next());
    CHECK(count_set(m) == m.masked_count);
    const Mask tm = tube_mask(t, s, p, ratio, rng.next());
    CHECK(count_set(tm) == tm.masked_count);
    const Mask cm = combined_mask(t, s, p, ratio, rng.next_double(),
                                  rng.next());
    CHECK(count_set(cm) == cm.masked_count);
  }
}

TEST_CASE("gather_visible with an empty mask is the identity") {
  Mat<float> tokens(2 * 1 * 4, 3);
  SplitMix64 rng(5);
  for (float& v : tokens.v) v = static_cast<float>(rng.next_double());
  const Mask m = random_mask(2, 1, 4, 0.0, 0);
  const auto g = gather_visible(tokens, m);
  CHECK(g.visible.rows == 8);
  CHECK(g.visible.v == tokens.v);
  for (size_t i = 0; i < g.index_map.size(); ++i)
    CHECK(g.index_map[i] == static_cast<int64_t>(i));
}

TEST_CASE("tube 0.75 over 196 patches leaves 49 visible per slice") {
  Mat<float> tokens(2 * 1 * 196, 8);
  const Mask m = tube_mask(2, 1, 196, 0.75, 1);
  const auto g = gather_visible(tokens, m);
  CHECK(g.visible.rows == 2 * 49);
}

TEST_CASE("scatter after gather restores unmasked positions exactly") {
  SplitMix64 rng(6);
  Mat<float> tokens(3 * 2 * 16, 4);
  for (float& v : tokens.v) v = static_cast<float>(rng.next_double());
  const Mask m = random_mask(3, 2, 16, 0.6, 17);
  const auto g = gather_visible(tokens, m);

  Mat<float> restored(tokens.rows, tokens.cols);
  restored.fill(-1.0f);
  scatter_rows(g.visible, g.index_map, restored);
  for (int64_t i = 0; i < tokens.rows; ++i) {
    const bool masked = m.lattice[static_cast<size_t>(i)] != 0;
    for (int64_t c = 0; c < tokens.cols; ++c) {
      if (masked)
        CHECK(restored(i, c) == -1.0f);
      else
        CHECK(restored(i, c) == tokens(i, c));
    }
  }
}

TEST_CASE("fully masked input is rejected") {
  Mat<float> tokens(4, 2);
  const Mask m = random_mask(1, 1, 4, 1.0, 0);
  CHECK_THROWS_WITH_AS(gather_visible(tokens, m),
                       doctest::Contains("no visible tokens"), data_error);
}

TEST_CASE("mask scheme names round-trip") {
  CHECK(mask_scheme_from_name("random") == MaskScheme::random);
  CHECK(mask_scheme_from_name("tube") == MaskScheme::tube);
  CHECK(mask_scheme_from_name("combined") == MaskScheme::combined);
  CHECK_THROWS_AS(mask_scheme_from_name("wave"), std::invalid_argument);
}
