#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "evmae/encoding.hpp"
#include "evmae/rng.hpp"

using namespace evmae;

namespace {

Mat<float> random_table(int rows, int cols, uint64_t seed) {
  Mat<float> m(rows, cols);
  SplitMix64 rng(seed);
  for (float& v : m.v) v = static_cast<float>(rng.next_double() - 0.5);
  return m;
}

MatView<const float> cview(const Mat<float>& m) {
  return {m.rows, m.cols, m.data()};
}

}  // namespace

TEST_CASE("positional grid shape and determinism") {
  const Mat<float> a = positional_grid<float>(128, 14);
  CHECK(a.rows == 196);
  CHECK(a.cols == 128);
  const Mat<float> b = positional_grid<float>(128, 14);
  CHECK(a.v == b.v);
  CHECK_THROWS_AS(positional_grid<float>(126, 14), std::invalid_argument);
}

TEST_CASE("positional grid cell (0,0) is all sin 0 / cos 1") {
  const Mat<float> g = positional_grid<float>(64, 14);
  const int quarter = 16, half = 32;
  for (int i = 0; i < quarter; ++i) {
    CHECK(g(0, i) == 0.0f);
    CHECK(g(0, quarter + i) == 1.0f);
    CHECK(g(0, half + i) == 0.0f);
    CHECK(g(0, half + quarter + i) == 1.0f);
  }
}

TEST_CASE("positional grid entries are unit-bounded") {
  const Mat<float> g = positional_grid<float>(128, 14);
  for (const float v : g.v) {
    CHECK(v >= -1.0f);
    CHECK(v <= 1.0f);
  }
}

TEST_CASE("time_index mapping rules") {
  CHECK(time_index({2019, 6, 15, 12}) == std::array<int, 4>{3, 6, 15, 13});
  CHECK(time_index({0, 0, 0, 0}) == std::array<int, 4>{0, 0, 0, 0});
  CHECK(time_index({2031, 13, 40, 99}) == std::array<int, 4>{0, 0, 0, 0});
  CHECK(time_index({2017, 1, 1, 1}) == std::array<int, 4>{1, 1, 1, 2});
  CHECK(time_index({2022, 12, 31, 23}) == std::array<int, 4>{6, 12, 31, 24});
}

TEST_CASE("embed_time concatenates the four component tables") {
  const Mat<float> year = random_table(kYearVocab, 16, 1);
  const Mat<float> month = random_table(kMonthVocab, 16, 2);
  const Mat<float> day = random_table(kDayVocab, 16, 3);
  const Mat<float> hour = random_table(kHourVocab, 16, 4);

  const std::vector<std::array<int, 4>> idx = {
      {1, 2, 3, 4}, {0, 0, 0, 0}, {1, 2, 3, 4}};
  const Mat<float> emb = embed_time<float>(idx, cview(year), cview(month),
                                           cview(day), cview(hour));
  CHECK(emb.rows == 3);
  CHECK(emb.cols == 64);

  // Row 1 is the concatenation of the four unknown rows.
  for (int c = 0; c < 16; ++c) {
    CHECK(emb(1, c) == year(0, c));
    CHECK(emb(1, 16 + c) == month(0, c));
    CHECK(emb(1, 32 + c) == day(0, c));
    CHECK(emb(1, 48 + c) == hour(0, c));
  }
  // Identical timestamps produce identical rows.
  for (int c = 0; c < 64; ++c) CHECK(emb(0, c) == emb(2, c));
}

TEST_CASE("embed_source looks up rows and rejects unknown ids") {
  const Mat<float> table = random_table(3, 64, 9);
  const std::vector<int> ids = {2, 2};
  const Mat<float> emb = embed_source<float>(ids, cview(table));
  CHECK(emb.rows == 2);
  CHECK(emb.cols == 64);
  for (int c = 0; c < 64; ++c) {
    CHECK(emb(0, c) == table(2, c));
    CHECK(emb(1, c) == table(2, c));
  }
  const std::vector<int> bad = {3};
  CHECK_THROWS_AS(embed_source<float>(bad, cview(table)),
                  std::invalid_argument);
}

TEST_CASE("compose_encoding width law and exact concatenation") {
  const int d = 128;
  const Mat<float> pos = positional_grid<float>(d, 3);  // p = 9
  const Mat<float> src = random_table(2, 64, 5);
  const Mat<float> time = random_table(4, 64, 6);
  const Mat<float> enc = compose_encoding(pos, src, time);
  CHECK(enc.rows == 4 * 2 * 9);
  CHECK(enc.cols == d + 64 + 64);

  // Exhaustive bitwise check against direct concatenation.
  for (int ti = 0; ti < 4; ++ti)
    for (int si = 0; si < 2; ++si)
      for (int pi = 0; pi < 9; ++pi) {
        const float* row = enc.row((ti * 2 + si) * 9 + pi);
        for (int c = 0; c < d; ++c) REQUIRE(row[c] == pos(pi, c));
        for (int c = 0; c < 64; ++c) REQUIRE(row[d + c] == src(si, c));
        for (int c = 0; c < 64; ++c) REQUIRE(row[d + 64 + c] == time(ti, c));
      }
}

TEST_CASE("compose_encoding of zeros is zero") {
  const Mat<float> pos(4, 8);
  const Mat<float> src(1, 64);
  const Mat<float> time(2, 64);
  const Mat<float> enc = compose_encoding(pos, src, time);
  for (const float v : enc.v) CHECK(v == 0.0f);
}

TEST_CASE("timestep dropout edge probabilities") {
  const std::vector<Timestamp> times = {{2019, 1, 2, 3}, {2020, 4, 5, 6}};
  SplitMix64 rng(1);
  const auto kept = timestep_dropout(times, 0.0, rng);
  CHECK(kept == times);
  const auto dropped = timestep_dropout(times, 1.0, rng);
  for (const Timestamp& ts : dropped) CHECK(ts == Timestamp{});
  CHECK_THROWS_AS(timestep_dropout(times, 1.5, rng), std::invalid_argument);
}

TEST_CASE("timestep dropout hits its rate over 10000 seeded trials") {
  const std::vector<Timestamp> times = {{2019, 1, 2, 3}};
  int zeroed = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    SplitMix64 rng(key_mix({77, static_cast<uint64_t>(trial)}));
    const auto out = timestep_dropout(times, 0.10, rng);
    zeroed += out[0] == Timestamp{} ? 1 : 0;
  }
  const double fraction = zeroed / 10000.0;
  CHECK(fraction >= 0.09);
  CHECK(fraction <= 0.11);
}

TEST_CASE("dropout path equals the unknown-timestamp path") {
  const Mat<float> year = random_table(kYearVocab, 16, 11);
  const Mat<float> month = random_table(kMonthVocab, 16, 12);
  const Mat<float> day = random_table(kDayVocab, 16, 13);
  const Mat<float> hour = random_table(kHourVocab, 16, 14);

  const std::vector<Timestamp> times = {{2019, 6, 15, 12}, {2021, 1, 2, 3}};
  SplitMix64 rng(4);
  const auto dropped = timestep_dropout(times, 1.0, rng);

  std::vector<std::array<int, 4>> dropped_idx, unknown_idx;
  for (const Timestamp& ts : dropped) dropped_idx.push_back(time_index(ts));
  for (size_t i = 0; i < times.size(); ++i)
    unknown_idx.push_back(time_index(Timestamp{}));

  const Mat<float> a = embed_time<float>(dropped_idx, cview(year),
                                         cview(month), cview(day), cview(hour));
  const Mat<float> b = embed_time<float>(unknown_idx, cview(year),
                                         cview(month), cview(day), cview(hour));
  CHECK(a.v == b.v);
}
