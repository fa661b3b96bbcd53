#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <tuple>

#include "doctest.h"
#include "evmae/curation.hpp"
#include "evmae/dates.hpp"
#include "evmae/rng.hpp"

using namespace evmae;

namespace {

// Independent full-sort oracle for rank_candidates.
std::vector<Candidate> rank_oracle(std::vector<Candidate> cs, int k,
                                   double cloud_max) {
  std::erase_if(cs, [&](const Candidate& c) {
    return !(c.cloud_fraction < cloud_max);
  });
  std::stable_sort(cs.begin(), cs.end(),
                   [](const Candidate& a, const Candidate& b) {
                     return std::make_tuple(-a.scl_entropy, a.cloud_fraction,
                                            a.row, a.col) <
                            std::make_tuple(-b.scl_entropy, b.cloud_fraction,
                                            b.row, b.col);
                   });
  if (cs.size() > static_cast<size_t>(k)) cs.resize(static_cast<size_t>(k));
  return cs;
}

bool same_candidates(const std::vector<Candidate>& a,
                     const std::vector<Candidate>& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i)
    if (a[i].row != b[i].row || a[i].col != b[i].col ||
        a[i].cloud_fraction != b[i].cloud_fraction ||
        a[i].scl_entropy != b[i].scl_entropy)
      return false;
  return true;
}

Timestamp day(int y, int m, int d) { return Timestamp{y, m, d, 0}; }

}  // namespace

TEST_CASE("patch_grid covers the capture with non-overlapping windows") {
  const auto offsets = patch_grid(1000, 800, 384);
  REQUIRE(offsets.size() == 4);
  CHECK(offsets[0] == std::pair<int, int>{0, 0});
  CHECK(offsets[1] == std::pair<int, int>{0, 384});
  CHECK(offsets[2] == std::pair<int, int>{384, 0});
  CHECK(offsets[3] == std::pair<int, int>{384, 384});

  CHECK(patch_grid(384, 384, 384) ==
        std::vector<std::pair<int, int>>{{0, 0}});
  CHECK(patch_grid(383, 500, 384).empty());
}

TEST_CASE("patch_grid offsets stay in bounds on random shapes") {
  SplitMix64 rng(2024);
  for (int trial = 0; trial < 50; ++trial) {
    const int h = 1 + static_cast<int>(rng.next_below(2000));
    const int w = 1 + static_cast<int>(rng.next_below(2000));
    const int window = 1 + static_cast<int>(rng.next_below(500));
    const auto offsets = patch_grid(h, w, window);
    CHECK(offsets.size() ==
          static_cast<size_t>(h / window) * static_cast<size_t>(w / window));
    for (const auto& [row, col] : offsets) {
      CHECK(row + window <= h);
      CHECK(col + window <= w);
      CHECK(row % window == 0);
      CHECK(col % window == 0);
    }
  }
}

TEST_CASE("cloud_fraction counts set pixels") {
  const std::vector<uint8_t> ones(16, 1);
  const std::vector<uint8_t> zeros(16, 0);
  CHECK(cloud_fraction(ones) == 1.0);
  CHECK(cloud_fraction(zeros) == 0.0);
  std::vector<uint8_t> quarter(16, 0);
  for (int i = 0; i < 4; ++i) quarter[static_cast<size_t>(i * 5 % 16)] = 1;
  CHECK(cloud_fraction(quarter) == 0.25);
  CHECK_THROWS_AS(cloud_fraction({}), std::invalid_argument);
}

TEST_CASE("scl_entropy matches closed forms") {
  const std::vector<int32_t> single(100, 3);
  CHECK(scl_entropy(single, 11) == 0.0);

  std::vector<int32_t> uniform;
  for (int c = 0; c < 11; ++c)
    for (int i = 0; i < 7; ++i) uniform.push_back(c);
  CHECK(scl_entropy(uniform, 11) == doctest::Approx(std::log(11.0)).epsilon(1e-12));

  std::vector<int32_t> half(50, 0);
  half.insert(half.end(), 50, 1);
  CHECK(scl_entropy(half, 2) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  const std::vector<int32_t> bad = {0, 1, 11};
  CHECK_THROWS_WITH_AS(scl_entropy(bad, 11), doctest::Contains("out of range"),
                       std::invalid_argument);
}

TEST_CASE("scl_entropy is bounded by ln(n_classes)") {
  SplitMix64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const int n_classes = 2 + static_cast<int>(rng.next_below(12));
    std::vector<int32_t> labels;
    for (int i = 0; i < 200; ++i)
      labels.push_back(
          static_cast<int32_t>(rng.next_below(static_cast<uint64_t>(n_classes))));
    const double h = scl_entropy(labels, n_classes);
    CHECK(h >= 0.0);
    CHECK(h <= std::log(static_cast<double>(n_classes)) + 1e-12);
  }
}

TEST_CASE("rank_candidates worked examples") {
  std::vector<Candidate> all_cloudy;
  for (int i = 0; i < 5; ++i)
    all_cloudy.push_back({i, 0, 1.0, 2.0});
  CHECK(rank_candidates(all_cloudy, 3, 0.3).empty());

  std::vector<Candidate> cs = {{0, 0, 0.0, 0.1}, {1, 0, 0.0, 2.0},
                               {2, 0, 0.0, 1.0}};
  const auto top = rank_candidates(cs, 2, 0.3);
  REQUIRE(top.size() == 2);
  CHECK(top[0].scl_entropy == 2.0);
  CHECK(top[1].scl_entropy == 1.0);

  const auto more = rank_candidates(cs, 10, 0.3);
  CHECK(more.size() == 3);
}

TEST_CASE("rank_candidates matches the brute-force oracle") {
  SplitMix64 rng(99);
  for (int trial = 0; trial < 300; ++trial) {
    const int n = 1 + static_cast<int>(rng.next_below(670));
    std::vector<Candidate> cs;
    cs.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      Candidate c;
      c.row = static_cast<int>(rng.next_below(40)) * 384;
      c.col = static_cast<int>(rng.next_below(40)) * 384;
      c.cloud_fraction = rng.next_double();
      // Coarse grid of entropies makes ties common.
      c.scl_entropy = 0.25 * static_cast<double>(rng.next_below(9));
      cs.push_back(c);
    }
    const int k = 1 + static_cast<int>(rng.next_below(600));
    const double cloud_max = rng.next_double();
    CHECK(same_candidates(rank_candidates(cs, k, cloud_max),
                          rank_oracle(cs, k, cloud_max)));
  }
}

TEST_CASE("select_temporal_sequence with exactly ten dates returns them all") {
  std::vector<Timestamp> dates;
  for (int i = 0; i < 6; ++i) dates.push_back(day(2019, 3, 1 + i));
  dates.push_back(day(2019, 6, 6));
  dates.push_back(day(2019, 9, 6));
  dates.push_back(day(2019, 12, 6));
  dates.push_back(day(2020, 3, 6));
  const DateSequence seq = select_temporal_sequence(dates);
  CHECK(seq.dates.size() == 10);
  CHECK(seq.dense_count == 6);
  CHECK(seq.seasonal_count == 4);
}

TEST_CASE("daily availability yields a 6-day dense block plus seasonal picks") {
  std::vector<Timestamp> dates;
  const int64_t start = day_number(2018, 1, 1);
  for (int i = 0; i < 730; ++i) dates.push_back(date_from_day_number(start + i));

  const DateSequence seq = select_temporal_sequence(dates);
  REQUIRE(seq.dates.size() == 10);
  CHECK(seq.dense_count == 6);
  CHECK(seq.seasonal_count == 4);

  // Earliest minimal-span window: the first six days.
  for (int i = 0; i < 6; ++i)
    CHECK(timestamp_ordinal(seq.dates[static_cast<size_t>(i)]) ==
          timestamp_ordinal(date_from_day_number(start + i)));

  // Seasonal picks sit near dense-end + 3/6/9/12 months.
  const Timestamp dense_end = seq.dates[5];
  for (int k = 1; k <= 4; ++k) {
    const double target = timestamp_ordinal(add_months(dense_end, 3 * k));
    const double got = timestamp_ordinal(seq.dates[static_cast<size_t>(5 + k)]);
    CHECK(std::abs(got - target) <= 16.0);
  }

  // Strictly increasing.
  for (size_t i = 1; i < seq.dates.size(); ++i)
    CHECK(timestamp_ordinal(seq.dates[i - 1]) <
          timestamp_ordinal(seq.dates[i]));
}

TEST_CASE("fewer than ten dates are returned unchanged") {
  const std::vector<Timestamp> dates = {day(2019, 1, 1), day(2019, 2, 1),
                                        day(2019, 3, 1)};
  const DateSequence seq = select_temporal_sequence(dates);
  CHECK(seq.dates.size() == 3);
  CHECK(seq.dense_count == 3);
  CHECK(seq.seasonal_count == 0);
  CHECK_THROWS_AS(select_temporal_sequence({}), std::invalid_argument);
}

TEST_CASE("pair_sar_dates picks the nearest date with earlier-tie rule") {
  const std::vector<Timestamp> s2 = {day(2019, 1, 10), day(2019, 5, 2)};
  CHECK(pair_sar_dates(s2, s2) == s2);

  // day 100 of 2019 vs days 90 and 105
  const std::vector<Timestamp> targets = {
      date_from_day_number(day_number(2019, 1, 1) + 99)};
  const std::vector<Timestamp> s1 = {
      date_from_day_number(day_number(2019, 1, 1) + 89),
      date_from_day_number(day_number(2019, 1, 1) + 104)};
  const auto paired = pair_sar_dates(targets, s1);
  REQUIRE(paired.size() == 1);
  CHECK(paired[0] == s1[1]);

  const std::vector<Timestamp> tie = {
      date_from_day_number(day_number(2019, 1, 1) + 94),
      date_from_day_number(day_number(2019, 1, 1) + 104)};
  CHECK(pair_sar_dates(targets, tie)[0] == tie[0]);

  CHECK_THROWS_AS(pair_sar_dates(s2, {}), std::invalid_argument);
}

TEST_CASE("sequence_cloud_score aggregates per configuration") {
  const std::vector<double> clouds = {0.1, 0.5, 0.3};
  CHECK(sequence_cloud_score(clouds) == doctest::Approx(0.3));
  CHECK(sequence_cloud_score(clouds, CloudAggregate::max) == 0.5);
  CHECK_THROWS_AS(sequence_cloud_score({}), std::invalid_argument);
}
