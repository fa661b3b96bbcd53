#include "evmae/curation.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <stdexcept>

#include "evmae/dates.hpp"

namespace evmae {

std::vector<std::pair<int, int>> patch_grid(int capture_h, int capture_w,
                                            int window) {
  if (window < 1) throw std::invalid_argument("window must be >= 1");
  std::vector<std::pair<int, int>> offsets;
  const int rows = capture_h / window;
  const int cols = capture_w / window;
  offsets.reserve(static_cast<size_t>(std::max(0, rows * cols)));
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) offsets.emplace_back(i * window, j * window);
  return offsets;
}

double cloud_fraction(std::span<const uint8_t> mask) {
  if (mask.empty()) throw std::invalid_argument("empty cloud mask");
  size_t set = 0;
  for (const uint8_t m : mask) set += m != 0;
  return static_cast<double>(set) / static_cast<double>(mask.size());
}

double scl_entropy(std::span<const int32_t> labels, int n_classes) {
  if (labels.empty()) throw std::invalid_argument("empty label map");
  if (n_classes < 1) throw std::invalid_argument("n_classes must be >= 1");
  std::vector<int64_t> hist(static_cast<size_t>(n_classes), 0);
  for (const int32_t l : labels) {
    if (l < 0 || l >= n_classes)
      throw std::invalid_argument(fmt::format("label {} out of range", l));
    ++hist[static_cast<size_t>(l)];
  }
  const double n = static_cast<double>(labels.size());
  double h = 0.0;
  for (const int64_t c : hist) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / n;
    h -= p * std::log(p);
  }
  return h;
}

std::vector<Candidate> rank_candidates(std::vector<Candidate> candidates,
                                       int k, double cloud_max) {
  if (k < 1) throw std::invalid_argument("k must be >= 1");
  std::erase_if(candidates, [&](const Candidate& c) {
    return !(c.cloud_fraction < cloud_max);
  });
  const auto better = [](const Candidate& a, const Candidate& b) {
    if (a.scl_entropy != b.scl_entropy) return a.scl_entropy > b.scl_entropy;
    if (a.cloud_fraction != b.cloud_fraction)
      return a.cloud_fraction < b.cloud_fraction;
    if (a.row != b.row) return a.row < b.row;
    return a.col < b.col;
  };
  const size_t keep = std::min(candidates.size(), static_cast<size_t>(k));
  std::partial_sort(candidates.begin(),
                    candidates.begin() + static_cast<int64_t>(keep),
                    candidates.end(), better);
  candidates.resize(keep);
  return candidates;
}

DateSequence select_temporal_sequence(std::span<const Timestamp> available) {
  if (available.empty()) throw std::invalid_argument("no dates available");

  // Drop exact duplicates so the output can be strictly increasing.
  std::vector<Timestamp> dates(available.begin(), available.end());
  dates.erase(std::unique(dates.begin(), dates.end()), dates.end());
  const size_t n = dates.size();

  DateSequence seq;
  if (n < 10) {
    seq.dates = std::move(dates);
    seq.dense_count = static_cast<int>(seq.dates.size());
    seq.seasonal_count = 0;
    return seq;
  }

  std::vector<double> ord(n);
  for (size_t i = 0; i < n; ++i) ord[i] = timestamp_ordinal(dates[i]);

  // Minimal-span window of 6 consecutive dates; earliest wins ties.
  size_t best = 0;
  double best_span = ord[5] - ord[0];
  for (size_t i = 1; i + 6 <= n; ++i) {
    const double span = ord[i + 5] - ord[i];
    if (span < best_span) {
      best_span = span;
      best = i;
    }
  }

  std::vector<bool> taken(n, false);
  for (size_t i = best; i < best + 6; ++i) taken[i] = true;

  // Four seasonal picks anchored at the last dense date.
  const Timestamp dense_end = dates[best + 5];
  for (int k = 1; k <= 4; ++k) {
    const double target = timestamp_ordinal(add_months(dense_end, 3 * k));
    size_t arg = n;
    double best_dist = 0.0;
    for (size_t i = 0; i < n; ++i) {
      if (taken[i]) continue;
      const double dist = std::abs(ord[i] - target);
      if (arg == n || dist < best_dist) {
        arg = i;
        best_dist = dist;
      }
    }
    if (arg < n) taken[arg] = true;
  }

  for (size_t i = 0; i < n; ++i)
    if (taken[i]) seq.dates.push_back(dates[i]);
  seq.dense_count = 6;
  seq.seasonal_count = static_cast<int>(seq.dates.size()) - 6;
  return seq;
}

std::vector<Timestamp> pair_sar_dates(std::span<const Timestamp> s2_dates,
                                      std::span<const Timestamp> s1_available) {
  if (s1_available.empty())
    throw std::invalid_argument("no SAR dates available");

  std::vector<double> ord(s1_available.size());
  for (size_t i = 0; i < s1_available.size(); ++i)
    ord[i] = timestamp_ordinal(s1_available[i]);

  std::vector<Timestamp> out;
  out.reserve(s2_dates.size());
  for (const Timestamp& target : s2_dates) {
    const double to = timestamp_ordinal(target);
    size_t arg = 0;
    double best = std::abs(ord[0] - to);
    for (size_t i = 1; i < s1_available.size(); ++i) {
      const double dist = std::abs(ord[i] - to);
      // Strict comparison keeps the earlier date on ties (inputs sorted);
      // for unsorted inputs the earlier ordinal still wins.
      if (dist < best || (dist == best && ord[i] < ord[arg])) {
        best = dist;
        arg = i;
      }
    }
    out.push_back(s1_available[arg]);
  }
  return out;
}

double sequence_cloud_score(std::span<const double> per_date_cloud,
                            CloudAggregate aggregate) {
  if (per_date_cloud.empty())
    throw std::invalid_argument("empty cloud sequence");
  if (aggregate == CloudAggregate::max)
    return *std::max_element(per_date_cloud.begin(), per_date_cloud.end());
  double sum = 0.0;
  for (const double c : per_date_cloud) sum += c;
  return sum / static_cast<double>(per_date_cloud.size());
}

}  // namespace evmae
