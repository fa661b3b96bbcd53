#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "evmae/region.hpp"

namespace evmae {

struct Candidate {
  int row = 0;
  int col = 0;
  double cloud_fraction = 0.0;
  double scl_entropy = 0.0;  // nats
};

struct DateSequence {
  std::vector<Timestamp> dates;  // strictly increasing, at most 10
  int dense_count = 0;
  int seasonal_count = 0;
};

enum class CloudAggregate { mean, max };

// Non-overlapping window offsets starting at the top-left corner, row-major.
// Empty when the capture is smaller than the window.
std::vector<std::pair<int, int>> patch_grid(int capture_h, int capture_w,
                                            int window);

// Fraction of set pixels in a binary mask; throws on an empty mask.
double cloud_fraction(std::span<const uint8_t> mask);

// Shannon entropy (nats) of the empirical class histogram, with 0·ln 0 = 0.
// Throws if any label falls outside [0, n_classes).
double scl_entropy(std::span<const int32_t> labels, int n_classes);

// Keeps candidates with cloud_fraction < cloud_max, sorts by entropy
// descending (ties: lower cloud fraction, then row-major offset) and returns
// the first k (fewer if the filtered set is smaller).
std::vector<Candidate> rank_candidates(std::vector<Candidate> candidates,
                                       int k, double cloud_max);

// Picks the minimal-span window of 6 consecutive dates (earliest on ties)
// plus the 4 dates closest to dense-end + 3/6/9/12 months, without reuse.
// Fewer than 10 dates are returned unchanged as a fully dense sequence.
DateSequence select_temporal_sequence(std::span<const Timestamp> available);

// For each target date, the candidate minimizing the absolute fractional-day
// difference; ties resolve to the earlier candidate.
std::vector<Timestamp> pair_sar_dates(std::span<const Timestamp> s2_dates,
                                      std::span<const Timestamp> s1_available);

// Per-sequence cloud score used to compare candidate date sequences.
double sequence_cloud_score(std::span<const double> per_date_cloud,
                            CloudAggregate aggregate = CloudAggregate::mean);

}  // namespace evmae
