#pragma once

#include <span>
#include <string>
#include <vector>

#include "evmae/linalg.hpp"
#include "evmae/region.hpp"

namespace evmae {

// Per-band training-set statistics used for input standardization.
struct BandStats {
  std::vector<double> mean;
  std::vector<double> stddev;  // population std
  double epsilon = 1e-6;
};

// Streaming per-band mean/std (Welford). Matches a two-pass computation to
// high precision regardless of how the stream is chunked.
class BandStatsAccumulator {
 public:
  void add(const SourceTensor& tensor);
  bool empty() const { return count_.empty(); }
  BandStats finalize(double epsilon = 1e-6) const;

 private:
  std::vector<int64_t> count_;
  std::vector<double> mean_;
  std::vector<double> m2_;
};

BandStats compute_band_stats(const std::vector<Region>& regions,
                             const std::string& source, double epsilon = 1e-6);

// out = (x - mean_b) / (std_b + epsilon), planar (t, c, h, w) -> float-like.
template <typename T>
void standardize(const SourceTensor& src, const BandStats& stats,
                 std::vector<T>& out);

// Corner-aligned bilinear resize of a planar c x h x w image.
template <typename T>
void resize_bilinear(const T* src, int c, int h, int w, T* dst, int out_h,
                     int out_w);

// Splits a planar c x hw x hw image into (hw/patch)^2 rows; each row holds
// one patch flattened band-major, then row-major within the band.
template <typename T>
Mat<T> patchify(const T* img, int c, int hw, int patch);

// Full per-source pipeline: standardize -> resize -> patchify, all
// timesteps stacked. Result is (t * p, bands * patch^2).
template <typename T>
Mat<T> source_patches(const SourceTensor& src, const BandStats& stats,
                      int image_size, int patch);

// Linear per-source embedding of prepared patches: tokens = patches * w + b.
template <typename T>
Mat<T> embed_patches(const Mat<T>& patches, const MatView<const T>& w,
                     std::span<const T> bias);

// standardize -> resize -> patchify -> linear map; (t * p, W) with
// p = (image_size / patch)^2 for every source.
template <typename T>
Mat<T> tokenize_source(const SourceTensor& src, const MatView<const T>& w,
                       std::span<const T> bias, const BandStats& stats,
                       int image_size = 224, int patch = 16);

}  // namespace evmae
