#include "evmae/tokenizer.hpp"

#include <cmath>
#include <fmt/format.h>
#include <stdexcept>

namespace evmae {

void BandStatsAccumulator::add(const SourceTensor& tensor) {
  const size_t bands = tensor.dims[1];
  if (count_.empty()) {
    count_.assign(bands, 0);
    mean_.assign(bands, 0.0);
    m2_.assign(bands, 0.0);
  } else if (count_.size() != bands) {
    throw std::invalid_argument(
        fmt::format("band count {} != accumulator bands {}", bands,
                    count_.size()));
  }

  const size_t plane = static_cast<size_t>(tensor.dims[2]) * tensor.dims[3];
  for (uint32_t t = 0; t < tensor.dims[0]; ++t) {
    for (size_t c = 0; c < bands; ++c) {
      const size_t base = (static_cast<size_t>(t) * bands + c) * plane;
      int64_t n = count_[c];
      double mean = mean_[c], m2 = m2_[c];
      for (size_t i = 0; i < plane; ++i) {
        const double x = tensor.value_at(base + i);
        ++n;
        const double delta = x - mean;
        mean += delta / static_cast<double>(n);
        m2 += delta * (x - mean);
      }
      count_[c] = n;
      mean_[c] = mean;
      m2_[c] = m2;
    }
  }
}

BandStats BandStatsAccumulator::finalize(double epsilon) const {
  if (count_.empty()) throw std::invalid_argument("empty stats stream");
  BandStats stats;
  stats.epsilon = epsilon;
  for (size_t c = 0; c < count_.size(); ++c) {
    stats.mean.push_back(mean_[c]);
    stats.stddev.push_back(
        std::sqrt(m2_[c] / static_cast<double>(count_[c])));
  }
  return stats;
}

BandStats compute_band_stats(const std::vector<Region>& regions,
                             const std::string& source, double epsilon) {
  BandStatsAccumulator acc;
  for (const Region& r : regions) {
    const auto it = r.sources.find(source);
    if (it != r.sources.end()) acc.add(it->second);
  }
  if (acc.empty())
    throw std::invalid_argument(
        fmt::format("no tensors for source '{}'", source));
  return acc.finalize(epsilon);
}

template <typename T>
void standardize(const SourceTensor& src, const BandStats& stats,
                 std::vector<T>& out) {
  const size_t bands = src.dims[1];
  if (stats.mean.size() != bands)
    throw std::invalid_argument(
        fmt::format("band count {} != stats bands {}", bands,
                    stats.mean.size()));
  out.resize(src.value_count());
  const size_t plane = static_cast<size_t>(src.dims[2]) * src.dims[3];
  for (uint32_t t = 0; t < src.dims[0]; ++t) {
    for (size_t c = 0; c < bands; ++c) {
      const double mean = stats.mean[c];
      const double scale = 1.0 / (stats.stddev[c] + stats.epsilon);
      const size_t base = (static_cast<size_t>(t) * bands + c) * plane;
      for (size_t i = 0; i < plane; ++i)
        out[base + i] =
            static_cast<T>((src.value_at(base + i) - mean) * scale);
    }
  }
}

template <typename T>
void resize_bilinear(const T* src, int c, int h, int w, T* dst, int out_h,
                     int out_w) {
  if (h < 1 || w < 1) throw std::invalid_argument("empty image");
  const double sy =
      out_h > 1 ? static_cast<double>(h - 1) / (out_h - 1) : 0.0;
  const double sx =
      out_w > 1 ? static_cast<double>(w - 1) / (out_w - 1) : 0.0;

  std::vector<int> x0(static_cast<size_t>(out_w)), x1(static_cast<size_t>(out_w));
  std::vector<T> fx(static_cast<size_t>(out_w));
  for (int ox = 0; ox < out_w; ++ox) {
    const double p = ox * sx;
    const int i = static_cast<int>(p);
    x0[static_cast<size_t>(ox)] = i;
    x1[static_cast<size_t>(ox)] = std::min(i + 1, w - 1);
    fx[static_cast<size_t>(ox)] = static_cast<T>(p - i);
  }

  for (int ch = 0; ch < c; ++ch) {
    const T* plane = src + static_cast<size_t>(ch) * h * w;
    T* out_plane = dst + static_cast<size_t>(ch) * out_h * out_w;
    for (int oy = 0; oy < out_h; ++oy) {
      const double p = oy * sy;
      const int y0 = static_cast<int>(p);
      const int y1 = std::min(y0 + 1, h - 1);
      const T fy = static_cast<T>(p - y0);
      const T* r0 = plane + static_cast<size_t>(y0) * w;
      const T* r1 = plane + static_cast<size_t>(y1) * w;
      T* out_row = out_plane + static_cast<size_t>(oy) * out_w;
      for (int ox = 0; ox < out_w; ++ox) {
        const int i = x0[static_cast<size_t>(ox)];
        const int j = x1[static_cast<size_t>(ox)];
        const T f = fx[static_cast<size_t>(ox)];
        // Zero fractions reproduce samples exactly (identity at equal size).
        const T top = r0[i] + f * (r0[j] - r0[i]);
        const T bot = r1[i] + f * (r1[j] - r1[i]);
        out_row[ox] = top + fy * (bot - top);
      }
    }
  }
}

template <typename T>
Mat<T> patchify(const T* img, int c, int hw, int patch) {
  if (hw % patch != 0)
    throw std::invalid_argument(
        fmt::format("non-divisible dims: {} % {} != 0", hw, patch));
  const int grid = hw / patch;
  Mat<T> out(static_cast<int64_t>(grid) * grid,
             static_cast<int64_t>(c) * patch * patch);
  for (int by = 0; by < grid; ++by) {
    for (int bx = 0; bx < grid; ++bx) {
      T* row = out.row(static_cast<int64_t>(by) * grid + bx);
      for (int ch = 0; ch < c; ++ch) {
        const T* plane = img + static_cast<size_t>(ch) * hw * hw;
        for (int py = 0; py < patch; ++py) {
          const T* src_row =
              plane + static_cast<size_t>(by * patch + py) * hw + bx * patch;
          T* dst = row + (static_cast<size_t>(ch) * patch + py) * patch;
          std::copy(src_row, src_row + patch, dst);
        }
      }
    }
  }
  return out;
}

template <typename T>
Mat<T> source_patches(const SourceTensor& src, const BandStats& stats,
                      int image_size, int patch) {
  const int t = static_cast<int>(src.dims[0]);
  const int c = static_cast<int>(src.dims[1]);
  const int h = static_cast<int>(src.dims[2]);
  const int w = static_cast<int>(src.dims[3]);

  std::vector<T> standardized;
  standardize(src, stats, standardized);

  const int grid = image_size / patch;
  const int p = grid * grid;
  const int in_dim = c * patch * patch;
  Mat<T> out(static_cast<int64_t>(t) * p, in_dim);

  std::vector<T> resized(static_cast<size_t>(c) * image_size * image_size);
  for (int ti = 0; ti < t; ++ti) {
    const T* frame = standardized.data() +
                     static_cast<size_t>(ti) * c * h * w;
    const T* pixels = frame;
    if (h != image_size || w != image_size) {
      resize_bilinear(frame, c, h, w, resized.data(), image_size, image_size);
      pixels = resized.data();
    }
    Mat<T> rows = patchify(pixels, c, image_size, patch);
    std::copy(rows.v.begin(), rows.v.end(),
              out.row(static_cast<int64_t>(ti) * p));
  }
  return out;
}

template <typename T>
Mat<T> embed_patches(const Mat<T>& patches, const MatView<const T>& w,
                     std::span<const T> bias) {
  if (patches.cols != w.rows)
    throw std::invalid_argument(
        fmt::format("patch dim {} != tokenizer input dim {}", patches.cols,
                    w.rows));
  Mat<T> tokens(patches.rows, w.cols);
  for (int64_t r = 0; r < tokens.rows; ++r)
    std::copy(bias.begin(), bias.end(), tokens.row(r));
  gemm(false, false, patches.rows, w.cols, patches.cols, T(1), patches.data(),
       patches.cols, w.p, w.cols, T(1), tokens.data(), tokens.cols);
  return tokens;
}

template <typename T>
Mat<T> tokenize_source(const SourceTensor& src, const MatView<const T>& w,
                       std::span<const T> bias, const BandStats& stats,
                       int image_size, int patch) {
  const Mat<T> patches = source_patches<T>(src, stats, image_size, patch);
  return embed_patches(patches, w, bias);
}

template void standardize<float>(const SourceTensor&, const BandStats&,
                                 std::vector<float>&);
template void standardize<double>(const SourceTensor&, const BandStats&,
                                  std::vector<double>&);
template void resize_bilinear<float>(const float*, int, int, int, float*, int,
                                     int);
template void resize_bilinear<double>(const double*, int, int, int, double*,
                                      int, int);
template Mat<float> patchify<float>(const float*, int, int, int);
template Mat<double> patchify<double>(const double*, int, int, int);
template Mat<float> source_patches<float>(const SourceTensor&,
                                          const BandStats&, int, int);
template Mat<double> source_patches<double>(const SourceTensor&,
                                            const BandStats&, int, int);
template Mat<float> embed_patches<float>(const Mat<float>&,
                                         const MatView<const float>&,
                                         std::span<const float>);
template Mat<double> embed_patches<double>(const Mat<double>&,
                                           const MatView<const double>&,
                                           std::span<const double>);
template Mat<float> tokenize_source<float>(const SourceTensor&,
                                           const MatView<const float>&,
                                           std::span<const float>,
                                           const BandStats&, int, int);
template Mat<double> tokenize_source<double>(const SourceTensor&,
                                             const MatView<const double>&,
                                             std::span<const double>,
                                             const BandStats&, int, int);

}  // namespace evmae
