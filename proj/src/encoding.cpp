#include "evmae/encoding.hpp"

#include <cmath>
#include <fmt/format.h>
#include <stdexcept>

namespace evmae {

std::array<int, 4> time_index(const Timestamp& ts) {
  std::array<int, 4> idx{0, 0, 0, 0};
  if (ts.year >= 2017 && ts.year <= 2022) idx[0] = ts.year - kYearBase;
  if (ts.month >= 1 && ts.month <= 12) idx[1] = ts.month;
  if (ts.day >= 1 && ts.day <= 31) idx[2] = ts.day;
  // Hour-of-day values 1..23 embed at hour + 1; 0 stays unknown.
  if (ts.hour >= 1 && ts.hour <= 23) idx[3] = ts.hour + 1;
  return idx;
}

template <typename T>
Mat<T> positional_grid(int dim, int grid) {
  if (dim % 4 != 0)
    throw std::invalid_argument(
        fmt::format("positional dim {} not divisible by 4", dim));
  const int half = dim / 2;
  const int quarter = dim / 4;

  // 1-D sin-cos code of a coordinate: quarter sin entries then quarter cos.
  std::vector<double> omega(static_cast<size_t>(quarter));
  for (int i = 0; i < quarter; ++i)
    omega[static_cast<size_t>(i)] =
        1.0 / std::pow(10000.0, static_cast<double>(i) / quarter);

  Mat<T> out(static_cast<int64_t>(grid) * grid, dim);
  for (int r = 0; r < grid; ++r) {
    for (int c = 0; c < grid; ++c) {
      T* row = out.row(static_cast<int64_t>(r) * grid + c);
      for (int i = 0; i < quarter; ++i) {
        const double wr = r * omega[static_cast<size_t>(i)];
        const double wc = c * omega[static_cast<size_t>(i)];
        row[i] = static_cast<T>(std::sin(wr));
        row[quarter + i] = static_cast<T>(std::cos(wr));
        row[half + i] = static_cast<T>(std::sin(wc));
        row[half + quarter + i] = static_cast<T>(std::cos(wc));
      }
    }
  }
  return out;
}

template <typename T>
Mat<T> embed_time(std::span<const std::array<int, 4>> indices,
                  const MatView<const T>& year, const MatView<const T>& month,
                  const MatView<const T>& day, const MatView<const T>& hour) {
  const MatView<const T>* tables[4] = {&year, &month, &day, &hour};
  Mat<T> out(static_cast<int64_t>(indices.size()), kTimeEmbedDim);
  for (size_t t = 0; t < indices.size(); ++t) {
    T* row = out.row(static_cast<int64_t>(t));
    for (int comp = 0; comp < 4; ++comp) {
      const int idx = indices[t][static_cast<size_t>(comp)];
      const MatView<const T>& tbl = *tables[comp];
      if (idx < 0 || idx >= tbl.rows)
        throw std::invalid_argument(
            fmt::format("time index {} out of table range {}", idx, tbl.rows));
      const T* src = tbl.row(idx);
      std::copy(src, src + kTimeComponentDim, row + comp * kTimeComponentDim);
    }
  }
  return out;
}

template <typename T>
Mat<T> embed_source(std::span<const int> source_ids,
                    const MatView<const T>& table) {
  Mat<T> out(static_cast<int64_t>(source_ids.size()), table.cols);
  for (size_t s = 0; s < source_ids.size(); ++s) {
    const int id = source_ids[s];
    if (id < 0 || id >= table.rows)
      throw std::invalid_argument(
          fmt::format("unregistered source id {}", id));
    const T* src = table.row(id);
    std::copy(src, src + table.cols, out.row(static_cast<int64_t>(s)));
  }
  return out;
}

template <typename T>
Mat<T> compose_encoding(const Mat<T>& pos, const Mat<T>& src,
                        const Mat<T>& time) {
  if (src.cols != kSourceEmbedDim || time.cols != kTimeEmbedDim)
    throw std::invalid_argument("unexpected embedding widths");
  const int64_t t = time.rows, s = src.rows, p = pos.rows;
  const int64_t width = pos.cols + src.cols + time.cols;
  Mat<T> out(t * s * p, width);
  for (int64_t ti = 0; ti < t; ++ti) {
    for (int64_t si = 0; si < s; ++si) {
      for (int64_t pi = 0; pi < p; ++pi) {
        T* row = out.row((ti * s + si) * p + pi);
        std::copy(pos.row(pi), pos.row(pi) + pos.cols, row);
        std::copy(src.row(si), src.row(si) + src.cols, row + pos.cols);
        std::copy(time.row(ti), time.row(ti) + time.cols,
                  row + pos.cols + src.cols);
      }
    }
  }
  return out;
}

std::vector<Timestamp> timestep_dropout(std::span<const Timestamp> timesteps,
                                        double prob, SplitMix64& rng) {
  if (prob < 0.0 || prob > 1.0)
    throw std::invalid_argument("dropout probability outside [0, 1]");
  if (rng.next_double() < prob)
    return std::vector<Timestamp>(timesteps.size(), Timestamp{});
  return {timesteps.begin(), timesteps.end()};
}

template Mat<float> positional_grid<float>(int, int);
template Mat<double> positional_grid<double>(int, int);
template Mat<float> embed_time<float>(std::span<const std::array<int, 4>>,
                                      const MatView<const float>&,
                                      const MatView<const float>&,
                                      const MatView<const float>&,
                                      const MatView<const float>&);
template Mat<double> embed_time<double>(std::span<const std::array<int, 4>>,
                                        const MatView<const double>&,
                                        const MatView<const double>&,
                                        const MatView<const double>&,
                                        const MatView<const double>&);
template Mat<float> embed_source<float>(std::span<const int>,
                                        const MatView<const float>&);
template Mat<double> embed_source<double>(std::span<const int>,
                                          const MatView<const double>&);
template Mat<float> compose_encoding<float>(const Mat<float>&,
                                            const Mat<float>&,
                                            const Mat<float>&);
template Mat<double> compose_encoding<double>(const Mat<double>&,
                                              const Mat<double>&,
                                              const Mat<double>&);

}  // namespace evmae
