#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "evmae/rng.hpp"
#include "evmae/synthgen.hpp"
#include "evmae/tokenizer.hpp"

using namespace evmae;

namespace {

SourceTensor tensor_from(const std::vector<double>& values, int t, int c,
                         int h, int w, Dtype dt = Dtype::f32,
                         const std::string& name = "t") {
  SourceTensor src;
  src.profile = SourceProfile{name, c, 1.0, h, w, dt};
  src.dims = {static_cast<uint32_t>(t), static_cast<uint32_t>(c),
              static_cast<uint32_t>(h), static_cast<uint32_t>(w)};
  src.data.resize(src.byte_size());
  for (size_t i = 0; i < values.size(); ++i) {
    switch (dt) {
      case Dtype::u8:
        src.data[i] = static_cast<uint8_t>(values[i]);
        break;
      case Dtype::u16: {
        const uint16_t q = static_cast<uint16_t>(values[i]);
        std::memcpy(src.data.data() + 2 * i, &q, 2);
        break;
      }
      case Dtype::f32: {
        const float q = static_cast<float>(values[i]);
        std::memcpy(src.data.data() + 4 * i, &q, 4);
        break;
      }
    }
  }
  for (int i = 0; i < t; ++i) src.timestamps.push_back({2019, 1, 1 + i, 0});
  return src;
}

BandStats identity_stats(int bands) {
  BandStats s;
  s.mean.assign(static_cast<size_t>(bands), 0.0);
  s.stddev.assign(static_cast<size_t>(bands), 1.0);
  s.epsilon = 0.0;
  return s;
}

}  // namespace

TEST_CASE("resize to the same size is the identity") {
  std::vector<float> img(2 * 8 * 8);
  SplitMix64 rng(1);
  for (float& v : img) v = static_cast<float>(rng.next_double());
  std::vector<float> out(img.size());
  resize_bilinear(img.data(), 2, 8, 8, out.data(), 8, 8);
  CHECK(img == out);
}

TEST_CASE("resize preserves constant images at any size") {
  for (const int hw : {1, 3, 17, 64}) {
    std::vector<float> img(static_cast<size_t>(hw) * hw, 7.0f);
    std::vector<float> out(224 * 224);
    resize_bilinear(img.data(), 1, hw, hw, out.data(), 224, 224);
    for (const float v : out) CHECK(v == 7.0f);
  }
}

TEST_CASE("2x2 upsample matches the affine closed form") {
  // The image [[0,1],[2,3]] equals f(y, x) = 2y + x, which bilinear
  // interpolation reproduces exactly under corner-aligned sampling.
  const std::vector<float> img = {0.0f, 1.0f, 2.0f, 3.0f};
  std::vector<float> out(16);
  resize_bilinear(img.data(), 1, 2, 2, out.data(), 4, 4);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) {
      const double expected = 2.0 * (y / 3.0) + (x / 3.0);
      CHECK(out[static_cast<size_t>(y * 4 + x)] ==
            doctest::Approx(expected).epsilon(1e-6));
    }
}

TEST_CASE("band stats closed forms") {
  const SourceTensor constant = tensor_from(std::vector<double>(16, 5.0), 1,
                                            1, 4, 4);
  BandStatsAccumulator acc;
  acc.add(constant);
  const BandStats s = acc.finalize();
  CHECK(s.mean[0] == doctest::Approx(5.0));
  CHECK(s.stddev[0] == 0.0);

  std::vector<double> alternating;
  for (int i = 0; i < 16; ++i) alternating.push_back(i % 2 == 0 ? 0.0 : 2.0);
  BandStatsAccumulator acc2;
  acc2.add(tensor_from(alternating, 1, 1, 4, 4));
  const BandStats s2 = acc2.finalize();
  CHECK(s2.mean[0] == doctest::Approx(1.0));
  CHECK(s2.stddev[0] == doctest::Approx(1.0));
}

TEST_CASE("streaming stats match a two-pass oracle") {
  SplitMix64 rng(3);
  const int bands = 3;
  std::vector<SourceTensor> tensors;
  for (int i = 0; i < 100; ++i) {
    std::vector<double> values;
    const int t = 1 + static_cast<int>(rng.next_below(3));
    for (int j = 0; j < t * bands * 6 * 6; ++j)
      values.push_back(rng.next_double() * 1000.0);
    tensors.push_back(tensor_from(values, t, bands, 6, 6));
  }

  BandStatsAccumulator acc;
  for (const SourceTensor& s : tensors) acc.add(s);
  const BandStats streamed = acc.finalize();

  // Two-pass oracle over the same values.
  for (int b = 0; b < bands; ++b) {
    std::vector<double> xs;
    for (const SourceTensor& s : tensors) {
      const size_t plane = static_cast<size_t>(s.dims[2]) * s.dims[3];
      for (uint32_t t = 0; t < s.dims[0]; ++t)
        for (size_t i = 0; i < plane; ++i)
          xs.push_back(s.value_at(
              (static_cast<size_t>(t) * bands + static_cast<size_t>(b)) *
                  plane +
              i));
    }
    double mean = 0.0;
    for (const double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (const double x : xs) var += (x - mean) * (x - mean);
    var /= static_cast<double>(xs.size());
    CHECK(std::abs(streamed.mean[static_cast<size_t>(b)] - mean) <=
          1e-10 * std::abs(mean));
    CHECK(std::abs(streamed.stddev[static_cast<size_t>(b)] - std::sqrt(var)) <=
          1e-10 * std::sqrt(var));
  }
}

TEST_CASE("standardize with identity stats is the identity") {
  const SourceTensor src =
      tensor_from({1.0, 2.0, 3.0, 4.0}, 1, 1, 2, 2);
  std::vector<float> out;
  standardize(src, identity_stats(1), out);
  CHECK(out == std::vector<float>{1.0f, 2.0f, 3.0f, 4.0f});
}

TEST_CASE("standardizing a stream by its own stats centers it") {
  SplitMix64 rng(8);
  std::vector<double> values;
  for (int i = 0; i < 2 * 2 * 8 * 8; ++i)
    values.push_back(100.0 + 50.0 * rng.next_double());
  const SourceTensor src = tensor_from(values, 2, 2, 8, 8);
  BandStatsAccumulator acc;
  acc.add(src);
  const BandStats stats = acc.finalize();

  std::vector<double> out;
  standardize(src, stats, out);
  const size_t plane = 64;
  for (int b = 0; b < 2; ++b) {
    double mean = 0.0;
    for (int t = 0; t < 2; ++t)
      for (size_t i = 0; i < plane; ++i)
        mean += out[(static_cast<size_t>(t) * 2 + static_cast<size_t>(b)) *
                        plane +
                    i];
    mean /= 2.0 * plane;
    CHECK(std::abs(mean) < 1e-6);
  }
}

TEST_CASE("zero-std band stays finite under the epsilon guard") {
  const SourceTensor src = tensor_from(std::vector<double>(8, 3.0), 2, 1, 2, 2);
  BandStats stats;
  stats.mean = {3.0};
  stats.stddev = {0.0};
  stats.epsilon = 1e-6;
  std::vector<float> out;
  standardize(src, stats, out);
  for (const float v : out) {
    CHECK(std::isfinite(v));
    CHECK(v == out[0]);
  }
  CHECK_THROWS_AS(standardize(src, identity_stats(2), out),
                  std::invalid_argument);
}

TEST_CASE("patchify shapes") {
  std::vector<float> img(3 * 224 * 224, 0.0f);
  const Mat<float> rows = patchify(img.data(), 3, 224, 16);
  CHECK(rows.rows == 196);
  CHECK(rows.cols == 768);

  std::vector<float> small(1 * 32 * 32, 0.0f);
  const Mat<float> rows2 = patchify(small.data(), 1, 32, 16);
  CHECK(rows2.rows == 4);
  CHECK(rows2.cols == 256);

  std::vector<float> odd(1 * 30 * 30, 0.0f);
  CHECK_THROWS_WITH_AS(patchify(odd.data(), 1, 30, 16),
                       doctest::Contains("non-divisible"),
                       std::invalid_argument);
}

TEST_CASE("patchify layout is band-major then row-major within the patch") {
  std::vector<float> img(2 * 32 * 32, 0.0f);
  // band 1, pixel (y=18, x=5) -> patch (1, 0), offset (2, 5)
  img[1 * 32 * 32 + 18 * 32 + 5] = 9.0f;
  const Mat<float> rows = patchify(img.data(), 2, 32, 16);
  const int64_t row = 1 * 2 + 0;
  const int64_t col = 1 * 256 + 2 * 16 + 5;
  for (int64_t r = 0; r < rows.rows; ++r)
    for (int64_t c = 0; c < rows.cols; ++c)
      CHECK(rows(r, c) == (r == row && c == col ? 9.0f : 0.0f));
}

TEST_CASE("tokenize_source produces (t, 196, W) for catalog sources") {
  const SynthConfig cfg =
      make_synth_config(21, std::vector<std::string>{"sentinel2"});
  const Region r = synth_region(cfg, "tok");
  const SourceTensor& src = r.sources.at("sentinel2");
  BandStatsAccumulator acc;
  acc.add(src);
  const BandStats stats = acc.finalize();

  const int w = 256;
  const int in_dim = 13 * 256;
  Mat<float> weights(in_dim, w);
  std::vector<float> bias(static_cast<size_t>(w), 0.0f);
  SplitMix64 rng(2);
  for (float& v : weights.v) v = static_cast<float>(rng.next_double() - 0.5);

  const MatView<const float> wv{weights.rows, weights.cols, weights.data()};
  const Mat<float> tokens = tokenize_source<float>(src, wv, bias, stats);
  CHECK(tokens.rows == 10 * 196);
  CHECK(tokens.cols == w);
  for (const float v : tokens.v) CHECK(std::isfinite(v));
}

TEST_CASE("every source yields 196 patches per timestep after resize") {
  SynthConfig cfg;
  cfg.seed = 4;
  for (const char* name :
       {"satellogic", "sentinel1", "neon-rgb", "neon-elev"})
    cfg.profiles.push_back(*find_builtin_profile(name));
  const Region r = synth_region(cfg, "pcount");
  for (const auto& [name, src] : r.sources) {
    BandStatsAccumulator acc;
    acc.add(src);
    const Mat<float> patches =
        source_patches<float>(src, acc.finalize(), 224, 16);
    CHECK(patches.rows == static_cast<int64_t>(src.dims[0]) * 196);
    CHECK(patches.cols == static_cast<int64_t>(src.dims[1]) * 256);
  }
}

TEST_CASE("zero weights and bias produce all-zero tokens") {
  const SourceTensor src =
      tensor_from({1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0,
                   9.0, 10.0, 11.0, 12.0, 13.0, 14.0, 15.0, 16.0},
                  1, 1, 4, 4);
  Mat<float> weights(256, 8);
  std::vector<float> bias(8, 0.0f);
  const MatView<const float> wv{weights.rows, weights.cols, weights.data()};
  const Mat<float> tokens =
      tokenize_source<float>(src, wv, bias, identity_stats(1), 32, 16);
  CHECK(tokens.rows == 4);
  for (const float v : tokens.v) CHECK(v == 0.0f);
}

TEST_CASE("tokenization is linear in the patches with zero bias") {
  SplitMix64 rng(6);
  Mat<float> patches(8, 32);
  for (float& v : patches.v) v = static_cast<float>(rng.next_double() - 0.5);
  Mat<float> weights(32, 16);
  for (float& v : weights.v) v = static_cast<float>(rng.next_double() - 0.5);
  std::vector<float> bias(16, 0.0f);
  const MatView<const float> wv{weights.rows, weights.cols, weights.data()};

  Mat<float> scaled(8, 32);
  for (size_t i = 0; i < patches.v.size(); ++i) scaled.v[i] = 3.0f * patches.v[i];

  const Mat<float> base = embed_patches<float>(patches, wv, bias);
  const Mat<float> tripled = embed_patches<float>(scaled, wv, bias);
  for (size_t i = 0; i < base.v.size(); ++i)
    CHECK(tripled.v[i] == doctest::Approx(3.0f * base.v[i]).epsilon(1e-5));
}

TEST_CASE("hyperspectral source reaches the common grid") {
  const SynthConfig cfg =
      make_synth_config(9, std::vector<std::string>{"neon-hyper"});
  const Region r = synth_region(cfg, "hs");
  const SourceTensor& src = r.sources.at("neon-hyper");
  BandStatsAccumulator acc;
  acc.add(src);
  const Mat<float> patches =
      source_patches<float>(src, acc.finalize(), 224, 16);
  CHECK(patches.rows == 3 * 196);
  CHECK(patches.cols == 369 * 256);
}
