#include "evmae/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fmt/format.h>
#include <numbers>

#include "evmae/dates.hpp"
#include "evmae/rng.hpp"
#include "evmae/shard.hpp"

namespace evmae {

namespace {

SourceProfile profile(const char* name, int bands, double gsd, int hw,
                      Dtype dt) {
  return SourceProfile{name, bands, gsd, hw, hw, dt};
}

const std::vector<SynthProfile>& catalog() {
  static const std::vector<SynthProfile> k = {
      {profile("satellogic", 4, 1.0, 384, Dtype::u8), {1, 5}, false},
      {profile("sentinel1", 2, 10.0, 384, Dtype::u16), {3, 9}, false},
      {profile("sentinel2", 13, 10.0, 384, Dtype::u16), {10, 10}, false},
      {profile("sentinel2scl", 14, 10.0, 384, Dtype::u16), {10, 10}, true},
      {profile("neon-rgb", 3, 0.1, 640, Dtype::u8), {3, 3}, false},
      {profile("neon-hyper", 369, 1.0, 64, Dtype::u16), {3, 3}, false},
      {profile("neon-elev", 1, 1.0, 64, Dtype::f32), {3, 3}, false},
  };
  return k;
}

double dtype_range(Dtype d) {
  switch (d) {
    case Dtype::u8: return 255.0;
    case Dtype::u16: return 10000.0;  // reflectance-style scaling
    case Dtype::f32: return 100.0;
  }
  return 1.0;
}

struct Wave {
  double wx, wy, phase, amp;
};

struct Blob {
  double cx, cy, r2, amp;
};

struct FieldParams {
  SpatialPattern pattern;
  std::vector<Wave> waves;
  std::vector<Blob> blobs;
  double amp_total = 0.0;
  double drift_x = 0.0, drift_y = 0.0;  // pixels per timestep
  double noise_amp = 0.02;
  std::vector<double> band_phase;  // per-band offset
  std::vector<double> band_gain;
};

FieldParams make_field(SplitMix64& rng, SpatialPattern pattern, int bands,
                       int h, int w) {
  FieldParams f;
  f.pattern = pattern;
  const double two_pi = 2.0 * std::numbers::pi;
  if (pattern == SpatialPattern::smooth_field ||
      pattern == SpatialPattern::checker) {
    for (int j = 0; j < 3; ++j) {
      const double freq = 0.5 + 2.0 * rng.next_double();  // cycles per image
      const double theta = two_pi * rng.next_double();
      Wave wv;
      wv.wx = two_pi * freq * std::cos(theta) / w;
      wv.wy = two_pi * freq * std::sin(theta) / h;
      wv.phase = two_pi * rng.next_double();
      wv.amp = 0.5 + 0.5 * rng.next_double();
      f.amp_total += wv.amp;
      f.waves.push_back(wv);
    }
  } else {
    const int nb = 4 + static_cast<int>(rng.next_below(5));
    for (int j = 0; j < nb; ++j) {
      Blob b;
      b.cx = rng.next_double() * w;
      b.cy = rng.next_double() * h;
      const double r = (0.08 + 0.17 * rng.next_double()) * w;
      b.r2 = r * r;
      b.amp = 0.5 + 0.5 * rng.next_double();
      f.amp_total += b.amp;
      f.blobs.push_back(b);
    }
  }
  f.drift_x = (rng.next_double() - 0.5) * 0.04 * w;
  f.drift_y = (rng.next_double() - 0.5) * 0.04 * h;
  for (int c = 0; c < bands; ++c) {
    f.band_phase.push_back(0.6 * rng.next_double());
    f.band_gain.push_back(0.8 + 0.2 * rng.next_double());
  }
  return f;
}

// Base field value in [0, 1] for one row, written incrementally.
void fill_row01(const FieldParams& f, int c, int t, int y, int w,
                double* row01) {
  std::fill(row01, row01 + w, 0.0);
  const double ox = t * f.drift_x;
  const double oy = t * f.drift_y;
  if (f.pattern == SpatialPattern::smooth_field) {
    for (const Wave& wv : f.waves) {
      const double theta0 = wv.wx * ox + wv.wy * (y + oy) + wv.phase +
                            f.band_phase[static_cast<size_t>(c)];
      double s = std::sin(theta0), co = std::cos(theta0);
      const double sd = std::sin(wv.wx), cd = std::cos(wv.wx);
      for (int x = 0; x < w; ++x) {
        row01[x] += wv.amp * s;
        const double ns = s * cd + co * sd;
        co = co * cd - s * sd;
        s = ns;
      }
    }
    for (int x = 0; x < w; ++x)
      row01[x] = 0.5 + row01[x] / (2.0 * f.amp_total);
  } else if (f.pattern == SpatialPattern::blobs) {
    for (const Blob& b : f.blobs) {
      const double dy = y + oy - b.cy;
      for (int x = 0; x < w; ++x) {
        const double dx = x + ox - b.cx;
        row01[x] += b.amp / (1.0 + (dx * dx + dy * dy) / b.r2);
      }
    }
    for (int x = 0; x < w; ++x) row01[x] /= f.amp_total;
  } else {  // checker
    const int tile = std::max(1, w / 8);
    const int iy = static_cast<int>(std::floor((y + oy) / tile));
    for (int x = 0; x < w; ++x) {
      const int ix = static_cast<int>(std::floor((x + ox) / tile));
      row01[x] = ((ix + iy) & 1) ? 1.0 : 0.0;
    }
  }
}

struct SclParams {
  std::vector<Blob> centers;  // Voronoi seeds; class = index % kSclClasses
};

SclParams make_scl(SplitMix64& rng, int h, int w) {
  SclParams s;
  for (int j = 0; j < 25; ++j)
    s.centers.push_back(
        {rng.next_double() * w, rng.next_double() * h, 0.0, 0.0});
  return s;
}

int scl_label(const SclParams& s, int y, int x) {
  double best = 1e30;
  int arg = 0;
  for (size_t j = 0; j < s.centers.size(); ++j) {
    const double dx = x - s.centers[j].cx;
    const double dy = y - s.centers[j].cy;
    const double d = dx * dx + dy * dy;
    if (d < best) {
      best = d;
      arg = static_cast<int>(j);
    }
  }
  return arg % kSclClasses;
}

void store_value(SourceTensor& src, size_t flat, double v) {
  switch (src.profile.dtype) {
    case Dtype::u8:
      src.data[flat] = static_cast<uint8_t>(std::clamp(v, 0.0, 255.0));
      break;
    case Dtype::u16: {
      const uint16_t q =
          static_cast<uint16_t>(std::clamp(v, 0.0, 65535.0));
      std::memcpy(src.data.data() + 2 * flat, &q, 2);
      break;
    }
    case Dtype::f32: {
      const float q = static_cast<float>(v);
      std::memcpy(src.data.data() + 4 * flat, &q, 4);
      break;
    }
  }
}

std::vector<Timestamp> make_timestamps(SplitMix64& rng,
                                       const SynthProfile& sp, int count) {
  std::vector<Timestamp> out;
  const std::string& name = sp.profile.name;

  if (name.starts_with("neon")) {
    // Yearly campaigns; only the year is recorded.
    const int y0 = 2017 + static_cast<int>(rng.next_below(
                              static_cast<uint64_t>(6 - (count - 1))));
    for (int i = 0; i < count; ++i) out.push_back({y0 + i, 0, 0, 0});
    return out;
  }

  const bool satellogic = name == "satellogic";
  const auto hour_field = [&]() -> int {
    // Morning overpasses; satellogic captures lack a time of day.
    return satellogic ? 0 : 10 + static_cast<int>(rng.next_below(3));
  };

  if (count >= 10) {
    // Six densely sampled revisits plus four at three-month intervals.
    int64_t d = day_number(2017, 1, 1) +
                static_cast<int64_t>(rng.next_below(1642));  // up to 2021-06-30
    std::vector<int64_t> days;
    for (int i = 0; i < 6; ++i) {
      days.push_back(d);
      d += 3 + static_cast<int64_t>(rng.next_below(5));
    }
    const int64_t dense_end = days.back();
    for (int k = 1; k <= count - 6; ++k) {
      const int64_t jitter = static_cast<int64_t>(rng.next_below(21)) - 10;
      days.push_back(dense_end + 91 * k + jitter);
    }
    std::sort(days.begin(), days.end());
    for (const int64_t dn : days)
      out.push_back(date_from_day_number(dn, hour_field()));
    return out;
  }

  // Sorted random dates inside a one-year window (satellogic: 2022 H2).
  const int64_t lo =
      satellogic ? day_number(2022, 7, 1)
                 : day_number(2017, 1, 1) +
                       static_cast<int64_t>(rng.next_below(1825));
  const int64_t span = satellogic ? 180 : 365;
  std::vector<int64_t> days;
  for (int i = 0; i < count; ++i)
    days.push_back(lo + static_cast<int64_t>(rng.next_below(
                            static_cast<uint64_t>(span))));
  std::sort(days.begin(), days.end());
  for (const int64_t dn : days)
    out.push_back(date_from_day_number(dn, hour_field()));
  return out;
}

}  // namespace

SpatialPattern spatial_pattern_from_name(const std::string& name) {
  if (name == "smooth" || name == "smooth-field") return SpatialPattern::smooth_field;
  if (name == "blobs") return SpatialPattern::blobs;
  if (name == "checker") return SpatialPattern::checker;
  throw data_error(fmt::format("unknown spatial pattern '{}'", name));
}

const char* spatial_pattern_name(SpatialPattern p) {
  switch (p) {
    case SpatialPattern::smooth_field: return "smooth-field";
    case SpatialPattern::blobs: return "blobs";
    case SpatialPattern::checker: return "checker";
  }
  return "?";
}

std::span<const SynthProfile> builtin_profiles() { return catalog(); }

const SynthProfile* find_builtin_profile(const std::string& name) {
  for (const SynthProfile& sp : catalog())
    if (sp.profile.name == name) return &sp;
  return nullptr;
}

SynthConfig make_synth_config(uint64_t seed,
                              std::span<const std::string> profile_names,
                              SpatialPattern pattern) {
  SynthConfig cfg;
  cfg.seed = seed;
  cfg.pattern = pattern;
  for (const std::string& name : profile_names) {
    const SynthProfile* sp = find_builtin_profile(name);
    if (sp == nullptr)
      throw data_error(fmt::format("unknown profile name '{}'", name));
    cfg.profiles.push_back(*sp);
  }
  return cfg;
}

Region synth_region(const SynthConfig& config, const std::string& region_id) {
  if (config.profiles.empty())
    throw std::invalid_argument("synth config has no profiles");

  Region r;
  r.region_id = region_id;

  SplitMix64 region_rng(key_mix({config.seed, fnv1a64(region_id)}));
  const double lon0 = -180.0 + 359.0 * region_rng.next_double();
  const double lat0 = -60.0 + 119.0 * region_rng.next_double();
  const double size = 0.03 + 0.01 * region_rng.next_double();
  r.bounds = {lon0, lat0, lon0 + size, lat0 + size};

  for (const SynthProfile& sp : config.profiles) {
    if (sp.revisits.lo < 1 || sp.revisits.lo > sp.revisits.hi)
      throw std::invalid_argument(
          fmt::format("bad revisit range for '{}'", sp.profile.name));

    SplitMix64 src_rng(
        key_mix({config.seed, fnv1a64(region_id), fnv1a64(sp.profile.name)}));
    const int count =
        sp.revisits.lo +
        static_cast<int>(src_rng.next_below(
            static_cast<uint64_t>(sp.revisits.hi - sp.revisits.lo + 1)));

    SourceTensor src;
    src.profile = sp.profile;
    src.dims = {static_cast<uint32_t>(count),
                static_cast<uint32_t>(sp.profile.bands),
                static_cast<uint32_t>(sp.profile.height),
                static_cast<uint32_t>(sp.profile.width)};
    src.data.resize(src.byte_size());
    src.timestamps = make_timestamps(src_rng, sp, count);

    const int h = sp.profile.height, w = sp.profile.width;
    const int bands = sp.profile.bands;
    const FieldParams field =
        make_field(src_rng, config.pattern, bands, h, w);
    const SclParams scl =
        sp.scl_band ? make_scl(src_rng, h, w) : SclParams{};
    const double range = dtype_range(sp.profile.dtype);

    std::vector<double> row01(static_cast<size_t>(w));
    const uint64_t noise_key =
        key_mix({config.seed, fnv1a64(region_id), fnv1a64(sp.profile.name),
                 fnv1a64("noise")});

    for (int t = 0; t < count; ++t) {
      // Cloud discs on the scene-class band, varying per revisit.
      std::vector<Blob> clouds;
      if (sp.scl_band) {
        SplitMix64 cr(key_mix({noise_key, static_cast<uint64_t>(t),
                               fnv1a64("clouds")}));
        const int nd = static_cast<int>(cr.next_below(4));
        for (int j = 0; j < nd; ++j) {
          const double rad = (0.05 + 0.15 * cr.next_double()) * w;
          clouds.push_back({cr.next_double() * w, cr.next_double() * h,
                            rad * rad, cr.next_below(2) ? 9.0 : 8.0});
        }
      }
      for (int c = 0; c < bands; ++c) {
        const bool is_scl = sp.scl_band && c == bands - 1;
        for (int y = 0; y < h; ++y) {
          const size_t base =
              ((static_cast<size_t>(t) * bands + static_cast<size_t>(c)) * h +
               static_cast<size_t>(y)) *
              static_cast<size_t>(w);
          if (is_scl) {
            for (int x = 0; x < w; ++x) {
              int label = scl_label(scl, y, x);
              for (const Blob& cl : clouds) {
                const double dx = x - cl.cx, dy = y - cl.cy;
                if (dx * dx + dy * dy < cl.r2)
                  label = static_cast<int>(cl.amp);
              }
              store_value(src, base + static_cast<size_t>(x), label);
            }
            continue;
          }
          fill_row01(field, c, t, y, w, row01.data());
          const double gain = field.band_gain[static_cast<size_t>(c)];
          SplitMix64 noise(key_mix(
              {noise_key, static_cast<uint64_t>(t), static_cast<uint64_t>(c),
               static_cast<uint64_t>(y)}));
          for (int x = 0; x < w; ++x) {
            const double v01 = row01[x] * gain + (1.0 - gain) * 0.5;
            const double n = (noise.next_double() - 0.5) * 2.0 * field.noise_amp;
            store_value(src, base + static_cast<size_t>(x),
                        (v01 + n) * range);
          }
        }
      }
    }
    r.sources.emplace(sp.profile.name, std::move(src));
  }
  return r;
}

std::vector<std::filesystem::path> synth_dataset(
    const SynthConfig& config, int n_regions,
    const std::filesystem::path& out_dir, int shard_size) {
  if (n_regions < 1) throw std::invalid_argument("n_regions must be >= 1");
  if (shard_size < 1) throw std::invalid_argument("shard_size must be >= 1");

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw io_error(fmt::format("cannot create '{}'", out_dir.string()));

  std::vector<std::filesystem::path> paths;
  std::vector<Region> batch;
  int shard_index = 0;
  for (int i = 0; i < n_regions; ++i) {
    batch.push_back(synth_region(config, fmt::format("r{:06d}", i)));
    if (static_cast<int>(batch.size()) == shard_size || i == n_regions - 1) {
      const auto path = out_dir / fmt::format("shard-{:04d}.evsh", shard_index++);
      write_shard(batch, path);
      paths.push_back(path);
      batch.clear();
    }
  }
  return paths;
}

}  // namespace evmae
