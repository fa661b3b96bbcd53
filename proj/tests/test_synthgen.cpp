#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "evmae/dates.hpp"
#include "evmae/shard.hpp"
#include "evmae/synthgen.hpp"

using namespace evmae;
namespace fs = std::filesystem;

namespace {

SynthConfig config_for(const std::string& name, uint64_t seed = 11) {
  return make_synth_config(seed, std::vector<std::string>{name});
}

std::vector<uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("sentinel2 regions have the catalog shape (10, 13, 384, 384)") {
  const Region r = synth_region(config_for("sentinel2"), "s2");
  const auto& src = r.sources.at("sentinel2");
  CHECK(src.dims == std::array<uint32_t, 4>{10, 13, 384, 384});
  CHECK(src.profile.dtype == Dtype::u16);
  CHECK(validate_region(r).empty());
}

TEST_CASE("neon-hyper regions have shape (3, 369, 64, 64)") {
  const Region r = synth_region(config_for("neon-hyper"), "nh");
  const auto& src = r.sources.at("neon-hyper");
  CHECK(src.dims == std::array<uint32_t, 4>{3, 369, 64, 64});
}

TEST_CASE("same seed and region id reproduce the region exactly") {
  const SynthConfig cfg = config_for("neon-elev", 99);
  const Region a = synth_region(cfg, "same");
  const Region b = synth_region(cfg, "same");
  CHECK(a.bounds == b.bounds);
  CHECK(a.sources.at("neon-elev").data == b.sources.at("neon-elev").data);
  CHECK(a.sources.at("neon-elev").timestamps ==
        b.sources.at("neon-elev").timestamps);

  const Region c = synth_region(cfg, "other");
  CHECK(c.sources.at("neon-elev").data != a.sources.at("neon-elev").data);
}

TEST_CASE("every builtin profile yields a valid region with its dims") {
  SynthConfig cfg;
  cfg.seed = 5;
  for (const SynthProfile& sp : builtin_profiles()) cfg.profiles.push_back(sp);
  const Region r = synth_region(cfg, "all");
  CHECK(validate_region(r).empty());
  for (const SynthProfile& sp : builtin_profiles()) {
    const auto& src = r.sources.at(sp.profile.name);
    CHECK(src.dims[1] == static_cast<uint32_t>(sp.profile.bands));
    CHECK(src.dims[2] == static_cast<uint32_t>(sp.profile.height));
    CHECK(src.dims[3] == static_cast<uint32_t>(sp.profile.width));
    CHECK(static_cast<int>(src.dims[0]) >= sp.revisits.lo);
    CHECK(static_cast<int>(src.dims[0]) <= sp.revisits.hi);
  }
}

TEST_CASE("timestamps are nondecreasing and within 2017-2022") {
  SynthConfig cfg;
  cfg.seed = 17;
  for (const SynthProfile& sp : builtin_profiles()) cfg.profiles.push_back(sp);
  for (int i = 0; i < 8; ++i) {
    const Region r = synth_region(cfg, "ts" + std::to_string(i));
    for (const auto& [name, src] : r.sources) {
      for (size_t k = 0; k < src.timestamps.size(); ++k) {
        const Timestamp& ts = src.timestamps[k];
        CHECK(ts.year >= 2017);
        CHECK(ts.year <= 2022);
        if (k > 0)
          CHECK(timestamp_ordinal(src.timestamps[k - 1]) <=
                timestamp_ordinal(ts));
      }
    }
  }
}

TEST_CASE("source-specific timestamp conventions") {
  SynthConfig cfg;
  cfg.seed = 23;
  for (const char* name : {"satellogic", "sentinel2", "neon-rgb"})
    cfg.profiles.push_back(*find_builtin_profile(name));
  const Region r = synth_region(cfg, "conv");
  for (const Timestamp& ts : r.sources.at("satellogic").timestamps) {
    CHECK(ts.hour == 0);  // no time of day
    CHECK(ts.year == 2022);
    CHECK(ts.month >= 7);
  }
  for (const Timestamp& ts : r.sources.at("neon-rgb").timestamps) {
    CHECK(ts.month == 0);  // year only
    CHECK(ts.day == 0);
    CHECK(ts.hour == 0);
  }
  for (const Timestamp& ts : r.sources.at("sentinel2").timestamps) {
    CHECK(ts.hour >= 1);
    CHECK(ts.hour <= 23);
  }
}

TEST_CASE("scene-class band holds labels below the class count") {
  const Region r = synth_region(config_for("sentinel2scl"), "scl");
  const auto& src = r.sources.at("sentinel2scl");
  const size_t plane = static_cast<size_t>(src.dims[2]) * src.dims[3];
  const size_t band = static_cast<size_t>(src.dims[1]) - 1;
  bool all_in_range = true;
  for (size_t i = 0; i < plane; ++i) {
    const double v = src.value_at(band * plane + i);
    all_in_range = all_in_range && v >= 0 && v < kSclClasses;
  }
  CHECK(all_in_range);
}

TEST_CASE("unknown profile name is rejected") {
  CHECK_THROWS_AS(
      make_synth_config(1, std::vector<std::string>{"landsat9"}),
      data_error);
}

TEST_CASE("synth_dataset shards with ceiling arithmetic") {
  SynthConfig cfg;
  cfg.seed = 31;
  cfg.profiles = {
      {SourceProfile{"tiny", 1, 1.0, 8, 8, Dtype::u8}, {2, 2}, false}};

  const auto dir = fs::temp_directory_path() / "evmae_synth_ds";
  fs::remove_all(dir);
  const auto paths = synth_dataset(cfg, 10, dir, 4);
  REQUIRE(paths.size() == 3);
  CHECK(read_shard(paths[0]).size() == 4);
  CHECK(read_shard(paths[1]).size() == 4);
  CHECK(read_shard(paths[2]).size() == 2);

  const auto single = synth_dataset(cfg, 1, dir / "one", 4);
  CHECK(single.size() == 1);
  CHECK(read_shard(single[0]).size() == 1);
}

TEST_CASE("synth_dataset output is byte-identical across runs") {
  SynthConfig cfg;
  cfg.seed = 77;
  cfg.profiles = {
      {SourceProfile{"tiny", 2, 1.0, 6, 6, Dtype::u16}, {1, 3}, false}};
  const auto base = fs::temp_directory_path() / "evmae_synth_det";
  fs::remove_all(base);
  const auto a = synth_dataset(cfg, 5, base / "a", 2);
  const auto b = synth_dataset(cfg, 5, base / "b", 2);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i)
    CHECK(read_bytes(a[i]) == read_bytes(b[i]));
}

TEST_CASE("bad synth_dataset arguments are rejected") {
  SynthConfig cfg;
  cfg.profiles = {
      {SourceProfile{"tiny", 1, 1.0, 4, 4, Dtype::u8}, {1, 1}, false}};
  const auto dir = fs::temp_directory_path() / "evmae_synth_bad";
  CHECK_THROWS_AS(synth_dataset(cfg, 0, dir, 1), std::invalid_argument);
  CHECK_THROWS_AS(synth_dataset(cfg, 1, dir, 0), std::invalid_argument);
}

TEST_CASE("pixel values stay within the dtype range") {
  SynthConfig cfg;
  cfg.seed = 13;
  cfg.pattern = SpatialPattern::blobs;
  cfg.profiles = {
      {SourceProfile{"b", 2, 1.0, 16, 16, Dtype::u8}, {2, 2}, false}};
  const Region r = synth_region(cfg, "range");
  const auto& src = r.sources.at("b");
  for (size_t i = 0; i < src.value_count(); ++i) {
    CHECK(src.value_at(i) >= 0.0);
    CHECK(src.value_at(i) <= 255.0);
  }
}
