#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "evmae/region.hpp"

namespace evmae {

enum class SpatialPattern { smooth_field, blobs, checker };

SpatialPattern spatial_pattern_from_name(const std::string& name);
const char* spatial_pattern_name(SpatialPattern p);

struct RevisitRange {
  int lo = 1;
  int hi = 1;
};

struct SynthProfile {
  SourceProfile profile;
  RevisitRange revisits;
  bool scl_band = false;  // last band carries scene-class labels 0..10
};

struct SynthConfig {
  uint64_t seed = 0;
  std::vector<SynthProfile> profiles;
  SpatialPattern pattern = SpatialPattern::smooth_field;
};

inline constexpr int kSclClasses = 11;
// Synthetic scene-class ids treated as cloud cover (thin/medium/high).
inline constexpr int kSclCloudLow = 8;

// Sensor catalog: satellogic, sentinel1, sentinel2, neon-rgb, neon-hyper,
// neon-elev, plus the sentinel2scl test profile (sentinel2 with a scene
// classification band appended).
std::span<const SynthProfile> builtin_profiles();
const SynthProfile* find_builtin_profile(const std::string& name);

// Builds a config from catalog names; throws data_error on unknown names.
SynthConfig make_synth_config(uint64_t seed,
                              std::span<const std::string> profile_names,
                              SpatialPattern pattern = SpatialPattern::smooth_field);

// Deterministic: identical (config.seed, region_id) gives identical regions.
// Each timestep is a drifted, noise-perturbed view of a per-region base
// field, so temporal context genuinely helps reconstruction.
Region synth_region(const SynthConfig& config, const std::string& region_id);

// Writes ceil(n_regions / shard_size) shards into out_dir; returns paths.
std::vector<std::filesystem::path> synth_dataset(
    const SynthConfig& config, int n_regions,
    const std::filesystem::path& out_dir, int shard_size);

}  // namespace evmae
