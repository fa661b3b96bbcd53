#include "evmae/capi.h"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fmt/format.h>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "evmae/curation.hpp"
#include "evmae/dates.hpp"
#include "evmae/gradcheck_suite.hpp"
#include "evmae/masking.hpp"
#include "evmae/model.hpp"
#include "evmae/region.hpp"
#include "evmae/rng.hpp"
#include "evmae/shard.hpp"
#include "evmae/synthgen.hpp"
#include "evmae/tokenizer.hpp"
#include "evmae/trainer.hpp"
#include "json.hpp"

struct ev_dataset {
  std::vector<evmae::Region> regions;
};

struct ev_model {
  evmae::LoadedModel loaded;
};

namespace {

thread_local std::string g_last_error;

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

template <typename Fn>
ev_status guarded(Fn&& fn) {
  try {
    fn();
    return EV_OK;
  } catch (const std::invalid_argument& e) {
    g_last_error = e.what();
    return EV_ERR_INVALID_ARGUMENT;
  } catch (const evmae::io_error& e) {
    g_last_error = e.what();
    return EV_ERR_IO;
  } catch (const evmae::data_error& e) {
    g_last_error = e.what();
    return EV_ERR_DATA;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return EV_ERR_INTERNAL;
  }
}

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::stringstream ss(text);
  while (std::getline(ss, item, sep))
    if (!item.empty()) out.push_back(item);
  return out;
}

// ---- curate helpers -------------------------------------------------------

bool is_cloud_class(int label) { return label >= evmae::kSclCloudLow; }

nlohmann::ordered_json curate_region(const evmae::Region& region, int window,
                                     double cloud_max, int top_k) {
  using namespace evmae;
  const auto it = region.sources.find("sentinel2scl");
  if (it == region.sources.end())
    throw data_error(fmt::format(
        "region '{}' has no 'sentinel2scl' source; synthesize that profile "
        "to exercise curation",
        region.region_id));
  const SourceTensor& src = it->second;
  const int h = static_cast<int>(src.dims[2]);
  const int w = static_cast<int>(src.dims[3]);
  const int scl_band = static_cast<int>(src.dims[1]) - 1;
  const size_t plane = static_cast<size_t>(h) * static_cast<size_t>(w);
  const size_t base = static_cast<size_t>(scl_band) * plane;  // timestep 0

  std::vector<Candidate> candidates;
  for (const auto& [row, col] : patch_grid(h, w, window)) {
    std::vector<int32_t> labels;
    std::vector<uint8_t> clouds;
    labels.reserve(static_cast<size_t>(window) * window);
    for (int y = row; y < row + window; ++y) {
      for (int x = col; x < col + window; ++x) {
        const int label = static_cast<int>(
            src.value_at(base + static_cast<size_t>(y) * w + x));
        labels.push_back(label);
        clouds.push_back(is_cloud_class(label) ? 1 : 0);
      }
    }
    candidates.push_back(Candidate{row, col, cloud_fraction(clouds),
                                   scl_entropy(labels, kSclClasses)});
  }
  const std::vector<Candidate> top =
      rank_candidates(candidates, top_k, cloud_max);

  nlohmann::ordered_json out;
  out["region_id"] = region.region_id;
  out["windows"] = candidates.size();
  nlohmann::ordered_json ranked(nlohmann::ordered_json::value_t::array);
  for (const Candidate& c : top)
    ranked.push_back({{"row", c.row},
                      {"col", c.col},
                      {"cloud_fraction", c.cloud_fraction},
                      {"scl_entropy", c.scl_entropy}});
  out["top"] = std::move(ranked);

  const DateSequence seq = select_temporal_sequence(src.timestamps);
  nlohmann::ordered_json dates(nlohmann::ordered_json::value_t::array);
  for (const Timestamp& ts : seq.dates)
    dates.push_back({ts.year, ts.month, ts.day, ts.hour});
  out["temporal"] = {{"dense_count", seq.dense_count},
                     {"seasonal_count", seq.seasonal_count},
                     {"dates", std::move(dates)}};

  const auto s1 = region.sources.find("sentinel1");
  if (s1 != region.sources.end()) {
    const auto paired = pair_sar_dates(seq.dates, s1->second.timestamps);
    nlohmann::ordered_json pj(nlohmann::ordered_json::value_t::array);
    for (const Timestamp& ts : paired)
      pj.push_back({ts.year, ts.month, ts.day, ts.hour});
    out["sar_pairing"] = std::move(pj);
  }
  return out;
}

// ---- reconstruction helpers -----------------------------------------------

void write_ppm(const std::filesystem::path& path,
               const std::vector<uint8_t>& rgb, int h, int w) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw evmae::io_error(
        fmt::format("cannot open '{}' for write", path.string()));
  out << "P6\n" << w << " " << h << "\n255\n";
  out.write(reinterpret_cast<const char*>(rgb.data()),
            static_cast<std::streamsize>(rgb.size()));
}

// Maps up to three bands of a planar image onto RGB bytes with a shared
// min/max scaling.
std::vector<uint8_t> planar_to_rgb(const std::vector<float>& img, int bands,
                                   int hw, float lo, float hi) {
  std::vector<uint8_t> rgb(static_cast<size_t>(hw) * hw * 3);
  const float scale = hi > lo ? 255.0f / (hi - lo) : 0.0f;
  for (int y = 0; y < hw; ++y) {
    for (int x = 0; x < hw; ++x) {
      for (int c = 0; c < 3; ++c) {
        const int band = bands >= 3 ? c : 0;
        const float v =
            img[static_cast<size_t>(band) * hw * hw + static_cast<size_t>(y) * hw + x];
        const float scaled = (v - lo) * scale;
        rgb[(static_cast<size_t>(y) * hw + x) * 3 + static_cast<size_t>(c)] =
            static_cast<uint8_t>(std::clamp(scaled, 0.0f, 255.0f));
      }
    }
  }
  return rgb;
}

}  // namespace

extern "C" {

const char* ev_last_error(void) { return g_last_error.c_str(); }

const char* ev_version(void) { return "evmae 1.0.0"; }

void ev_string_free(char* s) { std::free(s); }

ev_status ev_dataset_synth(const char* profiles_csv, const char* pattern,
                           int n_regions, uint64_t seed, ev_dataset** out) {
  return guarded([&] {
    if (profiles_csv == nullptr || out == nullptr)
      throw std::invalid_argument("null argument");
    if (n_regions < 1) throw std::invalid_argument("n_regions must be >= 1");
    const auto names = split(profiles_csv, ',');
    if (names.empty()) throw std::invalid_argument("no profiles given");
    const evmae::SpatialPattern pat =
        pattern != nullptr && pattern[0] != '\0'
            ? evmae::spatial_pattern_from_name(pattern)
            : evmae::SpatialPattern::smooth_field;
    const evmae::SynthConfig cfg = evmae::make_synth_config(seed, names, pat);
    auto d = std::make_unique<ev_dataset>();
    for (int i = 0; i < n_regions; ++i)
      d->regions.push_back(
          evmae::synth_region(cfg, fmt::format("r{:06d}", i)));
    *out = d.release();
  });
}

ev_status ev_dataset_open(const char* const* shard_paths, int n_paths,
                          ev_dataset** out) {
  return guarded([&] {
    if (shard_paths == nullptr || out == nullptr || n_paths < 1)
      throw std::invalid_argument("no shard paths");
    auto d = std::make_unique<ev_dataset>();
    for (int i = 0; i < n_paths; ++i) {
      auto regions = evmae::read_shard(shard_paths[i]);
      for (auto& r : regions) d->regions.push_back(std::move(r));
    }
    *out = d.release();
  });
}

ev_status ev_dataset_write_shards(const ev_dataset* d, const char* out_dir,
                                  int shard_size, int* n_shards_out) {
  return guarded([&] {
    if (d == nullptr || out_dir == nullptr)
      throw std::invalid_argument("null argument");
    if (shard_size < 1) throw std::invalid_argument("shard_size must be >= 1");
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec)
      throw evmae::io_error(fmt::format("cannot create '{}'", out_dir));
    int shard_index = 0;
    std::vector<evmae::Region> batch;
    for (size_t i = 0; i < d->regions.size(); ++i) {
      batch.push_back(d->regions[i]);
      if (static_cast<int>(batch.size()) == shard_size ||
          i + 1 == d->regions.size()) {
        evmae::write_shard(batch,
                           std::filesystem::path(out_dir) /
                               fmt::format("shard-{:04d}.evsh", shard_index));
        ++shard_index;
        batch.clear();
      }
    }
    if (n_shards_out) *n_shards_out = shard_index;
  });
}

int64_t ev_dataset_region_count(const ev_dataset* d) {
  return d == nullptr ? 0 : static_cast<int64_t>(d->regions.size());
}

ev_status ev_dataset_stats_json(const ev_dataset* d, char** json_out) {
  return guarded([&] {
    if (d == nullptr || json_out == nullptr)
      throw std::invalid_argument("null argument");
    nlohmann::ordered_json out;
    out["regions"] = d->regions.size();
    nlohmann::ordered_json sources(nlohmann::ordered_json::value_t::object);

    std::map<std::string, evmae::BandStatsAccumulator> acc;
    std::map<std::string, nlohmann::ordered_json> meta;
    for (const evmae::Region& r : d->regions) {
      for (const auto& [name, src] : r.sources) {
        acc[name].add(src);
        auto& m = meta[name];
        m["count"] = m.value("count", 0) + 1;
        m["bands"] = src.dims[1];
        m["height"] = src.dims[2];
        m["width"] = src.dims[3];
        m["dtype"] = evmae::dtype_name(src.profile.dtype);
        const int t = static_cast<int>(src.dims[0]);
        m["revisits_min"] = std::min(m.value("revisits_min", t), t);
        m["revisits_max"] = std::max(m.value("revisits_max", t), t);
      }
    }
    for (auto& [name, m] : meta) {
      const evmae::BandStats stats = acc[name].finalize();
      m["band_mean"] = stats.mean;
      m["band_std"] = stats.stddev;
      sources[name] = std::move(m);
    }
    out["sources"] = std::move(sources);
    *json_out = dup_string(out.dump());
  });
}

ev_status ev_dataset_curate_json(const ev_dataset* d, int window,
                                 double cloud_max, int top_k,
                                 char** json_out) {
  return guarded([&] {
    if (d == nullptr || json_out == nullptr)
      throw std::invalid_argument("null argument");
    if (window < 1) throw std::invalid_argument("window must be >= 1");
    if (top_k < 1) throw std::invalid_argument("top_k must be >= 1");
    nlohmann::ordered_json out(nlohmann::ordered_json::value_t::array);
    for (const evmae::Region& r : d->regions)
      out.push_back(curate_region(r, window, cloud_max, top_k));
    *json_out = dup_string(out.dump());
  });
}

void ev_dataset_free(ev_dataset* d) { delete d; }

ev_status ev_mask_demo_json(const char* scheme, double ratio,
                            double tube_ratio, double rand_ratio, int t, int s,
                            int p, uint64_t seed, char** json_out) {
  return guarded([&] {
    if (scheme == nullptr || json_out == nullptr)
      throw std::invalid_argument("null argument");
    evmae::MaskSpec spec;
    spec.scheme = evmae::mask_scheme_from_name(scheme);
    spec.ratio = ratio;
    spec.tube_ratio = tube_ratio;
    spec.rand_ratio = rand_ratio;
    const evmae::Mask mask = evmae::make_mask(spec, t, s, p, seed);

    int64_t per_slice_min = p + 1, per_slice_max = -1;
    bool uniform = true;
    int64_t first = -1;
    for (int64_t slice = 0; slice < static_cast<int64_t>(t) * s; ++slice) {
      int64_t count = 0;
      for (int pi = 0; pi < p; ++pi)
        count += mask.lattice[static_cast<size_t>(slice * p + pi)];
      per_slice_min = std::min(per_slice_min, count);
      per_slice_max = std::max(per_slice_max, count);
      if (first < 0) first = count;
      uniform = uniform && count == first;
    }

    nlohmann::ordered_json out;
    out["scheme"] = scheme;
    out["t"] = t;
    out["s"] = s;
    out["p"] = p;
    out["seed"] = seed;
    out["masked_count"] = mask.masked_count;
    out["visible_count"] = mask.size() - mask.masked_count;
    out["per_slice"] = uniform ? first : -1;
    out["per_slice_min"] = per_slice_min;
    out["per_slice_max"] = per_slice_max;

    // ASCII view of the first slice ('#' masked, '.' visible).
    int side = static_cast<int>(std::lround(std::sqrt(double(p))));
    if (side * side != p) side = 0;
    nlohmann::ordered_json grid(nlohmann::ordered_json::value_t::array);
    const int row_len = side > 0 ? side : std::min(p, 64);
    std::string row;
    for (int pi = 0; pi < p; ++pi) {
      row += mask.lattice[static_cast<size_t>(pi)] ? '#' : '.';
      if (static_cast<int>(row.size()) == row_len) {
        grid.push_back(row);
        row.clear();
      }
    }
    if (!row.empty()) grid.push_back(row);
    out["grid"] = std::move(grid);
    *json_out = dup_string(out.dump());
  });
}

ev_status ev_pretrain(const char* config_json, ev_dataset* d,
                      const char* out_dir, char** summary_json_out) {
  return guarded([&] {
    if (config_json == nullptr || d == nullptr || out_dir == nullptr)
      throw std::invalid_argument("null argument");
    if (d->regions.empty()) throw evmae::data_error("dataset is empty");

    nlohmann::json j;
    try {
      j = nlohmann::json::parse(config_json);
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument(fmt::format("bad config JSON: {}", e.what()));
    }

    evmae::TrainConfig cfg;
    if (j.contains("model")) {
      const auto& m = j["model"];
      cfg.model.width = m.value("width", cfg.model.width);
      cfg.model.encoder_depth = m.value("encoder_depth", cfg.model.encoder_depth);
      cfg.model.decoder_width = m.value("decoder_width", cfg.model.decoder_width);
      cfg.model.decoder_depth = m.value("decoder_depth", cfg.model.decoder_depth);
      cfg.model.heads = m.value("heads", cfg.model.heads);
      cfg.model.mlp_ratio = m.value("mlp_ratio", cfg.model.mlp_ratio);
      cfg.model.patch = m.value("patch", cfg.model.patch);
      cfg.model.image_size = m.value("image_size", cfg.model.image_size);
      cfg.model.norm_pix = m.value("norm_pix", cfg.model.norm_pix);
    }
    cfg.mask.scheme =
        evmae::mask_scheme_from_name(j.value("mask", std::string("tube")));
    cfg.mask.ratio = j.value("ratio", 0.75);
    cfg.mask.tube_ratio = j.value("tube_ratio", 0.75);
    cfg.mask.rand_ratio = j.value("rand_ratio", 0.25);
    cfg.effective_batch = j.value("batch", 8);
    cfg.base_lr = j.value("blr", 1.32e-4);
    cfg.epochs = j.value("epochs", 1);
    cfg.warmup_epochs = j.value("warmup", 0);
    cfg.weight_decay = j.value("weight_decay", 0.0457);
    cfg.clip_norm = j.value("clip_norm", 1.0);
    cfg.timestep_dropout = j.value("timestep_dropout", 0.10);
    cfg.seed = j.value("seed", 0);
    cfg.workers = j.value("workers", 1);
    cfg.max_steps = j.value("max_steps", 0);
    cfg.warmup_steps_override = j.value("warmup_steps", -1);
    if (j.contains("tasks") && !j["tasks"].get<std::string>().empty()) {
      for (const std::string& group : split(j["tasks"], ',')) {
        evmae::Task task;
        task.sources = split(group, '+');
        cfg.tasks.push_back(std::move(task));
      }
    }

    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw evmae::io_error(fmt::format("cannot create '{}'", out_dir));
    const auto ckpt_path = std::filesystem::path(out_dir) / "checkpoint.emck";
    const auto metrics_path = std::filesystem::path(out_dir) / "metrics.jsonl";
    const auto abort_path = std::filesystem::path(out_dir) / "abort.emck";

    evmae::Trainer trainer(cfg, std::move(d->regions));
    d->regions.clear();
    if (j.contains("resume")) {
      const evmae::Checkpoint ck =
          evmae::load_checkpoint(j["resume"].get<std::string>());
      trainer.restore(ck);
    }

    std::ofstream metrics(metrics_path, std::ios::trunc);
    if (!metrics)
      throw evmae::io_error(
          fmt::format("cannot open '{}'", metrics_path.string()));
    const evmae::TrainResult result = trainer.run(&metrics, &abort_path);
    evmae::save_checkpoint(trainer.make_checkpoint(), ckpt_path);

    nlohmann::ordered_json summary;
    summary["steps_run"] = result.steps_run;
    summary["total_steps"] = trainer.total_steps();
    summary["final_loss"] =
        result.metrics.empty() ? 0.0 : result.metrics.back().loss;
    summary["checkpoint"] = ckpt_path.string();
    summary["metrics"] = metrics_path.string();
    if (summary_json_out) *summary_json_out = dup_string(summary.dump());
  });
}

ev_status ev_gradcheck(uint64_t seed, double eps, double* max_rel_err_out,
                       char** report_json_out) {
  return guarded([&] {
    const auto cases = evmae::grad_check_suite(seed, eps);
    double max_err = 0.0;
    nlohmann::ordered_json report(nlohmann::ordered_json::value_t::array);
    for (const evmae::GradCheckCase& c : cases) {
      max_err = std::max(max_err, c.result.max_rel_err);
      report.push_back({{"name", c.name},
                        {"max_rel_err", c.result.max_rel_err},
                        {"checked", c.result.checked},
                        {"threshold", c.threshold},
                        {"passed", c.passed()}});
    }
    if (max_rel_err_out) *max_rel_err_out = max_err;
    if (report_json_out) *report_json_out = dup_string(report.dump());
  });
}

ev_status ev_model_open(const char* checkpoint_path, ev_model** out) {
  return guarded([&] {
    if (checkpoint_path == nullptr || out == nullptr)
      throw std::invalid_argument("null argument");
    auto m = std::make_unique<ev_model>();
    m->loaded = evmae::model_from_checkpoint(
        evmae::load_checkpoint(checkpoint_path));
    *out = m.release();
  });
}

ev_status ev_model_reconstruct(const ev_model* m, const ev_dataset* d,
                               int region_index, const char* scheme,
                               double ratio, uint64_t seed,
                               const char* out_dir, char** files_json_out) {
  return guarded([&] {
    if (m == nullptr || d == nullptr || out_dir == nullptr)
      throw std::invalid_argument("null argument");
    if (region_index < 0 ||
        static_cast<size_t>(region_index) >= d->regions.size())
      throw std::invalid_argument("region index out of range");

    const evmae::Region& region = d->regions[static_cast<size_t>(region_index)];
    const evmae::MaeModel<float>& model = *m->loaded.model;
    const evmae::ModelConfig& cfg = m->loaded.config;

    evmae::MaskSpec spec;
    spec.scheme = scheme != nullptr && scheme[0] != '\0'
                      ? evmae::mask_scheme_from_name(scheme)
                      : evmae::MaskScheme::tube;
    spec.ratio = ratio;

    std::vector<std::string> sources;
    for (const auto& [name, _] : region.sources)
      if (model.source_id(name) >= 0) sources.push_back(name);
    if (sources.empty())
      throw evmae::data_error(
          fmt::format("region '{}' has no source known to this model",
                      region.region_id));

    const evmae::PreparedSample<float> sample = model.prepare(
        region, sources, spec, seed, /*train_mode=*/false, 0.0);
    evmae::ForwardCache<float> cache;
    model.forward(sample, &cache);

    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw evmae::io_error(fmt::format("cannot create '{}'", out_dir));

    const int p = cfg.tokens_per_image();
    const int grid = cfg.grid();
    nlohmann::ordered_json files(nlohmann::ordered_json::value_t::array);
    for (size_t si = 0; si < sources.size(); ++si) {
      const int bands =
          model.catalog()[static_cast<size_t>(sample.source_ids[si])].bands;
      const int dim = bands * cfg.patch * cfg.patch;
      const int ti = 0;

      evmae::Mat<float> input_rows(p, dim);
      evmae::Mat<float> masked_rows_img(p, dim);
      evmae::Mat<float> recon_rows(p, dim);
      const evmae::Mat<float>& patches = *sample.patches[si];
      const evmae::Mat<float>& pred = cache.predictions[si];

      float lo = patches(static_cast<int64_t>(ti) * p, 0);
      float hi = lo;
      for (int pi = 0; pi < p; ++pi) {
        const float* src_row = patches.row(static_cast<int64_t>(ti) * p + pi);
        for (int c = 0; c < dim; ++c) {
          lo = std::min(lo, src_row[c]);
          hi = std::max(hi, src_row[c]);
        }
      }
      for (int pi = 0; pi < p; ++pi) {
        const int64_t row = static_cast<int64_t>(ti) * p + pi;
        const float* src_row = patches.row(row);
        std::copy(src_row, src_row + dim, input_rows.row(pi));

        const bool masked = sample.mask.at(ti, static_cast<int>(si), pi);
        if (masked) {
          std::fill(masked_rows_img.row(pi), masked_rows_img.row(pi) + dim,
                    0.5f * (lo + hi));
        } else {
          std::copy(src_row, src_row + dim, masked_rows_img.row(pi));
        }

        // Undo per-patch normalization with the target patch moments.
        const float* pred_row = pred.row(row);
        float* out_row = recon_rows.row(pi);
        if (cfg.norm_pix) {
          float mean = 0.0f;
          for (int c = 0; c < dim; ++c) mean += src_row[c];
          mean /= static_cast<float>(dim);
          float var = 0.0f;
          for (int c = 0; c < dim; ++c) {
            const float delta = src_row[c] - mean;
            var += delta * delta;
          }
          var /= static_cast<float>(dim);
          const float std_dev = std::sqrt(var + 1e-6f);
          for (int c = 0; c < dim; ++c)
            out_row[c] = pred_row[c] * std_dev + mean;
        } else {
          std::copy(pred_row, pred_row + dim, out_row);
        }
        if (!masked)  // visible patches pass through in the reconstruction
          std::copy(src_row, src_row + dim, out_row);
      }

      const auto emit = [&](const evmae::Mat<float>& rows,
                            const char* kind) {
        std::vector<float> img;
        evmae::unpatchify(rows, bands, cfg.patch, grid, img);
        const auto path =
            std::filesystem::path(out_dir) /
            fmt::format("{}.{}.t0.{}.ppm", region.region_id, sources[si], kind);
        write_ppm(path, planar_to_rgb(img, bands, cfg.image_size, lo, hi),
                  cfg.image_size, cfg.image_size);
        files.push_back(path.string());
      };
      emit(input_rows, "input");
      emit(masked_rows_img, "masked");
      emit(recon_rows, "recon");
    }
    if (files_json_out) *files_json_out = dup_string(files.dump());
  });
}

void ev_model_free(ev_model* m) { delete m; }

ev_status ev_lr_at(int64_t step, int64_t total_steps, int64_t warmup_steps,
                   double lr_max, double* out) {
  return guarded([&] {
    if (out == nullptr) throw std::invalid_argument("null output");
    *out = evmae::lr_at(step, total_steps, warmup_steps, lr_max);
  });
}

ev_status ev_scl_entropy(const int32_t* labels, int64_t n, int32_t n_classes,
                         double* out) {
  return guarded([&] {
    if (labels == nullptr || out == nullptr)
      throw std::invalid_argument("null argument");
    *out = evmae::scl_entropy(
        std::span<const int32_t>(labels, static_cast<size_t>(n)), n_classes);
  });
}

}  // extern "C"
