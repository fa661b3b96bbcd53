/* C API for the evmae core: opaque handles, status codes, malloc'd JSON
 * strings. Every function returning ev_status sets a thread-local message
 * retrievable via ev_last_error() on failure. */
#ifndef EVMAE_CAPI_H
#define EVMAE_CAPI_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum ev_status {
  EV_OK = 0,
  EV_ERR_INVALID_ARGUMENT = 1, /* bad flags, ranges, unknown names */
  EV_ERR_DATA = 2,             /* malformed or inconsistent content */
  EV_ERR_IO = 3,               /* filesystem failures */
  EV_ERR_INTERNAL = 4
} ev_status;

const char* ev_last_error(void);
const char* ev_version(void);
void ev_string_free(char* s);

/* ---- datasets (lists of regions) ---- */

typedef struct ev_dataset ev_dataset;

/* profiles_csv: comma-separated catalog names (e.g. "sentinel2,sentinel1");
 * pattern: "smooth-field" | "blobs" | "checker". */
ev_status ev_dataset_synth(const char* profiles_csv, const char* pattern,
                           int n_regions, uint64_t seed, ev_dataset** out);
ev_status ev_dataset_open(const char* const* shard_paths, int n_paths,
                          ev_dataset** out);
ev_status ev_dataset_write_shards(const ev_dataset* d, const char* out_dir,
                                  int shard_size, int* n_shards_out);
int64_t ev_dataset_region_count(const ev_dataset* d);
/* Per-source summary: counts, dims, dtype, band statistics, date range. */
ev_status ev_dataset_stats_json(const ev_dataset* d, char** json_out);
/* Window ranking over the scene-class band plus temporal selection and SAR
 * date pairing; requires regions with a "sentinel2scl" source. */
ev_status ev_dataset_curate_json(const ev_dataset* d, int window,
                                 double cloud_max, int top_k, char** json_out);
void ev_dataset_free(ev_dataset* d);

/* ---- masking ---- */

/* scheme: "random" | "tube" | "combined". The result carries masked counts,
 * per-slice statistics and an ASCII grid of the first slice. */
ev_status ev_mask_demo_json(const char* scheme, double ratio,
                            double tube_ratio, double rand_ratio, int t, int s,
                            int p, uint64_t seed, char** json_out);

/* ---- training / models ---- */

/* config_json keys (all optional): tasks "a+b,c", mask, ratio, tube_ratio,
 * rand_ratio, epochs, warmup, blr, batch, workers, seed, max_steps,
 * warmup_steps, resume (checkpoint path). Writes checkpoint.emck and
 * metrics.jsonl into out_dir. Consumes the dataset's regions to bound
 * memory: d is empty afterwards. */
ev_status ev_pretrain(const char* config_json, ev_dataset* d,
                      const char* out_dir, char** summary_json_out);

ev_status ev_gradcheck(uint64_t seed, double eps, double* max_rel_err_out,
                       char** report_json_out);

typedef struct ev_model ev_model;

ev_status ev_model_open(const char* checkpoint_path, ev_model** out);
/* Writes input/masked/reconstruction PPM panels for one region and returns
 * the file list as JSON. */
ev_status ev_model_reconstruct(const ev_model* m, const ev_dataset* d,
                               int region_index, const char* scheme,
                               double ratio, uint64_t seed,
                               const char* out_dir, char** files_json_out);
void ev_model_free(ev_model* m);

/* ---- scalar utilities ---- */

ev_status ev_lr_at(int64_t step, int64_t total_steps, int64_t warmup_steps,
                   double lr_max, double* out);
ev_status ev_scl_entropy(const int32_t* labels, int64_t n, int32_t n_classes,
                         double* out);

#ifdef __cplusplus
}
#endif

#endif /* EVMAE_CAPI_H */
