#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "evmae/checkpoint.hpp"
#include "evmae/model.hpp"
#include "evmae/region.hpp"

namespace evmae {

// Linear warmup to lr_max over warmup_steps, then cosine decay to zero at
// total_steps. Continuous at the warmup boundary.
double lr_at(int64_t step, int64_t total_steps, int64_t warmup_steps,
             double lr_max);

// Scales all gradients by max_norm / norm when the global L2 norm exceeds
// max_norm; returns the pre-clip norm.
double clip_gradients(std::span<double> grads, double max_norm);

struct Task {
  std::string task_id;
  std::vector<std::string> sources;
};

// Default task set: one task per source plus, with several sources, one
// task covering them all.
std::vector<Task> make_tasks(std::span<const std::string> sources);

// Every catalog source must be covered by at least one task.
void validate_tasks(std::span<const Task> tasks,
                    std::span<const std::string> catalog);

// Decoupled weight decay with momentum coefficients (0.9, 0.95); decay
// applies to weight matrices only (layout decay flag).
class AdamW {
 public:
  explicit AdamW(const ParamLayout& layout);

  void step(ParamStore<float>& params, std::span<const double> grads,
            double lr, double weight_decay);
  int64_t steps() const { return t_; }

  double beta1 = 0.9, beta2 = 0.95, eps = 1e-8;
  std::vector<float> m, v;
  int64_t t_ = 0;

 private:
  const ParamLayout* layout_;
};

struct TrainConfig {
  ModelConfig model;
  std::vector<Task> tasks;  // empty: make_tasks over the dataset sources
  MaskSpec mask;
  int effective_batch = 8;
  double base_lr = 1.32e-4;  // scaled by effective_batch / 256
  int epochs = 2;
  int warmup_epochs = 1;
  double weight_decay = 0.0457;
  double clip_norm = 1.0;
  double timestep_dropout = 0.10;
  uint64_t seed = 0;
  int workers = 1;
  // Optional overrides for step-exact experiments; 0 / -1 defer to epochs.
  int64_t max_steps = 0;
  int64_t warmup_steps_override = -1;

  double lr_max() const { return base_lr * effective_batch / 256.0; }
  void validate() const;
};

struct MetricsRow {
  int64_t step = 0;
  std::string task_id;
  double loss = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;
};

std::string metrics_row_json(const MetricsRow& row);

struct TrainResult {
  std::vector<MetricsRow> metrics;
  int64_t steps_run = 0;
};

// Bulk-synchronous pretraining loop. Workers are simulated sequentially:
// each worker accumulates its micro-batch gradient into its own buffer and
// the buffers are averaged at the step barrier, so the update equals the
// single-worker update on the concatenated batch.
class Trainer {
 public:
  // Takes the dataset by value: regions are tokenized once into patch
  // caches and the raw tensors are released region by region.
  Trainer(TrainConfig cfg, std::vector<Region> dataset);

  int64_t steps_per_epoch() const;
  int64_t total_steps() const;
  int64_t warmup_steps() const;

  // Runs from the current step to total_steps. Metrics rows (one JSON
  // object per step) are appended to metrics_out when given. A non-finite
  // loss dumps a checkpoint to abort_dump (when given) and throws.
  TrainResult run(std::ostream* metrics_out = nullptr,
                  const std::filesystem::path* abort_dump = nullptr);

  Checkpoint make_checkpoint() const;
  void restore(const Checkpoint& ckpt);

  MaeModel<float>& model() { return *model_; }
  const MaeModel<float>& model() const { return *model_; }
  const std::vector<Task>& tasks() const { return tasks_; }
  int64_t step() const { return step_; }
  std::string config_json() const;
  uint64_t config_hash() const;

 private:
  struct CachedRegion {
    std::string region_id;
    std::map<std::string, Mat<float>> patches;
    std::map<std::string, std::vector<Timestamp>> timestamps;
  };

  PreparedSample<float> draw_sample(size_t task_idx, int64_t stream_pos);

  TrainConfig cfg_;
  std::vector<Task> tasks_;
  std::vector<SourceSpec> catalog_;
  std::vector<CachedRegion> data_;
  std::unique_ptr<MaeModel<float>> model_;
  std::unique_ptr<AdamW> opt_;
  std::vector<std::vector<int>> task_regions_;
  std::vector<int64_t> stream_pos_;
  int64_t step_ = 0;
};

// Reconstruction-time model loading: rebuilds the model (config, catalog,
// band stats, parameters) from a checkpoint alone.
struct LoadedModel {
  ModelConfig config;
  std::unique_ptr<MaeModel<float>> model;
};

LoadedModel model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace evmae
