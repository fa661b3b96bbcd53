#include "evmae/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <iostream>
#include <numbers>

#include "evmae/rng.hpp"
#include "evmae/tokenizer.hpp"
#include "json.hpp"

namespace evmae {

double lr_at(int64_t step, int64_t total_steps, int64_t warmup_steps,
             double lr_max) {
  if (warmup_steps >= total_steps)
    throw std::invalid_argument("warmup_steps must be < total_steps");
  if (step < 0 || step > total_steps)
    throw std::invalid_argument("step outside [0, total_steps]");
  if (step < warmup_steps)
    return lr_max * static_cast<double>(step) /
           static_cast<double>(warmup_steps);
  const double progress = static_cast<double>(step - warmup_steps) /
                          static_cast<double>(total_steps - warmup_steps);
  return lr_max * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

double clip_gradients(std::span<double> grads, double max_norm) {
  if (max_norm <= 0.0) throw std::invalid_argument("max_norm must be > 0");
  double ss = 0.0;
  for (const double g : grads) ss += g * g;
  const double norm = std::sqrt(ss);
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (double& g : grads) g *= scale;
  }
  return norm;
}

namespace {

std::string join_sources(std::span<const std::string> sources) {
  std::string id;
  for (const std::string& s : sources) {
    if (!id.empty()) id += '+';
    id += s;
  }
  return id;
}

}  // namespace

std::vector<Task> make_tasks(std::span<const std::string> sources) {
  if (sources.empty()) throw std::invalid_argument("empty source catalog");
  std::vector<std::string> sorted(sources.begin(), sources.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<Task> tasks;
  for (const std::string& s : sorted) tasks.push_back({s, {s}});
  if (sorted.size() > 1) tasks.push_back({join_sources(sorted), sorted});
  return tasks;
}

void validate_tasks(std::span<const Task> tasks,
                    std::span<const std::string> catalog) {
  if (tasks.empty()) throw data_error("no tasks");
  for (const Task& t : tasks)
    if (t.sources.empty())
      throw data_error(fmt::format("task '{}' has no sources", t.task_id));
  for (const std::string& name : catalog) {
    bool covered = false;
    for (const Task& t : tasks)
      covered = covered || std::find(t.sources.begin(), t.sources.end(),
                                     name) != t.sources.end();
    if (!covered) throw data_error(fmt::format("uncovered source '{}'", name));
  }
}

AdamW::AdamW(const ParamLayout& layout)
    : m(layout.total(), 0.0f), v(layout.total(), 0.0f), layout_(&layout) {}

void AdamW::step(ParamStore<float>& params, std::span<const double> grads,
                 double lr, double weight_decay) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
  const auto& tensors = layout_->tensors();
  for (size_t i = 0; i < tensors.size(); ++i) {
    const bool decay = tensors[i].decay;
    const size_t begin = layout_->offset(i);
    const size_t end = begin + static_cast<size_t>(tensors[i].size());
    for (size_t j = begin; j < end; ++j) {
      const double g = grads[j];
      const double mj = beta1 * m[j] + (1.0 - beta1) * g;
      const double vj = beta2 * v[j] + (1.0 - beta2) * g * g;
      m[j] = static_cast<float>(mj);
      v[j] = static_cast<float>(vj);
      double update = (mj / bc1) / (std::sqrt(vj / bc2) + eps);
      if (decay) update += weight_decay * params.data[j];
      params.data[j] = static_cast<float>(params.data[j] - lr * update);
    }
  }
}

void TrainConfig::validate() const {
  model.validate();
  if (effective_batch < 1 || workers < 1)
    throw std::invalid_argument("batch and workers must be >= 1");
  if (effective_batch % workers != 0)
    throw std::invalid_argument("effective_batch must divide across workers");
  if (clip_norm <= 0.0) throw std::invalid_argument("clip_norm must be > 0");
  if (timestep_dropout < 0.0 || timestep_dropout > 1.0)
    throw std::invalid_argument("timestep_dropout outside [0, 1]");
  if (max_steps == 0) {
    if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
    if (warmup_epochs < 0 || warmup_epochs >= epochs)
      throw std::invalid_argument("warmup_epochs must be < epochs");
  }
}

std::string metrics_row_json(const MetricsRow& row) {
  nlohmann::ordered_json j;
  j["step"] = row.step;
  j["task_id"] = row.task_id;
  j["loss"] = row.loss;
  j["lr"] = row.lr;
  j["grad_norm"] = row.grad_norm;
  return j.dump();
}

Trainer::Trainer(TrainConfig cfg, std::vector<Region> dataset)
    : cfg_(std::move(cfg)) {
  cfg_.validate();
  if (dataset.empty()) throw data_error("empty dataset");

  std::map<std::string, int> bands;
  for (const Region& r : dataset) {
    for (const auto& [name, src] : r.sources) {
      const auto it = bands.find(name);
      if (it == bands.end())
        bands.emplace(name, src.profile.bands);
      else if (it->second != src.profile.bands)
        throw data_error(
            fmt::format("inconsistent band count for source '{}'", name));
    }
  }
  std::vector<std::string> names;
  for (const auto& [name, _] : bands) names.push_back(name);

  tasks_ = cfg_.tasks.empty() ? make_tasks(names) : cfg_.tasks;
  for (Task& t : tasks_) {
    std::sort(t.sources.begin(), t.sources.end());
    t.sources.erase(std::unique(t.sources.begin(), t.sources.end()),
                    t.sources.end());
    if (t.task_id.empty()) t.task_id = join_sources(t.sources);
    for (const std::string& s : t.sources)
      if (!bands.contains(s))
        throw data_error(fmt::format("task '{}' references unknown source '{}'",
                                     t.task_id, s));
  }
  validate_tasks(tasks_, names);

  for (const auto& [name, band_count] : bands)
    catalog_.push_back(
        SourceSpec{name, band_count, compute_band_stats(dataset, name)});

  model_ = std::make_unique<MaeModel<float>>(cfg_.model, catalog_, cfg_.seed);
  opt_ = std::make_unique<AdamW>(model_->layout());

  // Tokenize every region once; raw tensors are dropped as we go.
  data_.reserve(dataset.size());
  for (Region& r : dataset) {
    CachedRegion cr;
    cr.region_id = r.region_id;
    for (const auto& [name, src] : r.sources) {
      const int id = model_->source_id(name);
      cr.patches.emplace(
          name,
          model_->make_patches(src, model_->catalog()[static_cast<size_t>(id)]));
      cr.timestamps.emplace(name, src.timestamps);
    }
    r.sources.clear();
    data_.push_back(std::move(cr));
  }
  dataset.clear();

  task_regions_.resize(tasks_.size());
  for (size_t ti = 0; ti < tasks_.size(); ++ti) {
    for (size_t i = 0; i < data_.size(); ++i) {
      bool has_all = true;
      for (const std::string& s : tasks_[ti].sources)
        has_all = has_all && data_[i].patches.contains(s);
      if (has_all) task_regions_[ti].push_back(static_cast<int>(i));
    }
    if (task_regions_[ti].empty())
      throw data_error(fmt::format("task '{}' has no regions providing its sources",
                                   tasks_[ti].task_id));
  }
  stream_pos_.assign(tasks_.size(), 0);

  if (warmup_steps() >= total_steps())
    throw std::invalid_argument("warmup spans the whole schedule");
}

int64_t Trainer::steps_per_epoch() const {
  const int64_t n = static_cast<int64_t>(data_.size());
  return std::max<int64_t>(1, (n + cfg_.effective_batch - 1) / cfg_.effective_batch);
}

int64_t Trainer::total_steps() const {
  if (cfg_.max_steps > 0) return cfg_.max_steps;
  return static_cast<int64_t>(cfg_.epochs) * steps_per_epoch();
}

int64_t Trainer::warmup_steps() const {
  if (cfg_.warmup_steps_override >= 0) return cfg_.warmup_steps_override;
  return static_cast<int64_t>(cfg_.warmup_epochs) * steps_per_epoch();
}

PreparedSample<float> Trainer::draw_sample(size_t task_idx,
                                           int64_t stream_pos) {
  const Task& task = tasks_[task_idx];
  const auto& regs = task_regions_[task_idx];
  const CachedRegion& cr =
      data_[static_cast<size_t>(regs[static_cast<size_t>(
          stream_pos % static_cast<int64_t>(regs.size()))])];

  std::vector<const Mat<float>*> patches;
  std::vector<const std::vector<Timestamp>*> times;
  for (const std::string& name : task.sources) {
    patches.push_back(&cr.patches.at(name));
    times.push_back(&cr.timestamps.at(name));
  }
  const uint64_t sample_seed =
      key_mix({cfg_.seed, fnv1a64(task.task_id),
               static_cast<uint64_t>(stream_pos)});
  return model_->prepare_cached(task.sources, patches, times, cfg_.mask,
                                sample_seed, true, cfg_.timestep_dropout);
}

TrainResult Trainer::run(std::ostream* metrics_out,
                         const std::filesystem::path* abort_dump) {
  TrainResult result;
  const int64_t total = total_steps();
  const int64_t warmup = warmup_steps();
  const int workers = cfg_.workers;
  const int64_t mb = cfg_.effective_batch / workers;
  const size_t n_params = model_->layout().total();

  std::vector<std::vector<double>> acc(
      static_cast<size_t>(workers), std::vector<double>(n_params, 0.0));
  std::vector<double> avg(n_params, 0.0);
  ParamStore<float> sample_grads(model_->layout());

  while (step_ < total) {
    const double lr = lr_at(step_, total, warmup, cfg_.lr_max());
    for (auto& a : acc) std::fill(a.begin(), a.end(), 0.0);
    double loss_sum = 0.0;
    const size_t lead_task = static_cast<size_t>(step_) % tasks_.size();

    for (int k = 0; k < workers; ++k) {
      const size_t task_idx =
          static_cast<size_t>(step_ + k) % tasks_.size();
      const auto& regs = task_regions_[task_idx];
      for (int64_t i = 0; i < mb; ++i) {
        const int64_t pos = stream_pos_[task_idx]++;
        if (pos > 0 && pos % static_cast<int64_t>(regs.size()) == 0)
          std::clog << fmt::format("[trainer] task '{}' wrapped its data at step {}\n",
                                   tasks_[task_idx].task_id, step_);
        const PreparedSample<float> sample = draw_sample(task_idx, pos);
        ForwardCache<float> cache;
        const ForwardResult<float> fwd = model_->forward(sample, &cache);
        if (!std::isfinite(fwd.loss)) {
          if (abort_dump) save_checkpoint(make_checkpoint(), *abort_dump);
          throw data_error(
              fmt::format("non-finite loss at step {}", step_));
        }
        sample_grads.zero();
        model_->backward(sample, cache, sample_grads);
        double* a = acc[static_cast<size_t>(k)].data();
        const float* g = sample_grads.data.data();
        for (size_t j = 0; j < n_params; ++j) a[j] += g[j];
        loss_sum += fwd.loss;
      }
    }

    std::fill(avg.begin(), avg.end(), 0.0);
    for (int k = 0; k < workers; ++k) {
      const double* a = acc[static_cast<size_t>(k)].data();
      for (size_t j = 0; j < n_params; ++j) avg[j] += a[j];
    }
    const double inv = 1.0 / static_cast<double>(cfg_.effective_batch);
    for (size_t j = 0; j < n_params; ++j) avg[j] *= inv;

    const double grad_norm = clip_gradients(avg, cfg_.clip_norm);
    opt_->step(model_->params(), avg, lr, cfg_.weight_decay);

    MetricsRow row{step_, tasks_[lead_task].task_id,
                   loss_sum / cfg_.effective_batch, lr, grad_norm};
    if (metrics_out) *metrics_out << metrics_row_json(row) << "\n";
    result.metrics.push_back(std::move(row));
    ++step_;
    ++result.steps_run;
  }
  return result;
}

std::string Trainer::config_json() const {
  nlohmann::ordered_json j;
  j["model"] = {{"width", cfg_.model.width},
                {"encoder_depth", cfg_.model.encoder_depth},
                {"decoder_width", cfg_.model.decoder_width},
                {"decoder_depth", cfg_.model.decoder_depth},
                {"heads", cfg_.model.heads},
                {"mlp_ratio", cfg_.model.mlp_ratio},
                {"patch", cfg_.model.patch},
                {"image_size", cfg_.model.image_size},
                {"norm_pix", cfg_.model.norm_pix}};
  j["mask"] = {{"scheme", mask_scheme_name(cfg_.mask.scheme)},
               {"ratio", cfg_.mask.ratio},
               {"tube_ratio", cfg_.mask.tube_ratio},
               {"rand_ratio", cfg_.mask.rand_ratio}};
  j["effective_batch"] = cfg_.effective_batch;
  j["base_lr"] = cfg_.base_lr;
  j["epochs"] = cfg_.epochs;
  j["warmup_epochs"] = cfg_.warmup_epochs;
  j["weight_decay"] = cfg_.weight_decay;
  j["clip_norm"] = cfg_.clip_norm;
  j["timestep_dropout"] = cfg_.timestep_dropout;
  j["seed"] = cfg_.seed;
  j["workers"] = cfg_.workers;
  j["max_steps"] = cfg_.max_steps;
  j["warmup_steps_override"] = cfg_.warmup_steps_override;
  nlohmann::ordered_json tasks(nlohmann::ordered_json::value_t::array);
  for (const Task& t : tasks_)
    tasks.push_back({{"task_id", t.task_id}, {"sources", t.sources}});
  j["tasks"] = std::move(tasks);
  nlohmann::ordered_json catalog(nlohmann::ordered_json::value_t::array);
  for (const SourceSpec& s : catalog_)
    catalog.push_back({{"name", s.name}, {"bands", s.bands}});
  j["catalog"] = std::move(catalog);
  j["n_regions"] = data_.size();
  return j.dump();
}

uint64_t Trainer::config_hash() const { return fnv1a64(config_json()); }

Checkpoint Trainer::make_checkpoint() const {
  Checkpoint ck;
  ck.add("meta.config.json") = blob_from_string(config_json());
  ck.add("meta.config.hash") = blob_from_u64(config_hash());
  ck.add("meta.seed") = blob_from_u64(cfg_.seed);
  ck.add("meta.step") = blob_from_u64(static_cast<uint64_t>(step_));
  for (size_t ti = 0; ti < tasks_.size(); ++ti)
    ck.add("meta.stream_pos." + tasks_[ti].task_id) =
        blob_from_u64(static_cast<uint64_t>(stream_pos_[ti]));
  for (const SourceSpec& s : catalog_) {
    ck.add("stats." + s.name + ".mean") =
        blob_from_doubles(s.stats.mean.data(), s.stats.mean.size());
    ck.add("stats." + s.name + ".std") =
        blob_from_doubles(s.stats.stddev.data(), s.stats.stddev.size());
    ck.add("stats." + s.name + ".eps") =
        blob_from_doubles(&s.stats.epsilon, 1);
  }
  const auto& tensors = model_->layout().tensors();
  const ParamStore<float>& params = model_->params();
  for (size_t i = 0; i < tensors.size(); ++i) {
    const size_t off = model_->layout().offset(i);
    const size_t n = static_cast<size_t>(tensors[i].size());
    ck.add("param." + tensors[i].name) = blob_from_floats(
        params.data.data() + off, n, tensors[i].rows, tensors[i].cols);
  }
  for (size_t i = 0; i < tensors.size(); ++i) {
    const size_t off = model_->layout().offset(i);
    const size_t n = static_cast<size_t>(tensors[i].size());
    ck.add("opt.m." + tensors[i].name) =
        blob_from_floats(opt_->m.data() + off, n, tensors[i].rows,
                         tensors[i].cols);
  }
  for (size_t i = 0; i < tensors.size(); ++i) {
    const size_t off = model_->layout().offset(i);
    const size_t n = static_cast<size_t>(tensors[i].size());
    ck.add("opt.v." + tensors[i].name) =
        blob_from_floats(opt_->v.data() + off, n, tensors[i].rows,
                         tensors[i].cols);
  }
  return ck;
}

void Trainer::restore(const Checkpoint& ck) {
  const TensorBlob* hash = ck.find("meta.config.hash");
  if (hash == nullptr || u64_from_blob(*hash) != config_hash())
    throw data_error("checkpoint config mismatch");
  step_ = static_cast<int64_t>(u64_from_blob(*ck.find("meta.step")));
  opt_->t_ = step_;
  for (size_t ti = 0; ti < tasks_.size(); ++ti) {
    const TensorBlob* pos = ck.find("meta.stream_pos." + tasks_[ti].task_id);
    if (pos == nullptr) throw data_error("checkpoint missing stream position");
    stream_pos_[ti] = static_cast<int64_t>(u64_from_blob(*pos));
  }
  const auto& tensors = model_->layout().tensors();
  const auto load_into = [&](const std::string& prefix, float* base) {
    for (size_t i = 0; i < tensors.size(); ++i) {
      const TensorBlob* blob = ck.find(prefix + tensors[i].name);
      if (blob == nullptr)
        throw data_error(
            fmt::format("checkpoint missing tensor '{}{}'", prefix,
                        tensors[i].name));
      const std::vector<float> values = floats_from_blob(*blob);
      if (values.size() != static_cast<size_t>(tensors[i].size()))
        throw data_error(
            fmt::format("checkpoint tensor '{}{}' has wrong size", prefix,
                        tensors[i].name));
      std::copy(values.begin(), values.end(),
                base + model_->layout().offset(i));
    }
  };
  load_into("param.", model_->params().data.data());
  load_into("opt.m.", opt_->m.data());
  load_into("opt.v.", opt_->v.data());
}

LoadedModel model_from_checkpoint(const Checkpoint& ck) {
  const TensorBlob* cfg_blob = ck.find("meta.config.json");
  if (cfg_blob == nullptr) throw data_error("checkpoint missing config");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(string_from_blob(*cfg_blob));
  } catch (const nlohmann::json::exception& e) {
    throw data_error(fmt::format("bad checkpoint config: {}", e.what()));
  }

  ModelConfig mc;
  const auto& jm = j.at("model");
  mc.width = jm.at("width");
  mc.encoder_depth = jm.at("encoder_depth");
  mc.decoder_width = jm.at("decoder_width");
  mc.decoder_depth = jm.at("decoder_depth");
  mc.heads = jm.at("heads");
  mc.mlp_ratio = jm.at("mlp_ratio");
  mc.patch = jm.at("patch");
  mc.image_size = jm.at("image_size");
  mc.norm_pix = jm.at("norm_pix");

  std::vector<SourceSpec> catalog;
  for (const auto& entry : j.at("catalog")) {
    SourceSpec spec;
    spec.name = entry.at("name");
    spec.bands = entry.at("bands");
    const TensorBlob* mean = ck.find("stats." + spec.name + ".mean");
    const TensorBlob* std_blob = ck.find("stats." + spec.name + ".std");
    const TensorBlob* eps = ck.find("stats." + spec.name + ".eps");
    if (mean == nullptr || std_blob == nullptr || eps == nullptr)
      throw data_error(
          fmt::format("checkpoint missing stats for '{}'", spec.name));
    spec.stats.mean = doubles_from_blob(*mean);
    spec.stats.stddev = doubles_from_blob(*std_blob);
    spec.stats.epsilon = doubles_from_blob(*eps).at(0);
    catalog.push_back(std::move(spec));
  }

  LoadedModel out;
  out.config = mc;
  out.model = std::make_unique<MaeModel<float>>(mc, std::move(catalog), 0);
  const auto& tensors = out.model->layout().tensors();
  for (size_t i = 0; i < tensors.size(); ++i) {
    const TensorBlob* blob = ck.find("param." + tensors[i].name);
    if (blob == nullptr)
      throw data_error(fmt::format("checkpoint missing tensor 'param.{}'",
                                   tensors[i].name));
    const std::vector<float> values = floats_from_blob(*blob);
    if (values.size() != static_cast<size_t>(tensors[i].size()))
      throw data_error(fmt::format("checkpoint tensor 'param.{}' has wrong size",
                                   tensors[i].name));
    std::copy(values.begin(), values.end(),
              out.model->params().data.data() + out.model->layout().offset(i));
  }
  return out;
}

}  // namespace evmae
