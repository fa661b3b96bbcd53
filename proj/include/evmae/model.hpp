#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "evmae/encoding.hpp"
#include "evmae/linalg.hpp"
#include "evmae/masking.hpp"
#include "evmae/region.hpp"
#include "evmae/tokenizer.hpp"

namespace evmae {

// Asymmetric masked autoencoder over the (timestep, source, patch) lattice.
// Token width equals the composite encoding width, so encodings are added
// to patch tokens directly.
struct ModelConfig {
  int width = 256;  // W = positional dim + 64 (source) + 64 (time)
  int encoder_depth = 4;
  int decoder_width = 128;
  int decoder_depth = 2;
  int heads = 4;
  int mlp_ratio = 4;
  int patch = 16;
  int image_size = 224;
  bool norm_pix = true;

  int grid() const { return image_size / patch; }
  int tokens_per_image() const { return grid() * grid(); }
  int pos_dim() const { return width - kSourceEmbedDim - kTimeEmbedDim; }
  void validate() const;
};

struct MaskSpec {
  MaskScheme scheme = MaskScheme::tube;
  double ratio = 0.75;        // random / tube
  double tube_ratio = 0.75;   // combined
  double rand_ratio = 0.25;
};

Mask make_mask(const MaskSpec& spec, int t, int s, int p, uint64_t seed);

struct SourceSpec {
  std::string name;
  int bands = 0;
  BandStats stats;

  int in_dim(int patch) const { return bands * patch * patch; }
};

// ---------------------------------------------------------------------------
// Parameter store: every learnable tensor lives in one flat buffer; layout
// order is the canonical order for init, optimizer state and checkpoints.
// ---------------------------------------------------------------------------

struct TensorSpec {
  std::string name;
  int64_t rows = 0, cols = 0;
  bool decay = false;  // participates in weight decay

  int64_t size() const { return rows * cols; }
};

class ParamLayout {
 public:
  static ParamLayout build(const ModelConfig& cfg,
                           std::span<const SourceSpec> catalog);

  const std::vector<TensorSpec>& tensors() const { return tensors_; }
  size_t offset(size_t i) const { return offsets_[i]; }
  size_t total() const { return total_; }
  int find(std::string_view name) const;  // -1 when absent

 private:
  std::vector<TensorSpec> tensors_;
  std::vector<size_t> offsets_;
  size_t total_ = 0;
};

template <typename T>
struct ParamStore {
  const ParamLayout* layout = nullptr;
  std::vector<T> data;

  ParamStore() = default;
  explicit ParamStore(const ParamLayout& l)
      : layout(&l), data(l.total(), T(0)) {}

  MatView<T> mat(int idx) {
    const TensorSpec& spec = layout->tensors()[static_cast<size_t>(idx)];
    return {spec.rows, spec.cols, data.data() + layout->offset(static_cast<size_t>(idx))};
  }
  MatView<const T> cmat(int idx) const {
    const TensorSpec& spec = layout->tensors()[static_cast<size_t>(idx)];
    return {spec.rows, spec.cols, data.data() + layout->offset(static_cast<size_t>(idx))};
  }
  void zero() { std::fill(data.begin(), data.end(), T(0)); }
};

// ---------------------------------------------------------------------------
// Forward caches
// ---------------------------------------------------------------------------

template <typename T>
struct LayerNormCache {
  std::vector<T> mean, rstd;
};

template <typename T>
struct BlockCache {
  Mat<T> x;    // block input
  Mat<T> h1;   // ln1(x)
  LayerNormCache<T> ln1;
  Mat<T> qkv;  // (n, 3d)
  std::vector<Mat<T>> attn;  // per head softmax probs (n, n)
  Mat<T> ctx;  // (n, d)
  Mat<T> x2;   // x + proj(ctx)
  Mat<T> h2;   // ln2(x2)
  LayerNormCache<T> ln2;
  Mat<T> u;    // fc1 output
  Mat<T> g;    // gelu(u)
};

template <typename T>
struct StackCache {
  std::vector<BlockCache<T>> blocks;
  Mat<T> prenorm;  // input of the final norm
  LayerNormCache<T> norm;
};

template <typename T>
struct ForwardCache {
  Mat<T> enc;                  // (N, W) composite encoding
  std::vector<int64_t> vis;    // visible flat indices, ascending
  // Per source: (encoder row, local patch row ti*p+pi) pairs in row order.
  std::vector<std::vector<std::pair<int64_t, int64_t>>> vis_by_source;
  std::vector<Mat<T>> vis_patches;  // per source, gathered visible rows
  StackCache<T> enc_stack;
  Mat<T> latents;  // (n_vis, W)
  StackCache<T> dec_stack;
  Mat<T> dfeat;    // (N, Wd)
  std::vector<Mat<T>> predictions;  // per source (t*p, bands*patch^2)
  std::vector<Mat<T>> targets;
  std::vector<std::vector<uint8_t>> masked_rows;  // per source, length t*p
  std::vector<int64_t> masked_per_source;
  int64_t encoder_flops = 0;
};

template <typename T>
struct PreparedSample {
  std::vector<int> source_ids;  // catalog indices, ascending name order
  std::vector<std::string> source_names;
  int t = 0;
  std::vector<std::array<int, 4>> time_idx;  // post-dropout indices
  std::vector<const Mat<T>*> patches;        // per source (>= t*p rows)
  std::vector<std::shared_ptr<Mat<T>>> patches_storage;  // backing if owned
  Mask mask;
};

template <typename T>
struct ForwardResult {
  T loss = T(0);
  std::vector<T> source_losses;
  int64_t encoder_flops = 0;
};

// Per-patch reconstruction target; with norm_pix each row is standardized
// by its own mean and variance ((x - m) / sqrt(v + 1e-6)).
template <typename T>
Mat<T> patch_target(const Mat<T>& patches, bool norm_pix,
                    int64_t row_limit = -1);

// Mean over masked rows of the per-row mean squared error; unmasked rows
// contribute nothing. Throws when no row is masked.
template <typename T>
T masked_mse(const Mat<T>& pred, const Mat<T>& target,
             std::span<const uint8_t> masked_rows);

// Exact inverse of patchify's layout; rows must be grid*grid.
template <typename T>
void unpatchify(const Mat<T>& rows, int c, int patch, int grid,
                std::vector<T>& img_out);

template <typename T>
class MaeModel {
 public:
  MaeModel(ModelConfig cfg, std::vector<SourceSpec> catalog,
           uint64_t init_seed);

  const ModelConfig& config() const { return cfg_; }
  const ParamLayout& layout() const { return layout_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }
  const std::vector<SourceSpec>& catalog() const { return catalog_; }
  const Mat<T>& positional() const { return positional_; }
  int source_id(const std::string& name) const;

  Mat<T> make_patches(const SourceTensor& src, const SourceSpec& spec) const;

  // Builds a training sample from a raw region: tokenize inputs, draw the
  // mask, apply timestep dropout (train mode only). Multi-source samples
  // truncate to the shortest source and take the time axis from the
  // lexicographically first one.
  PreparedSample<T> prepare(const Region& region,
                            std::span<const std::string> source_names,
                            const MaskSpec& mask_spec, uint64_t sample_seed,
                            bool train_mode, double dropout_prob) const;

  // Same, over pre-tokenized patches (trainer fast path).
  PreparedSample<T> prepare_cached(
      std::span<const std::string> source_names,
      std::span<const Mat<T>* const> patches,
      std::span<const std::vector<Timestamp>* const> timestamps,
      const MaskSpec& mask_spec, uint64_t sample_seed, bool train_mode,
      double dropout_prob) const;

  // Composite encoding for a sample's lattice: (t * s * p, W).
  Mat<T> compose_for_sample(const PreparedSample<T>& sample) const;

  // Visible-token encoder: tokens + encodings, transformer blocks, final
  // norm (skipped at depth 0, which keeps that config purely linear).
  Mat<T> encode(const Mat<T>& visible_tokens, const Mat<T>& visible_enc,
                StackCache<T>* cache = nullptr,
                int64_t* flops = nullptr) const;

  // Scatter latents into the lattice, fill masked slots with the mask
  // token, add projected encodings, run decoder blocks and per-source
  // heads. Returns per-source predictions (t*p, bands*patch^2).
  std::vector<Mat<T>> decode(const Mat<T>& latents, const Mask& mask,
                             const Mat<T>& enc,
                             std::span<const int> source_ids,
                             ForwardCache<T>* cache = nullptr) const;

  ForwardResult<T> forward(const PreparedSample<T>& sample,
                           ForwardCache<T>* cache) const;

  // Accumulates analytic gradients of the sample loss into `grads`.
  void backward(const PreparedSample<T>& sample, const ForwardCache<T>& cache,
                ParamStore<T>& grads) const;

 public:
  // Layout indices of one transformer block's tensors.
  struct BlockRefs {
    int ln1_g, ln1_b, qkv_w, qkv_b, proj_w, proj_b;
    int ln2_g, ln2_b, fc1_w, fc1_b, fc2_w, fc2_b;
  };

 private:
  MatView<const T> view(int idx) const { return params_.cmat(idx); }
  BlockRefs block_refs(const std::string& prefix) const;
  void init_params(uint64_t seed);
  Mat<T> run_encoder(Mat<T> x, StackCache<T>& cache, int64_t* flops) const;

  ModelConfig cfg_;
  std::vector<SourceSpec> catalog_;
  ParamLayout layout_;
  ParamStore<T> params_;
  Mat<T> positional_;

  std::vector<int> tok_w_, tok_b_, head_w_, head_b_;
  int time_year_, time_month_, time_day_, time_hour_, src_table_;
  std::vector<BlockRefs> enc_blocks_, dec_blocks_;
  int enc_norm_g_, enc_norm_b_, dec_norm_g_, dec_norm_b_;
  int dec_embed_w_, dec_embed_b_, encproj_w_, encproj_b_, mask_token_;
};

// Convenience wrapper: mean loss over a batch of regions with freshly drawn
// masks (and dropout when train_mode).
template <typename T>
struct BatchLoss {
  T loss = T(0);
  std::vector<ForwardResult<T>> samples;
};

template <typename T>
BatchLoss<T> forward_loss(const MaeModel<T>& model,
                          std::span<const Region* const> batch,
                          std::span<const std::string> source_names,
                          const MaskSpec& mask_spec, uint64_t seed,
                          bool train_mode = true, double dropout_prob = 0.10);

struct GradCheckResult {
  double max_rel_err = 0.0;
  int64_t checked = 0;
};

// Central-difference check of the analytic gradients on >= min_params
// randomly chosen scalars (at least two per tensor when possible).
GradCheckResult grad_check(MaeModel<double>& model,
                           std::span<const PreparedSample<double>> batch,
                           double eps = 1e-4, int64_t min_params = 200,
                           uint64_t seed = 0);

}  // namespace evmae
