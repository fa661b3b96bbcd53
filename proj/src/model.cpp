#include "evmae/model.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <stdexcept>

#include "evmae/rng.hpp"

namespace evmae {

namespace {

template <typename T>
struct BlockParamViews {
  MatView<const T> ln1_g, ln1_b, qkv_w, qkv_b, proj_w, proj_b;
  MatView<const T> ln2_g, ln2_b, fc1_w, fc1_b, fc2_w, fc2_b;
  int heads = 1;
};

template <typename T>
struct BlockGradViews {
  MatView<T> ln1_g, ln1_b, qkv_w, qkv_b, proj_w, proj_b;
  MatView<T> ln2_g, ln2_b, fc1_w, fc1_b, fc2_w, fc2_b;
};

template <typename T, typename Refs>
BlockParamViews<T> make_block_views(const ParamStore<T>& params, const Refs& r,
                                    int heads) {
  return BlockParamViews<T>{params.cmat(r.ln1_g),  params.cmat(r.ln1_b),
                            params.cmat(r.qkv_w),  params.cmat(r.qkv_b),
                            params.cmat(r.proj_w), params.cmat(r.proj_b),
                            params.cmat(r.ln2_g),  params.cmat(r.ln2_b),
                            params.cmat(r.fc1_w),  params.cmat(r.fc1_b),
                            params.cmat(r.fc2_w),  params.cmat(r.fc2_b),
                            heads};
}

template <typename T, typename Refs>
BlockGradViews<T> make_block_grad_views(ParamStore<T>& grads, const Refs& r) {
  return BlockGradViews<T>{grads.mat(r.ln1_g),  grads.mat(r.ln1_b),
                           grads.mat(r.qkv_w),  grads.mat(r.qkv_b),
                           grads.mat(r.proj_w), grads.mat(r.proj_b),
                           grads.mat(r.ln2_g),  grads.mat(r.ln2_b),
                           grads.mat(r.fc1_w),  grads.mat(r.fc1_b),
                           grads.mat(r.fc2_w),  grads.mat(r.fc2_b)};
}

constexpr double kLnEps = 1e-6;
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

template <typename T>
void bias_fill(Mat<T>& m, MatView<const T> bias) {
  for (int64_t r = 0; r < m.rows; ++r)
    std::copy(bias.p, bias.p + m.cols, m.row(r));
}

template <typename T>
void add_inplace(Mat<T>& a, const Mat<T>& b) {
  for (size_t i = 0; i < a.v.size(); ++i) a.v[i] += b.v[i];
}

template <typename T>
void colsum_add(const Mat<T>& dy, MatView<T> gb) {
  for (int64_t r = 0; r < dy.rows; ++r) {
    const T* row = dy.row(r);
    for (int64_t c = 0; c < dy.cols; ++c) gb.p[c] += row[c];
  }
}

template <typename T>
void layernorm_forward(const Mat<T>& x, MatView<const T> g, MatView<const T> b,
                       Mat<T>& out, LayerNormCache<T>& cache) {
  const int64_t n = x.rows, d = x.cols;
  cache.mean.resize(static_cast<size_t>(n));
  cache.rstd.resize(static_cast<size_t>(n));
  for (int64_t r = 0; r < n; ++r) {
    const T* xr = x.row(r);
    T mean = T(0);
    for (int64_t c = 0; c < d; ++c) mean += xr[c];
    mean /= static_cast<T>(d);
    T var = T(0);
    for (int64_t c = 0; c < d; ++c) {
      const T delta = xr[c] - mean;
      var += delta * delta;
    }
    var /= static_cast<T>(d);
    const T rstd = T(1) / std::sqrt(var + static_cast<T>(kLnEps));
    cache.mean[static_cast<size_t>(r)] = mean;
    cache.rstd[static_cast<size_t>(r)] = rstd;
    T* yr = out.row(r);
    for (int64_t c = 0; c < d; ++c)
      yr[c] = g.p[c] * (xr[c] - mean) * rstd + b.p[c];
  }
}

// Returns dx; accumulates dgamma/dbeta.
template <typename T>
Mat<T> layernorm_backward(const Mat<T>& dy, const Mat<T>& x,
                          MatView<const T> g, const LayerNormCache<T>& cache,
                          MatView<T> ggrad, MatView<T> bgrad) {
  const int64_t n = x.rows, d = x.cols;
  Mat<T> dx(n, d);
  for (int64_t r = 0; r < n; ++r) {
    const T* xr = x.row(r);
    const T* dyr = dy.row(r);
    T* dxr = dx.row(r);
    const T mean = cache.mean[static_cast<size_t>(r)];
    const T rstd = cache.rstd[static_cast<size_t>(r)];
    T sum_dyg = T(0), sum_dyg_xhat = T(0);
    for (int64_t c = 0; c < d; ++c) {
      const T xhat = (xr[c] - mean) * rstd;
      const T dyg = dyr[c] * g.p[c];
      sum_dyg += dyg;
      sum_dyg_xhat += dyg * xhat;
      ggrad.p[c] += dyr[c] * xhat;
      bgrad.p[c] += dyr[c];
    }
    const T inv_d = T(1) / static_cast<T>(d);
    for (int64_t c = 0; c < d; ++c) {
      const T xhat = (xr[c] - mean) * rstd;
      const T dyg = dyr[c] * g.p[c];
      dxr[c] = rstd * (dyg - sum_dyg * inv_d - xhat * sum_dyg_xhat * inv_d);
    }
  }
  return dx;
}

template <typename T>
void softmax_rows(Mat<T>& m) {
  for (int64_t r = 0; r < m.rows; ++r) {
    T* row = m.row(r);
    T max = row[0];
    for (int64_t c = 1; c < m.cols; ++c) max = std::max(max, row[c]);
    T sum = T(0);
    for (int64_t c = 0; c < m.cols; ++c) {
      row[c] = std::exp(row[c] - max);
      sum += row[c];
    }
    const T inv = T(1) / sum;
    for (int64_t c = 0; c < m.cols; ++c) row[c] *= inv;
  }
}

// dS = A .* (dA - rowdot(dA, A)); in place on dA.
template <typename T>
void softmax_backward_inplace(Mat<T>& dA, const Mat<T>& A) {
  for (int64_t r = 0; r < dA.rows; ++r) {
    T* drow = dA.row(r);
    const T* arow = A.row(r);
    T dot = T(0);
    for (int64_t c = 0; c < dA.cols; ++c) dot += drow[c] * arow[c];
    for (int64_t c = 0; c < dA.cols; ++c) drow[c] = arow[c] * (drow[c] - dot);
  }
}

template <typename T>
void gelu_forward(const Mat<T>& u, Mat<T>& g) {
  for (size_t i = 0; i < u.v.size(); ++i) {
    const T x = u.v[i];
    g.v[i] = T(0.5) * x * (T(1) + std::erf(x * static_cast<T>(kInvSqrt2)));
  }
}

// du = dg .* gelu'(u); in place on dg.
template <typename T>
void gelu_backward_inplace(Mat<T>& dg, const Mat<T>& u) {
  for (size_t i = 0; i < u.v.size(); ++i) {
    const T x = u.v[i];
    const T cdf = T(0.5) * (T(1) + std::erf(x * static_cast<T>(kInvSqrt2)));
    const T pdf = static_cast<T>(kInvSqrt2Pi) * std::exp(T(-0.5) * x * x);
    dg.v[i] *= cdf + x * pdf;
  }
}

template <typename T>
Mat<T> block_forward(Mat<T> x, const BlockParamViews<T>& pv, BlockCache<T>& c,
                     int64_t* flops) {
  const int64_t n = x.rows, d = x.cols;
  const int heads = pv.heads;
  const int64_t dh = d / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));

  c.x = std::move(x);
  c.h1 = Mat<T>(n, d);
  layernorm_forward(c.x, pv.ln1_g, pv.ln1_b, c.h1, c.ln1);

  c.qkv = Mat<T>(n, 3 * d);
  bias_fill(c.qkv, pv.qkv_b);
  gemm(false, false, n, 3 * d, d, T(1), c.h1.data(), d, pv.qkv_w.p, 3 * d,
       T(1), c.qkv.data(), 3 * d);
  if (flops) *flops += 2 * n * 3 * d * d;

  c.attn.assign(static_cast<size_t>(heads), Mat<T>());
  c.ctx = Mat<T>(n, d);
  for (int h = 0; h < heads; ++h) {
    const T* q = c.qkv.data() + h * dh;
    const T* k = c.qkv.data() + d + h * dh;
    const T* v = c.qkv.data() + 2 * d + h * dh;
    Mat<T>& a = c.attn[static_cast<size_t>(h)];
    a = Mat<T>(n, n);
    gemm(false, true, n, n, dh, scale, q, 3 * d, k, 3 * d, T(0), a.data(), n);
    softmax_rows(a);
    gemm(false, false, n, dh, n, T(1), a.data(), n, v, 3 * d, T(0),
         c.ctx.data() + h * dh, d);
    if (flops) *flops += 4 * n * n * dh;
  }

  c.x2 = Mat<T>(n, d);
  bias_fill(c.x2, pv.proj_b);
  gemm(false, false, n, d, d, T(1), c.ctx.data(), d, pv.proj_w.p, d, T(1),
       c.x2.data(), d);
  if (flops) *flops += 2 * n * d * d;
  add_inplace(c.x2, c.x);

  const int64_t dm = pv.fc1_w.cols;
  c.h2 = Mat<T>(n, d);
  layernorm_forward(c.x2, pv.ln2_g, pv.ln2_b, c.h2, c.ln2);
  c.u = Mat<T>(n, dm);
  bias_fill(c.u, pv.fc1_b);
  gemm(false, false, n, dm, d, T(1), c.h2.data(), d, pv.fc1_w.p, dm, T(1),
       c.u.data(), dm);
  c.g = Mat<T>(n, dm);
  gelu_forward(c.u, c.g);
  Mat<T> out(n, d);
  bias_fill(out, pv.fc2_b);
  gemm(false, false, n, d, dm, T(1), c.g.data(), dm, pv.fc2_w.p, d, T(1),
       out.data(), d);
  if (flops) *flops += 4 * n * dm * d;
  add_inplace(out, c.x2);
  return out;
}

template <typename T>
Mat<T> block_backward(const Mat<T>& dout, const BlockParamViews<T>& pv,
                      const BlockCache<T>& c, BlockGradViews<T>& gv) {
  const int64_t n = c.x.rows, d = c.x.cols;
  const int heads = pv.heads;
  const int64_t dh = d / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  const int64_t dm = pv.fc1_w.cols;

  // MLP branch.
  Mat<T> dg(n, dm);
  gemm(false, true, n, dm, d, T(1), dout.data(), d, pv.fc2_w.p, d, T(0),
       dg.data(), dm);
  gemm(true, false, dm, d, n, T(1), c.g.data(), dm, dout.data(), d, T(1),
       gv.fc2_w.p, d);
  colsum_add(dout, gv.fc2_b);
  gelu_backward_inplace(dg, c.u);  // dg is now du
  Mat<T> dh2(n, d);
  gemm(false, true, n, d, dm, T(1), dg.data(), dm, pv.fc1_w.p, dm, T(0),
       dh2.data(), d);
  gemm(true, false, d, dm, n, T(1), c.h2.data(), d, dg.data(), dm, T(1),
       gv.fc1_w.p, dm);
  colsum_add(dg, gv.fc1_b);
  Mat<T> dx2 =
      layernorm_backward(dh2, c.x2, pv.ln2_g, c.ln2, gv.ln2_g, gv.ln2_b);
  add_inplace(dx2, dout);

  // Attention branch; dx2 is the gradient at the proj output.
  Mat<T> dctx(n, d);
  gemm(false, true, n, d, d, T(1), dx2.data(), d, pv.proj_w.p, d, T(0),
       dctx.data(), d);
  gemm(true, false, d, d, n, T(1), c.ctx.data(), d, dx2.data(), d, T(1),
       gv.proj_w.p, d);
  colsum_add(dx2, gv.proj_b);

  Mat<T> dqkv(n, 3 * d);
  Mat<T> da(n, n);
  for (int h = 0; h < heads; ++h) {
    const T* q = c.qkv.data() + h * dh;
    const T* k = c.qkv.data() + d + h * dh;
    const T* v = c.qkv.data() + 2 * d + h * dh;
    const Mat<T>& a = c.attn[static_cast<size_t>(h)];
    gemm(false, true, n, n, dh, T(1), dctx.data() + h * dh, d, v, 3 * d, T(0),
         da.data(), n);
    gemm(true, false, n, dh, n, T(1), a.data(), n, dctx.data() + h * dh, d,
         T(0), dqkv.data() + 2 * d + h * dh, 3 * d);
    softmax_backward_inplace(da, a);
    gemm(false, false, n, dh, n, scale, da.data(), n, k, 3 * d, T(0),
         dqkv.data() + h * dh, 3 * d);
    gemm(true, false, n, dh, n, scale, da.data(), n, q, 3 * d, T(0),
         dqkv.data() + d + h * dh, 3 * d);
  }
  Mat<T> dh1(n, d);
  gemm(false, true, n, d, 3 * d, T(1), dqkv.data(), 3 * d, pv.qkv_w.p, 3 * d,
       T(0), dh1.data(), d);
  gemm(true, false, d, 3 * d, n, T(1), c.h1.data(), d, dqkv.data(), 3 * d,
       T(1), gv.qkv_w.p, 3 * d);
  colsum_add(dqkv, gv.qkv_b);

  Mat<T> dx =
      layernorm_backward(dh1, c.x, pv.ln1_g, c.ln1, gv.ln1_g, gv.ln1_b);
  add_inplace(dx, dx2);
  return dx;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config / layout
// ---------------------------------------------------------------------------

void ModelConfig::validate() const {
  if (pos_dim() <= 0 || pos_dim() % 4 != 0)
    throw std::invalid_argument(fmt::format(
        "width {} must exceed 128 by a positive multiple of 4", width));
  if (width % heads != 0 || decoder_width % heads != 0)
    throw std::invalid_argument("widths must be divisible by heads");
  if (image_size % patch != 0)
    throw std::invalid_argument("image_size must be divisible by patch");
  if (encoder_depth < 0 || decoder_depth < 0 || mlp_ratio < 1 || patch < 1)
    throw std::invalid_argument("bad model dimensions");
}

Mask make_mask(const MaskSpec& spec, int t, int s, int p, uint64_t seed) {
  switch (spec.scheme) {
    case MaskScheme::random: return random_mask(t, s, p, spec.ratio, seed);
    case MaskScheme::tube: return tube_mask(t, s, p, spec.ratio, seed);
    case MaskScheme::combined:
      return combined_mask(t, s, p, spec.tube_ratio, spec.rand_ratio, seed);
  }
  throw std::invalid_argument("unknown mask scheme");
}

ParamLayout ParamLayout::build(const ModelConfig& cfg,
                               std::span<const SourceSpec> catalog) {
  cfg.validate();
  ParamLayout layout;

  const auto add = [&](std::string name, int64_t rows, int64_t cols,
                       bool decay) {
    layout.offsets_.push_back(layout.total_);
    layout.total_ += static_cast<size_t>(rows * cols);
    layout.tensors_.push_back(TensorSpec{std::move(name), rows, cols, decay});
  };
  const auto add_block = [&](const std::string& prefix, int64_t d,
                             int64_t dm) {
    add(prefix + "ln1.g", 1, d, false);
    add(prefix + "ln1.b", 1, d, false);
    add(prefix + "attn.qkv.w", d, 3 * d, true);
    add(prefix + "attn.qkv.b", 1, 3 * d, false);
    add(prefix + "attn.proj.w", d, d, true);
    add(prefix + "attn.proj.b", 1, d, false);
    add(prefix + "ln2.g", 1, d, false);
    add(prefix + "ln2.b", 1, d, false);
    add(prefix + "mlp.fc1.w", d, dm, true);
    add(prefix + "mlp.fc1.b", 1, dm, false);
    add(prefix + "mlp.fc2.w", dm, d, true);
    add(prefix + "mlp.fc2.b", 1, d, false);
  };

  const int64_t w = cfg.width, wd = cfg.decoder_width;
  for (const SourceSpec& s : catalog) {
    add("tok." + s.name + ".w", s.in_dim(cfg.patch), w, true);
    add("tok." + s.name + ".b", 1, w, false);
  }
  add("time.year", kYearVocab, kTimeComponentDim, false);
  add("time.month", kMonthVocab, kTimeComponentDim, false);
  add("time.day", kDayVocab, kTimeComponentDim, false);
  add("time.hour", kHourVocab, kTimeComponentDim, false);
  add("src.table", static_cast<int64_t>(catalog.size()), kSourceEmbedDim,
      false);
  for (int i = 0; i < cfg.encoder_depth; ++i)
    add_block(fmt::format("enc.{}.", i), w, cfg.mlp_ratio * w);
  add("enc.norm.g", 1, w, false);
  add("enc.norm.b", 1, w, false);
  add("dec.embed.w", w, wd, true);
  add("dec.embed.b", 1, wd, false);
  add("dec.encproj.w", w, wd, true);
  add("dec.encproj.b", 1, wd, false);
  add("dec.mask_token", 1, wd, false);
  for (int i = 0; i < cfg.decoder_depth; ++i)
    add_block(fmt::format("dec.{}.", i), wd, cfg.mlp_ratio * wd);
  add("dec.norm.g", 1, wd, false);
  add("dec.norm.b", 1, wd, false);
  for (const SourceSpec& s : catalog) {
    add("head." + s.name + ".w", wd, s.in_dim(cfg.patch), true);
    add("head." + s.name + ".b", 1, s.in_dim(cfg.patch), false);
  }
  return layout;
}

int ParamLayout::find(std::string_view name) const {
  for (size_t i = 0; i < tensors_.size(); ++i)
    if (tensors_[i].name == name) return static_cast<int>(i);
  return -1;
}

// ---------------------------------------------------------------------------
// Targets, loss, unpatchify
// ---------------------------------------------------------------------------

template <typename T>
Mat<T> patch_target(const Mat<T>& patches, bool norm_pix, int64_t row_limit) {
  const int64_t rows = row_limit >= 0 ? row_limit : patches.rows;
  Mat<T> out(rows, patches.cols);
  for (int64_t r = 0; r < rows; ++r) {
    const T* src = patches.row(r);
    T* dst = out.row(r);
    if (!norm_pix) {
      std::copy(src, src + patches.cols, dst);
      continue;
    }
    T mean = T(0);
    for (int64_t c = 0; c < patches.cols; ++c) mean += src[c];
    mean /= static_cast<T>(patches.cols);
    T var = T(0);
    for (int64_t c = 0; c < patches.cols; ++c) {
      const T delta = src[c] - mean;
      var += delta * delta;
    }
    var /= static_cast<T>(patches.cols);
    const T rstd = T(1) / std::sqrt(var + static_cast<T>(1e-6));
    for (int64_t c = 0; c < patches.cols; ++c) dst[c] = (src[c] - mean) * rstd;
  }
  return out;
}

template <typename T>
T masked_mse(const Mat<T>& pred, const Mat<T>& target,
             std::span<const uint8_t> masked_rows) {
  if (pred.rows != target.rows || pred.cols != target.cols)
    throw std::invalid_argument("prediction/target shape mismatch");
  int64_t masked = 0;
  T total = T(0);
  for (int64_t r = 0; r < pred.rows; ++r) {
    if (!masked_rows[static_cast<size_t>(r)]) continue;
    ++masked;
    const T* pr = pred.row(r);
    const T* tr = target.row(r);
    T acc = T(0);
    for (int64_t c = 0; c < pred.cols; ++c) {
      const T e = pr[c] - tr[c];
      acc += e * e;
    }
    total += acc / static_cast<T>(pred.cols);
  }
  if (masked == 0) throw std::invalid_argument("zero masked positions");
  return total / static_cast<T>(masked);
}

template <typename T>
void unpatchify(const Mat<T>& rows, int c, int patch, int grid,
                std::vector<T>& img_out) {
  if (rows.rows != static_cast<int64_t>(grid) * grid)
    throw std::invalid_argument(
        fmt::format("bad patch count {} for grid {}", rows.rows, grid));
  const int hw = grid * patch;
  img_out.assign(static_cast<size_t>(c) * hw * hw, T(0));
  for (int by = 0; by < grid; ++by) {
    for (int bx = 0; bx < grid; ++bx) {
      const T* row = rows.row(static_cast<int64_t>(by) * grid + bx);
      for (int ch = 0; ch < c; ++ch) {
        T* plane = img_out.data() + static_cast<size_t>(ch) * hw * hw;
        for (int py = 0; py < patch; ++py) {
          T* dst =
              plane + static_cast<size_t>(by * patch + py) * hw + bx * patch;
          const T* src = row + (static_cast<size_t>(ch) * patch + py) * patch;
          std::copy(src, src + patch, dst);
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// MaeModel
// ---------------------------------------------------------------------------

template <typename T>
MaeModel<T>::MaeModel(ModelConfig cfg, std::vector<SourceSpec> catalog,
                      uint64_t init_seed)
    : cfg_(cfg), catalog_(std::move(catalog)) {
  cfg_.validate();
  std::sort(
      catalog_.begin(), catalog_.end(),
      [](const SourceSpec& a, const SourceSpec& b) { return a.name < b.name; });
  for (SourceSpec& s : catalog_) {
    if (s.bands < 1)
      throw std::invalid_argument(
          fmt::format("source '{}' has no bands", s.name));
    if (s.stats.mean.empty()) {  // raw mode: identity standardization
      s.stats.mean.assign(static_cast<size_t>(s.bands), 0.0);
      s.stats.stddev.assign(static_cast<size_t>(s.bands), 1.0);
      s.stats.epsilon = 0.0;
    }
    if (s.stats.mean.size() != static_cast<size_t>(s.bands) ||
        s.stats.stddev.size() != static_cast<size_t>(s.bands))
      throw std::invalid_argument(
          fmt::format("source '{}': stats do not match bands", s.name));
  }
  for (size_t i = 1; i < catalog_.size(); ++i)
    if (catalog_[i].name == catalog_[i - 1].name)
      throw std::invalid_argument(
          fmt::format("duplicate source '{}'", catalog_[i].name));

  layout_ = ParamLayout::build(cfg_, catalog_);
  params_ = ParamStore<T>(layout_);
  init_params(init_seed);
  positional_ = positional_grid<T>(cfg_.pos_dim(), cfg_.grid());

  for (const SourceSpec& s : catalog_) {
    tok_w_.push_back(layout_.find("tok." + s.name + ".w"));
    tok_b_.push_back(layout_.find("tok." + s.name + ".b"));
    head_w_.push_back(layout_.find("head." + s.name + ".w"));
    head_b_.push_back(layout_.find("head." + s.name + ".b"));
  }
  time_year_ = layout_.find("time.year");
  time_month_ = layout_.find("time.month");
  time_day_ = layout_.find("time.day");
  time_hour_ = layout_.find("time.hour");
  src_table_ = layout_.find("src.table");
  for (int i = 0; i < cfg_.encoder_depth; ++i)
    enc_blocks_.push_back(block_refs(fmt::format("enc.{}.", i)));
  for (int i = 0; i < cfg_.decoder_depth; ++i)
    dec_blocks_.push_back(block_refs(fmt::format("dec.{}.", i)));
  enc_norm_g_ = layout_.find("enc.norm.g");
  enc_norm_b_ = layout_.find("enc.norm.b");
  dec_norm_g_ = layout_.find("dec.norm.g");
  dec_norm_b_ = layout_.find("dec.norm.b");
  dec_embed_w_ = layout_.find("dec.embed.w");
  dec_embed_b_ = layout_.find("dec.embed.b");
  encproj_w_ = layout_.find("dec.encproj.w");
  encproj_b_ = layout_.find("dec.encproj.b");
  mask_token_ = layout_.find("dec.mask_token");
}

template <typename T>
typename MaeModel<T>::BlockRefs MaeModel<T>::block_refs(
    const std::string& prefix) const {
  return BlockRefs{layout_.find(prefix + "ln1.g"),
                   layout_.find(prefix + "ln1.b"),
                   layout_.find(prefix + "attn.qkv.w"),
                   layout_.find(prefix + "attn.qkv.b"),
                   layout_.find(prefix + "attn.proj.w"),
                   layout_.find(prefix + "attn.proj.b"),
                   layout_.find(prefix + "ln2.g"),
                   layout_.find(prefix + "ln2.b"),
                   layout_.find(prefix + "mlp.fc1.w"),
                   layout_.find(prefix + "mlp.fc1.b"),
                   layout_.find(prefix + "mlp.fc2.w"),
                   layout_.find(prefix + "mlp.fc2.b")};
}

template <typename T>
void MaeModel<T>::init_params(uint64_t seed) {
  SplitMix64 rng(key_mix({seed, fnv1a64("init")}));
  const auto& tensors = layout_.tensors();
  for (size_t i = 0; i < tensors.size(); ++i) {
    const TensorSpec& spec = tensors[i];
    T* p = params_.data.data() + layout_.offset(i);
    if (spec.name.ends_with(".g")) {
      std::fill(p, p + spec.size(), T(1));
    } else if (spec.name.starts_with("time.") || spec.name == "src.table" ||
               spec.name == "dec.mask_token") {
      for (int64_t j = 0; j < spec.size(); ++j)
        p[j] = static_cast<T>(0.02 * rng.next_normal());
    } else if (spec.name.ends_with(".b")) {
      std::fill(p, p + spec.size(), T(0));
    } else {  // weight matrices: xavier uniform
      const double a =
          std::sqrt(6.0 / static_cast<double>(spec.rows + spec.cols));
      for (int64_t j = 0; j < spec.size(); ++j)
        p[j] = static_cast<T>((2.0 * rng.next_double() - 1.0) * a);
    }
  }
}

template <typename T>
int MaeModel<T>::source_id(const std::string& name) const {
  for (size_t i = 0; i < catalog_.size(); ++i)
    if (catalog_[i].name == name) return static_cast<int>(i);
  return -1;
}

template <typename T>
Mat<T> MaeModel<T>::make_patches(const SourceTensor& src,
                                 const SourceSpec& spec) const {
  return source_patches<T>(src, spec.stats, cfg_.image_size, cfg_.patch);
}

template <typename T>
PreparedSample<T> MaeModel<T>::prepare(
    const Region& region, std::span<const std::string> source_names,
    const MaskSpec& mask_spec, uint64_t sample_seed, bool train_mode,
    double dropout_prob) const {
  std::vector<std::string> names(source_names.begin(), source_names.end());
  std::sort(names.begin(), names.end());

  std::vector<std::shared_ptr<Mat<T>>> storage;
  std::vector<const Mat<T>*> patch_ptrs;
  std::vector<const std::vector<Timestamp>*> times;
  for (const std::string& name : names) {
    const auto it = region.sources.find(name);
    if (it == region.sources.end())
      throw std::invalid_argument(fmt::format("region '{}' lacks source '{}'",
                                              region.region_id, name));
    const int id = source_id(name);
    if (id < 0)
      throw std::invalid_argument(fmt::format("unknown source '{}'", name));
    storage.push_back(std::make_shared<Mat<T>>(
        make_patches(it->second, catalog_[static_cast<size_t>(id)])));
    patch_ptrs.push_back(storage.back().get());
    times.push_back(&it->second.timestamps);
  }

  PreparedSample<T> sample =
      prepare_cached(names, patch_ptrs, times, mask_spec, sample_seed,
                     train_mode, dropout_prob);
  sample.patches_storage = std::move(storage);
  return sample;
}

template <typename T>
PreparedSample<T> MaeModel<T>::prepare_cached(
    std::span<const std::string> source_names,
    std::span<const Mat<T>* const> patches,
    std::span<const std::vector<Timestamp>* const> timestamps,
    const MaskSpec& mask_spec, uint64_t sample_seed, bool train_mode,
    double dropout_prob) const {
  PreparedSample<T> sample;
  sample.source_names.assign(source_names.begin(), source_names.end());
  if (!std::is_sorted(sample.source_names.begin(), sample.source_names.end()))
    throw std::invalid_argument("sources must be sorted by name");

  int t = 0;
  for (size_t i = 0; i < sample.source_names.size(); ++i) {
    const int id = source_id(sample.source_names[i]);
    if (id < 0)
      throw std::invalid_argument(
          fmt::format("unknown source '{}'", sample.source_names[i]));
    sample.source_ids.push_back(id);
    sample.patches.push_back(patches[i]);
    const int ti = static_cast<int>(timestamps[i]->size());
    t = i == 0 ? ti : std::min(t, ti);
  }
  if (t < 1) throw std::invalid_argument("sample has no timesteps");
  sample.t = t;

  // Time axis of the lattice: lexicographically first source.
  std::vector<Timestamp> times(timestamps[0]->begin(),
                               timestamps[0]->begin() + t);
  if (train_mode) {
    SplitMix64 rng(key_mix({sample_seed, fnv1a64("dropout")}));
    times = timestep_dropout(times, dropout_prob, rng);
  }
  for (const Timestamp& ts : times) sample.time_idx.push_back(time_index(ts));

  const int p = cfg_.tokens_per_image();
  for (size_t i = 0; i < sample.patches.size(); ++i)
    if (sample.patches[i]->rows < static_cast<int64_t>(t) * p ||
        sample.patches[i]->cols !=
            catalog_[static_cast<size_t>(sample.source_ids[i])].in_dim(
                cfg_.patch))
      throw std::invalid_argument("patch matrix shape mismatch");

  sample.mask =
      make_mask(mask_spec, t, static_cast<int>(sample.source_ids.size()), p,
                key_mix({sample_seed, fnv1a64("mask")}));
  return sample;
}

template <typename T>
Mat<T> MaeModel<T>::compose_for_sample(const PreparedSample<T>& sample) const {
  const Mat<T> time_emb =
      embed_time<T>(sample.time_idx, view(time_year_), view(time_month_),
                    view(time_day_), view(time_hour_));
  const Mat<T> src_emb = embed_source<T>(sample.source_ids, view(src_table_));
  return compose_encoding(positional_, src_emb, time_emb);
}

template <typename T>
Mat<T> MaeModel<T>::run_encoder(Mat<T> x, StackCache<T>& cache,
                                int64_t* flops) const {
  cache.blocks.resize(static_cast<size_t>(cfg_.encoder_depth));
  for (int i = 0; i < cfg_.encoder_depth; ++i) {
    const BlockParamViews<T> pv =
        make_block_views(params_, enc_blocks_[static_cast<size_t>(i)],
                         cfg_.heads);
    x = block_forward(std::move(x), pv, cache.blocks[static_cast<size_t>(i)],
                      flops);
  }
  if (cfg_.encoder_depth == 0) return x;  // pure linear verification path
  cache.prenorm = std::move(x);
  Mat<T> out(cache.prenorm.rows, cache.prenorm.cols);
  layernorm_forward(cache.prenorm, view(enc_norm_g_), view(enc_norm_b_), out,
                    cache.norm);
  return out;
}

template <typename T>
Mat<T> MaeModel<T>::encode(const Mat<T>& visible_tokens,
                           const Mat<T>& visible_enc, StackCache<T>* cache,
                           int64_t* flops) const {
  if (visible_tokens.rows < 1) throw std::invalid_argument("no visible tokens");
  if (visible_tokens.rows != visible_enc.rows ||
      visible_tokens.cols != visible_enc.cols)
    throw std::invalid_argument("token/encoding shape mismatch");
  for (size_t i = 0; i < visible_tokens.v.size(); ++i)
    if (!std::isfinite(static_cast<double>(visible_tokens.v[i])))
      throw std::invalid_argument("non-finite input token");

  Mat<T> x(visible_tokens.rows, visible_tokens.cols);
  for (size_t i = 0; i < x.v.size(); ++i)
    x.v[i] = visible_tokens.v[i] + visible_enc.v[i];

  StackCache<T> local;
  return run_encoder(std::move(x), cache ? *cache : local, flops);
}

template <typename T>
std::vector<Mat<T>> MaeModel<T>::decode(const Mat<T>& latents,
                                        const Mask& mask, const Mat<T>& enc,
                                        std::span<const int> source_ids,
                                        ForwardCache<T>* cache) const {
  const int64_t n_lattice = mask.size();
  const int64_t wd = cfg_.decoder_width;
  const int p = cfg_.tokens_per_image();
  const int s = mask.s;
  const int t = mask.t;
  if (static_cast<size_t>(s) != source_ids.size())
    throw std::invalid_argument("mask sources != source id count");
  if (latents.rows != n_lattice - mask.masked_count)
    throw std::invalid_argument("latent count inconsistent with mask");
  if (mask.p != p)
    throw std::invalid_argument("mask patch count != model tokens per image");

  Mat<T> lat_proj(latents.rows, wd);
  bias_fill(lat_proj, view(dec_embed_b_));
  gemm(false, false, latents.rows, wd, latents.cols, T(1), latents.data(),
       latents.cols, view(dec_embed_w_).p, wd, T(1), lat_proj.data(), wd);

  Mat<T> dec_in(n_lattice, wd);
  const MatView<const T> token = view(mask_token_);
  int64_t j = 0;
  for (int64_t i = 0; i < n_lattice; ++i) {
    if (mask.lattice[static_cast<size_t>(i)]) {
      std::copy(token.p, token.p + wd, dec_in.row(i));
    } else {
      std::copy(lat_proj.row(j), lat_proj.row(j) + wd, dec_in.row(i));
      ++j;
    }
  }
  // Decoder-side position/source/time information at every slot.
  const MatView<const T> bep = view(encproj_b_);
  for (int64_t i = 0; i < n_lattice; ++i) {
    T* row = dec_in.row(i);
    for (int64_t c = 0; c < wd; ++c) row[c] += bep.p[c];
  }
  gemm(false, false, n_lattice, wd, enc.cols, T(1), enc.data(), enc.cols,
       view(encproj_w_).p, wd, T(1), dec_in.data(), wd);

  ForwardCache<T> local;
  ForwardCache<T>& fc = cache ? *cache : local;
  fc.dec_stack.blocks.resize(static_cast<size_t>(cfg_.decoder_depth));
  Mat<T> x = std::move(dec_in);
  for (int i = 0; i < cfg_.decoder_depth; ++i) {
    const BlockParamViews<T> pv =
        make_block_views(params_, dec_blocks_[static_cast<size_t>(i)],
                         cfg_.heads);
    x = block_forward(std::move(x), pv,
                      fc.dec_stack.blocks[static_cast<size_t>(i)], nullptr);
  }
  if (cfg_.decoder_depth > 0) {
    fc.dec_stack.prenorm = std::move(x);
    fc.dfeat = Mat<T>(n_lattice, wd);
    layernorm_forward(fc.dec_stack.prenorm, view(dec_norm_g_),
                      view(dec_norm_b_), fc.dfeat, fc.dec_stack.norm);
  } else {
    fc.dfeat = std::move(x);
  }

  std::vector<Mat<T>> preds;
  for (size_t si = 0; si < source_ids.size(); ++si) {
    const int id = source_ids[si];
    const MatView<const T> hw = view(head_w_[static_cast<size_t>(id)]);
    const MatView<const T> hb = view(head_b_[static_cast<size_t>(id)]);
    Mat<T> feats(static_cast<int64_t>(t) * p, wd);
    for (int ti = 0; ti < t; ++ti) {
      const int64_t flat0 =
          (static_cast<int64_t>(ti) * s + static_cast<int64_t>(si)) * p;
      std::copy(fc.dfeat.row(flat0), fc.dfeat.row(flat0) + p * wd,
                feats.row(static_cast<int64_t>(ti) * p));
    }
    Mat<T> pred(feats.rows, hw.cols);
    bias_fill(pred, hb);
    gemm(false, false, feats.rows, hw.cols, wd, T(1), feats.data(), wd, hw.p,
         hw.cols, T(1), pred.data(), hw.cols);
    preds.push_back(std::move(pred));
  }
  return preds;
}

template <typename T>
ForwardResult<T> MaeModel<T>::forward(const PreparedSample<T>& sample,
                                      ForwardCache<T>* cache) const {
  const int t = sample.t;
  const int s = static_cast<int>(sample.source_ids.size());
  const int p = cfg_.tokens_per_image();
  const Mask& mask = sample.mask;
  if (mask.t != t || mask.s != s || mask.p != p)
    throw std::invalid_argument("mask dims inconsistent with sample");

  ForwardCache<T> local;
  ForwardCache<T>& fc = cache ? *cache : local;
  fc.enc = compose_for_sample(sample);

  const int64_t n_lattice = mask.size();
  const int64_t n_vis = n_lattice - mask.masked_count;
  if (n_vis == 0) throw data_error("no visible tokens");
  fc.vis.clear();
  fc.vis.reserve(static_cast<size_t>(n_vis));
  fc.vis_by_source.assign(static_cast<size_t>(s), {});
  for (int64_t i = 0; i < n_lattice; ++i) {
    if (mask.lattice[static_cast<size_t>(i)]) continue;
    const int64_t si = (i / p) % s;
    const int64_t ti = i / (static_cast<int64_t>(s) * p);
    const int64_t local_row = ti * p + (i % p);
    fc.vis_by_source[static_cast<size_t>(si)].emplace_back(
        static_cast<int64_t>(fc.vis.size()), local_row);
    fc.vis.push_back(i);
  }

  // Tokenize only the visible patches, one gemm per source.
  const int64_t w = cfg_.width;
  Mat<T> tokens(n_vis, w);
  fc.vis_patches.assign(static_cast<size_t>(s), Mat<T>());
  for (int si = 0; si < s; ++si) {
    const auto& pairs = fc.vis_by_source[static_cast<size_t>(si)];
    if (pairs.empty()) continue;
    const Mat<T>& patches = *sample.patches[static_cast<size_t>(si)];
    Mat<T>& gathered = fc.vis_patches[static_cast<size_t>(si)];
    gathered = Mat<T>(static_cast<int64_t>(pairs.size()), patches.cols);
    for (size_t r = 0; r < pairs.size(); ++r)
      std::copy(patches.row(pairs[r].second),
                patches.row(pairs[r].second) + patches.cols,
                gathered.row(static_cast<int64_t>(r)));
    const int id = sample.source_ids[static_cast<size_t>(si)];
    const MatView<const T> tw = view(tok_w_[static_cast<size_t>(id)]);
    const MatView<const T> tb = view(tok_b_[static_cast<size_t>(id)]);
    const Mat<T> tok = embed_patches<T>(
        gathered, tw, std::span<const T>(tb.p, static_cast<size_t>(w)));
    for (size_t r = 0; r < pairs.size(); ++r)
      std::copy(tok.row(static_cast<int64_t>(r)),
                tok.row(static_cast<int64_t>(r)) + w,
                tokens.row(pairs[r].first));
  }

  Mat<T> vis_enc(n_vis, w);
  for (int64_t j = 0; j < n_vis; ++j)
    std::copy(fc.enc.row(fc.vis[static_cast<size_t>(j)]),
              fc.enc.row(fc.vis[static_cast<size_t>(j)]) + w, vis_enc.row(j));

  for (size_t i = 0; i < tokens.v.size(); ++i) tokens.v[i] += vis_enc.v[i];
  fc.encoder_flops = 0;
  fc.latents = run_encoder(std::move(tokens), fc.enc_stack, &fc.encoder_flops);

  fc.predictions = decode(fc.latents, mask, fc.enc, sample.source_ids, &fc);

  // Targets and per-source losses.
  ForwardResult<T> result;
  result.encoder_flops = fc.encoder_flops;
  fc.targets.clear();
  fc.masked_rows.assign(static_cast<size_t>(s), {});
  fc.masked_per_source.assign(static_cast<size_t>(s), 0);
  int sources_with_loss = 0;
  for (int si = 0; si < s; ++si) {
    fc.targets.push_back(patch_target(*sample.patches[static_cast<size_t>(si)],
                                      cfg_.norm_pix,
                                      static_cast<int64_t>(t) * p));
    auto& rows = fc.masked_rows[static_cast<size_t>(si)];
    rows.assign(static_cast<size_t>(t) * static_cast<size_t>(p), 0);
    int64_t count = 0;
    for (int ti = 0; ti < t; ++ti)
      for (int pi = 0; pi < p; ++pi)
        if (mask.at(ti, si, pi)) {
          rows[static_cast<size_t>(ti) * static_cast<size_t>(p) +
               static_cast<size_t>(pi)] = 1;
          ++count;
        }
    fc.masked_per_source[static_cast<size_t>(si)] = count;
    if (count > 0) ++sources_with_loss;
  }
  result.source_losses.assign(static_cast<size_t>(s), T(0));
  for (int si = 0; si < s; ++si) {
    if (fc.masked_per_source[static_cast<size_t>(si)] == 0) continue;
    const T l = masked_mse(fc.predictions[static_cast<size_t>(si)],
                           fc.targets[static_cast<size_t>(si)],
                           fc.masked_rows[static_cast<size_t>(si)]);
    result.source_losses[static_cast<size_t>(si)] = l;
    result.loss += l;
  }
  if (sources_with_loss > 0) result.loss /= static_cast<T>(sources_with_loss);
  return result;
}

template <typename T>
void MaeModel<T>::backward(const PreparedSample<T>& sample,
                           const ForwardCache<T>& fc,
                           ParamStore<T>& grads) const {
  const int t = sample.t;
  const int s = static_cast<int>(sample.source_ids.size());
  const int p = cfg_.tokens_per_image();
  const int64_t w = cfg_.width;
  const int64_t wd = cfg_.decoder_width;
  const int64_t n_lattice = sample.mask.size();
  const int64_t n_vis = static_cast<int64_t>(fc.vis.size());

  int sources_with_loss = 0;
  for (int si = 0; si < s; ++si)
    if (fc.masked_per_source[static_cast<size_t>(si)] > 0) ++sources_with_loss;
  if (sources_with_loss == 0) return;

  // Loss -> decoder features through the per-source heads.
  Mat<T> d_dfeat(n_lattice, wd);
  for (int si = 0; si < s; ++si) {
    const int64_t masked = fc.masked_per_source[static_cast<size_t>(si)];
    if (masked == 0) continue;
    const Mat<T>& pred = fc.predictions[static_cast<size_t>(si)];
    const Mat<T>& target = fc.targets[static_cast<size_t>(si)];
    const auto& rows = fc.masked_rows[static_cast<size_t>(si)];
    const T alpha = T(2) / (static_cast<T>(pred.cols) * static_cast<T>(masked) *
                            static_cast<T>(sources_with_loss));
    Mat<T> dpred(pred.rows, pred.cols);
    for (int64_t r = 0; r < pred.rows; ++r) {
      if (!rows[static_cast<size_t>(r)]) continue;
      const T* pr = pred.row(r);
      const T* tr = target.row(r);
      T* dr = dpred.row(r);
      for (int64_t c = 0; c < pred.cols; ++c) dr[c] = alpha * (pr[c] - tr[c]);
    }

    const int id = sample.source_ids[static_cast<size_t>(si)];
    const MatView<const T> hw = view(head_w_[static_cast<size_t>(id)]);
    // Re-gather this source's decoder features (cheaper than caching them).
    Mat<T> feats(static_cast<int64_t>(t) * p, wd);
    for (int ti = 0; ti < t; ++ti) {
      const int64_t flat0 = (static_cast<int64_t>(ti) * s + si) * p;
      std::copy(fc.dfeat.row(flat0), fc.dfeat.row(flat0) + p * wd,
                feats.row(static_cast<int64_t>(ti) * p));
    }
    gemm(true, false, wd, hw.cols, feats.rows, T(1), feats.data(), wd,
         dpred.data(), hw.cols, T(1),
         grads.mat(head_w_[static_cast<size_t>(id)]).p, hw.cols);
    colsum_add(dpred, grads.mat(head_b_[static_cast<size_t>(id)]));

    Mat<T> dfeats(feats.rows, wd);
    gemm(false, true, feats.rows, wd, hw.cols, T(1), dpred.data(), hw.cols,
         hw.p, hw.cols, T(0), dfeats.data(), wd);
    for (int ti = 0; ti < t; ++ti) {
      const int64_t flat0 = (static_cast<int64_t>(ti) * s + si) * p;
      const T* src = dfeats.row(static_cast<int64_t>(ti) * p);
      T* dst = d_dfeat.row(flat0);
      for (int64_t c = 0; c < static_cast<int64_t>(p) * wd; ++c)
        dst[c] += src[c];
    }
  }

  // Decoder stack backward.
  Mat<T> d_dec;
  if (cfg_.decoder_depth > 0) {
    d_dec = layernorm_backward(d_dfeat, fc.dec_stack.prenorm,
                               view(dec_norm_g_), fc.dec_stack.norm,
                               grads.mat(dec_norm_g_), grads.mat(dec_norm_b_));
  } else {
    d_dec = std::move(d_dfeat);
  }
  for (int i = cfg_.decoder_depth - 1; i >= 0; --i) {
    const BlockParamViews<T> pv =
        make_block_views(params_, dec_blocks_[static_cast<size_t>(i)],
                         cfg_.heads);
    BlockGradViews<T> gv =
        make_block_grad_views(grads, dec_blocks_[static_cast<size_t>(i)]);
    d_dec = block_backward(d_dec, pv,
                           fc.dec_stack.blocks[static_cast<size_t>(i)], gv);
  }

  // Split the decoder-input gradient into mask-token, visible-latent and
  // projected-encoding parts.
  MatView<T> g_token = grads.mat(mask_token_);
  Mat<T> d_lat_proj(n_vis, wd);
  {
    int64_t j = 0;
    for (int64_t i = 0; i < n_lattice; ++i) {
      const T* row = d_dec.row(i);
      if (sample.mask.lattice[static_cast<size_t>(i)]) {
        for (int64_t c = 0; c < wd; ++c) g_token.p[c] += row[c];
      } else {
        std::copy(row, row + wd, d_lat_proj.row(j));
        ++j;
      }
    }
  }
  gemm(true, false, w, wd, n_lattice, T(1), fc.enc.data(), w, d_dec.data(), wd,
       T(1), grads.mat(encproj_w_).p, wd);
  colsum_add(d_dec, grads.mat(encproj_b_));
  Mat<T> d_enc(n_lattice, w);
  gemm(false, true, n_lattice, w, wd, T(1), d_dec.data(), wd,
       view(encproj_w_).p, wd, T(0), d_enc.data(), w);

  // Latent projection backward.
  gemm(true, false, w, wd, n_vis, T(1), fc.latents.data(), w,
       d_lat_proj.data(), wd, T(1), grads.mat(dec_embed_w_).p, wd);
  colsum_add(d_lat_proj, grads.mat(dec_embed_b_));
  Mat<T> d_latents(n_vis, w);
  gemm(false, true, n_vis, w, wd, T(1), d_lat_proj.data(), wd,
       view(dec_embed_w_).p, wd, T(0), d_latents.data(), w);

  // Encoder stack backward.
  Mat<T> d_x;
  if (cfg_.encoder_depth > 0) {
    d_x = layernorm_backward(d_latents, fc.enc_stack.prenorm,
                             view(enc_norm_g_), fc.enc_stack.norm,
                             grads.mat(enc_norm_g_), grads.mat(enc_norm_b_));
  } else {
    d_x = std::move(d_latents);
  }
  for (int i = cfg_.encoder_depth - 1; i >= 0; --i) {
    const BlockParamViews<T> pv =
        make_block_views(params_, enc_blocks_[static_cast<size_t>(i)],
                         cfg_.heads);
    BlockGradViews<T> gv =
        make_block_grad_views(grads, enc_blocks_[static_cast<size_t>(i)]);
    d_x = block_backward(d_x, pv, fc.enc_stack.blocks[static_cast<size_t>(i)],
                         gv);
  }

  // d_x feeds both the tokens (tokenizer weights) and the added encodings.
  for (int64_t j = 0; j < n_vis; ++j) {
    const T* src = d_x.row(j);
    T* dst = d_enc.row(fc.vis[static_cast<size_t>(j)]);
    for (int64_t c = 0; c < w; ++c) dst[c] += src[c];
  }
  for (int si = 0; si < s; ++si) {
    const auto& pairs = fc.vis_by_source[static_cast<size_t>(si)];
    if (pairs.empty()) continue;
    Mat<T> d_tok(static_cast<int64_t>(pairs.size()), w);
    for (size_t r = 0; r < pairs.size(); ++r)
      std::copy(d_x.row(pairs[r].first), d_x.row(pairs[r].first) + w,
                d_tok.row(static_cast<int64_t>(r)));
    const int id = sample.source_ids[static_cast<size_t>(si)];
    const Mat<T>& gathered = fc.vis_patches[static_cast<size_t>(si)];
    gemm(true, false, gathered.cols, w, gathered.rows, T(1), gathered.data(),
         gathered.cols, d_tok.data(), w, T(1),
         grads.mat(tok_w_[static_cast<size_t>(id)]).p, w);
    colsum_add(d_tok, grads.mat(tok_b_[static_cast<size_t>(id)]));
  }

  // Composite-encoding gradient -> source and time tables (the positional
  // slice is a fixed function and absorbs nothing).
  const int64_t dpos = cfg_.pos_dim();
  MatView<T> g_src = grads.mat(src_table_);
  Mat<T> d_time(t, kTimeEmbedDim);
  for (int64_t i = 0; i < n_lattice; ++i) {
    const int64_t si = (i / p) % s;
    const int64_t ti = i / (static_cast<int64_t>(s) * p);
    const T* row = d_enc.row(i);
    T* srow = g_src.row(sample.source_ids[static_cast<size_t>(si)]);
    for (int64_t c = 0; c < kSourceEmbedDim; ++c) srow[c] += row[dpos + c];
    T* trow = d_time.row(ti);
    for (int64_t c = 0; c < kTimeEmbedDim; ++c)
      trow[c] += row[dpos + kSourceEmbedDim + c];
  }
  const int tables[4] = {time_year_, time_month_, time_day_, time_hour_};
  for (int ti = 0; ti < t; ++ti) {
    for (int comp = 0; comp < 4; ++comp) {
      MatView<T> tbl = grads.mat(tables[comp]);
      T* dst = tbl.row(
          sample.time_idx[static_cast<size_t>(ti)][static_cast<size_t>(comp)]);
      const T* src = d_time.row(ti) + comp * kTimeComponentDim;
      for (int c = 0; c < kTimeComponentDim; ++c) dst[c] += src[c];
    }
  }
}

// ---------------------------------------------------------------------------
// Batch wrapper and gradient check
// ---------------------------------------------------------------------------

template <typename T>
BatchLoss<T> forward_loss(const MaeModel<T>& model,
                          std::span<const Region* const> batch,
                          std::span<const std::string> source_names,
                          const MaskSpec& mask_spec, uint64_t seed,
                          bool train_mode, double dropout_prob) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  BatchLoss<T> out;
  for (size_t i = 0; i < batch.size(); ++i) {
    const PreparedSample<T> sample =
        model.prepare(*batch[i], source_names, mask_spec,
                      key_mix({seed, static_cast<uint64_t>(i)}), train_mode,
                      dropout_prob);
    ForwardCache<T> cache;
    out.samples.push_back(model.forward(sample, &cache));
    out.loss += out.samples.back().loss;
  }
  out.loss /= static_cast<T>(batch.size());
  return out;
}

GradCheckResult grad_check(MaeModel<double>& model,
                           std::span<const PreparedSample<double>> batch,
                           double eps, int64_t min_params, uint64_t seed) {
  if (eps <= 0.0) throw std::invalid_argument("eps must be > 0");
  if (batch.empty()) throw std::invalid_argument("empty batch");

  const auto loss_of = [&]() {
    double total = 0.0;
    for (const PreparedSample<double>& s : batch) {
      total += model.forward(s, nullptr).loss;
    }
    return total / static_cast<double>(batch.size());
  };

  ParamStore<double> grads(model.layout());
  for (const PreparedSample<double>& s : batch) {
    ForwardCache<double> cache;
    model.forward(s, &cache);
    model.backward(s, cache, grads);
  }
  for (double& g : grads.data) g /= static_cast<double>(batch.size());

  // At least two scalars per tensor, then uniform extras up to min_params.
  SplitMix64 rng(key_mix({seed, fnv1a64("gradcheck")}));
  std::vector<size_t> picks;
  const auto& tensors = model.layout().tensors();
  for (size_t i = 0; i < tensors.size(); ++i) {
    const size_t size = static_cast<size_t>(tensors[i].size());
    const size_t base = model.layout().offset(i);
    for (size_t j = 0; j < 2 && j < size; ++j)
      picks.push_back(base + static_cast<size_t>(rng.next_below(size)));
  }
  while (static_cast<int64_t>(picks.size()) < min_params)
    picks.push_back(static_cast<size_t>(
        rng.next_below(static_cast<uint64_t>(model.layout().total()))));

  GradCheckResult result;
  result.checked = static_cast<int64_t>(picks.size());
  std::vector<double>& theta = model.params().data;
  for (const size_t idx : picks) {
    const double saved = theta[idx];
    theta[idx] = saved + eps;
    const double f_plus = loss_of();
    theta[idx] = saved - eps;
    const double f_minus = loss_of();
    theta[idx] = saved;
    const double g_num = (f_plus - f_minus) / (2.0 * eps);
    const double g_ana = grads.data[idx];
    const double rel = std::abs(g_ana - g_num) /
                       std::max({std::abs(g_ana), std::abs(g_num), 1e-8});
    result.max_rel_err = std::max(result.max_rel_err, rel);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Explicit instantiations
// ---------------------------------------------------------------------------

template Mat<float> patch_target<float>(const Mat<float>&, bool, int64_t);
template Mat<double> patch_target<double>(const Mat<double>&, bool, int64_t);
template float masked_mse<float>(const Mat<float>&, const Mat<float>&,
                                 std::span<const uint8_t>);
template double masked_mse<double>(const Mat<double>&, const Mat<double>&,
                                   std::span<const uint8_t>);
template void unpatchify<float>(const Mat<float>&, int, int, int,
                                std::vector<float>&);
template void unpatchify<double>(const Mat<double>&, int, int, int,
                                 std::vector<double>&);
template class MaeModel<float>;
template class MaeModel<double>;
template BatchLoss<float> forward_loss<float>(const MaeModel<float>&,
                                              std::span<const Region* const>,
                                              std::span<const std::string>,
                                              const MaskSpec&, uint64_t, bool,
                                              double);
template BatchLoss<double> forward_loss<double>(const MaeModel<double>&,
                                                std::span<const Region* const>,
                                                std::span<const std::string>,
                                                const MaskSpec&, uint64_t,
                                                bool, double);

}  // namespace evmae
