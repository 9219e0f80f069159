#pragma once

#include <cmath>
#include <string>
#include <thread>
#include <vector>

#include "swinlip/config.hpp"
#include "swinlip/ops.hpp"
#include "swinlip/params.hpp"
#include "swinlip/stem.hpp"

namespace swinlip {

// Per-frame hierarchical windowed-attention encoder. Feature maps are
// [T, h, w, C]; frames never interact.

constexpr double kShiftMaskValue = -1e4;

/// Non-overlapping P x P patches, flattened and projected: [T,H,W,C] -> [T,H/P,W/P,E].
template <class T>
Tensor<T> patch_partition_embed(const Tensor<T>& fx, std::size_t patch,
                                const ParamStore<T>& ps, const std::string& prefix) {
  if (fx.rank() != 4) throw DimensionError("patch embedding expects [T,H,W,C]");
  const std::size_t t = fx.dim(0), H = fx.dim(1), W = fx.dim(2), c = fx.dim(3);
  if (patch == 0 || H % patch != 0 || W % patch != 0)
    throw ConfigError("feature map " + std::to_string(H) + "x" + std::to_string(W) +
                      " is not divisible by patch size " + std::to_string(patch));
  const std::size_t h = H / patch, w = W / patch;
  Tensor<T> x = reshape(fx, {t, h, patch, w, patch, c});
  x = permute(x, {0, 1, 3, 2, 4, 5});
  x = reshape(x, {t, h, w, patch * patch * c});
  return linear(x, ps.get(prefix + ".weight"), &ps.get(prefix + ".bias"));
}

/// [T,h,w,C] -> [T*nW, M*M, C], windows in row-major grid order per frame.
template <class T>
Tensor<T> window_partition(const Tensor<T>& x, std::size_t window) {
  if (x.rank() != 4) throw DimensionError("window_partition expects [T,h,w,C]");
  const std::size_t t = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  if (window == 0 || h % window != 0 || w % window != 0)
    throw ConfigError("window " + std::to_string(window) + " does not divide the " +
                      std::to_string(h) + "x" + std::to_string(w) + " grid");
  Tensor<T> y = reshape(x, {t, h / window, window, w / window, window, c});
  y = permute(y, {0, 1, 3, 2, 4, 5});
  return reshape(y, {t * (h / window) * (w / window), window * window, c});
}

template <class T>
Tensor<T> window_reverse(const Tensor<T>& windows, std::size_t window, std::size_t frames,
                         std::size_t h, std::size_t w) {
  if (window == 0 || h % window != 0 || w % window != 0)
    throw ConfigError("window " + std::to_string(window) + " does not divide the " +
                      std::to_string(h) + "x" + std::to_string(w) + " grid");
  const std::size_t c = windows.dim(windows.rank() - 1);
  if (windows.size() != frames * h * w * c)
    throw DimensionError("window_reverse: " + to_string(windows.shape()) +
                         " does not hold " + std::to_string(frames) + " frames of " +
                         std::to_string(h) + "x" + std::to_string(w));
  Tensor<T> y = reshape(windows, {frames, h / window, w / window, window, window, c});
  y = permute(y, {0, 1, 3, 2, 4, 5});
  return reshape(y, {frames, h, w, c});
}

// Toroidal roll of the grid by (-s, -s); cyclic_unshift undoes it.
template <class T>
Tensor<T> cyclic_shift(const Tensor<T>& x, std::size_t s) {
  return roll(roll(x, 1, -long(s)), 2, -long(s));
}

template <class T>
Tensor<T> cyclic_unshift(const Tensor<T>& x, std::size_t s) {
  return roll(roll(x, 1, long(s)), 2, long(s));
}

/// Additive mask [nW, M*M, M*M] for attention over the shifted grid: 0 within
/// a region, -1e4 between tokens that came from different pre-shift regions.
template <class T>
Tensor<T> build_shift_mask(std::size_t h, std::size_t w, std::size_t window,
                           std::size_t shift) {
  if (window == 0 || h % window != 0 || w % window != 0)
    throw ConfigError("window does not divide the grid");
  if (shift >= window) throw ConfigError("shift must be smaller than the window");
  const std::size_t n = window * window;
  const std::size_t nw = (h / window) * (w / window);
  std::vector<T> mask(nw * n * n, T(0));
  if (shift == 0) return Tensor<T>({nw, n, n}, std::move(mask));
  // Region label per axis: [0, L-M), [L-M, L-s), [L-s, L).
  auto region = [&](std::size_t i, std::size_t len) -> int {
    if (i < len - window) return 0;
    return i < len - shift ? 1 : 2;
  };
  std::vector<int> label(h * w);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) label[i * w + j] = region(i, h) * 3 + region(j, w);
  for (std::size_t wi = 0; wi < h / window; ++wi)
    for (std::size_t wj = 0; wj < w / window; ++wj) {
      const std::size_t win = wi * (w / window) + wj;
      for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = 0; b < n; ++b) {
          const int la = label[(wi * window + a / window) * w + wj * window + a % window];
          const int lb = label[(wi * window + b / window) * w + wj * window + b % window];
          if (la != lb) mask[(win * n + a) * n + b] = T(kShiftMaskValue);
        }
    }
  return Tensor<T>({nw, n, n}, std::move(mask));
}

/// Index into the (2M-1)^2 bias table for every (query, key) pair of a
/// window, row-major over M*M x M*M.
inline std::vector<std::size_t> relative_position_index(std::size_t window) {
  const std::size_t n = window * window;
  std::vector<std::size_t> idx(n * n);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t dy = a / window + window - 1 - b / window;
      const std::size_t dx = a % window + window - 1 - b % window;
      idx[a * n + b] = dy * (2 * window - 1) + dx;
    }
  return idx;
}

/// Relative position bias [heads, M*M, M*M] looked up from the learnable table.
template <class T>
Tensor<T> relative_position_bias(const Tensor<T>& table, std::size_t window) {
  const std::size_t n = window * window;
  const std::size_t heads = table.dim(1);
  if (table.dim(0) != (2 * window - 1) * (2 * window - 1))
    throw DimensionError("relative position table " + to_string(table.shape()) +
                         " does not match window " + std::to_string(window));
  Tensor<T> b = gather_rows(table, relative_position_index(window));
  b = permute(b, {1, 0});
  return reshape(b, {heads, n, n});
}

/// Multi-head self-attention inside windows: zw[B, N, C] with B a multiple of
/// the window count of `mask` (when given).
template <class T>
Tensor<T> window_mhsa(const Tensor<T>& zw, std::size_t heads, std::size_t window,
                      const ParamStore<T>& ps, const std::string& prefix,
                      const std::type_identity_t<Tensor<T>>* mask = nullptr) {
  if (zw.rank() != 3) throw DimensionError("window_mhsa expects [B, N, C]");
  const std::size_t B = zw.dim(0), n = zw.dim(1), c = zw.dim(2);
  if (n != window * window)
    throw DimensionError("window_mhsa: " + std::to_string(n) + " tokens for window " +
                         std::to_string(window));
  if (heads == 0 || c % heads != 0)
    throw DimensionError("window_mhsa: channels not divisible by heads");
  const std::size_t d = c / heads;
  if (mask && (mask->rank() != 3 || mask->dim(1) != n || mask->dim(2) != n ||
               B % mask->dim(0) != 0))
    throw DimensionError("window_mhsa: mask " + to_string(mask->shape()) +
                         " does not fit " + std::to_string(B) + " windows of " +
                         std::to_string(n) + " tokens");

  Tensor<T> qkv = linear(zw, ps.get(prefix + ".qkv.weight"), &ps.get(prefix + ".qkv.bias"));
  qkv = permute(reshape(qkv, {B, n, 3, heads, d}), {2, 0, 3, 1, 4});
  Tensor<T> q = reshape(slice_axis(qkv, 0, 0, 1), {B, heads, n, d});
  Tensor<T> k = reshape(slice_axis(qkv, 0, 1, 1), {B, heads, n, d});
  Tensor<T> v = reshape(slice_axis(qkv, 0, 2, 1), {B, heads, n, d});

  Tensor<T> scores = matmul(scale(q, T(1) / std::sqrt(T(d))), transpose_last2(k));
  scores = add(scores, relative_position_bias(ps.get(prefix + ".rel_pos_table"), window));
  if (mask) {
    const std::size_t nw = mask->dim(0);
    scores = reshape(scores, {B / nw, nw, heads, n, n});
    scores = add(scores, reshape(*mask, {nw, 1, n, n}));
    scores = reshape(scores, {B, heads, n, n});
  }
  Tensor<T> attn = softmax(scores, -1);
  Tensor<T> out = matmul(attn, v);
  out = reshape(permute(out, {0, 2, 1, 3}), {B, n, c});
  return linear(out, ps.get(prefix + ".proj.weight"), &ps.get(prefix + ".proj.bias"));
}

inline void swin_block_layout(LayoutBuilder& b, const std::string& prefix,
                              const StageSpec& s, std::size_t mlp_ratio) {
  const std::size_t c = s.channels;
  b.layer_norm(prefix + ".norm1", c);
  b.linear(prefix + ".attn.qkv", c, 3 * c);
  b.tensor(prefix + ".attn.rel_pos_table",
           {(2 * s.window - 1) * (2 * s.window - 1), s.heads}, InitKind::trunc_normal, 0.02);
  b.linear(prefix + ".attn.proj", c, c);
  b.layer_norm(prefix + ".norm2", c);
  b.linear(prefix + ".mlp.fc1", c, mlp_ratio * c);
  b.linear(prefix + ".mlp.fc2", mlp_ratio * c, c);
}

/// One block: z + attn(LN(z)), then + MLP(LN(.)). With shift > 0 the
/// attention runs on the cyclically shifted grid under `mask`.
template <class T>
Tensor<T> swin_block(const Tensor<T>& z, const StageSpec& spec, std::size_t shift,
                     const std::type_identity_t<Tensor<T>>* mask, const ParamStore<T>& ps,
                     const std::string& prefix, const RunOptions& run,
                     double dropout = 0.0) {
  const std::size_t t = z.dim(0), h = z.dim(1), w = z.dim(2);
  Tensor<T> y = layer_norm(z, ps.get(prefix + ".norm1.weight"), ps.get(prefix + ".norm1.bias"));
  if (shift) y = cyclic_shift(y, shift);
  y = window_partition(y, spec.window);
  y = window_mhsa(y, spec.heads, spec.window, ps, prefix + ".attn", shift ? mask : nullptr);
  y = window_reverse(y, spec.window, t, h, w);
  if (shift) y = cyclic_unshift(y, shift);
  Tensor<T> x = add(z, dropout > 0 ? swinlip::dropout(y, dropout, run.rng, run.training) : y);

  y = layer_norm(x, ps.get(prefix + ".norm2.weight"), ps.get(prefix + ".norm2.bias"));
  y = linear(y, ps.get(prefix + ".mlp.fc1.weight"), &ps.get(prefix + ".mlp.fc1.bias"));
  y = gelu(y);
  y = swinlip::dropout(y, dropout, run.rng, run.training);
  y = linear(y, ps.get(prefix + ".mlp.fc2.weight"), &ps.get(prefix + ".mlp.fc2.bias"));
  y = swinlip::dropout(y, dropout, run.rng, run.training);
  return add(x, y);
}

/// W-MHSA block followed by SW-MHSA block.
template <class T>
Tensor<T> swin_block_pair(const Tensor<T>& z, const StageSpec& spec, std::size_t shift,
                          const ParamStore<T>& ps, const std::string& first,
                          const std::string& second, const RunOptions& run,
                          double dropout = 0.0) {
  const Tensor<T> mask = build_shift_mask<T>(z.dim(1), z.dim(2), spec.window, shift);
  Tensor<T> y = swin_block(z, spec, 0, nullptr, ps, first, run, dropout);
  return swin_block(y, spec, shift, &mask, ps, second, run, dropout);
}

/// 2x2 neighbourhood concat -> LN -> bias-free 4C -> 2C projection.
template <class T>
Tensor<T> patch_merge(const Tensor<T>& z, const ParamStore<T>& ps, const std::string& prefix) {
  if (z.rank() != 4) throw DimensionError("patch_merge expects [T,h,w,C]");
  const std::size_t t = z.dim(0), h = z.dim(1), w = z.dim(2), c = z.dim(3);
  if (h % 2 != 0 || w % 2 != 0)
    throw ConfigError("patch_merge needs an even grid, got " + std::to_string(h) + "x" +
                      std::to_string(w));
  Tensor<T> x = reshape(z, {t, h / 2, 2, w / 2, 2, c});
  // Concat order (row, col) offsets: (0,0), (1,0), (0,1), (1,1).
  x = permute(x, {0, 1, 3, 4, 2, 5});
  x = reshape(x, {t, h / 2, w / 2, 4 * c});
  x = layer_norm(x, ps.get(prefix + ".norm.weight"), ps.get(prefix + ".norm.bias"));
  return linear(x, ps.get(prefix + ".reduction.weight"));
}

inline std::string stage_prefix(std::size_t i) { return "swin.stage" + std::to_string(i + 1); }

inline void swin_layout(LayoutBuilder& b, const ModelConfig& cfg) {
  const std::size_t in = cfg.patch * cfg.patch * cfg.stem.out_channels;
  b.linear("swin.embed.proj", in, cfg.stages.front().channels);
  for (std::size_t i = 0; i < cfg.stages.size(); ++i) {
    const auto& s = cfg.stages[i];
    for (std::size_t k = 0; k < s.depth; ++k)
      swin_block_layout(b, stage_prefix(i) + ".block" + std::to_string(k), s, cfg.mlp_ratio);
    b.layer_norm(stage_prefix(i) + ".merge.norm", 4 * s.channels);
    b.linear(stage_prefix(i) + ".merge.reduction", 4 * s.channels, 2 * s.channels, false);
  }
}

namespace detail {

template <class T>
Tensor<T> spatial_forward_serial(const Tensor<T>& fx, const ModelConfig& cfg,
                                 const ParamStore<T>& ps, const RunOptions& run) {
  Tensor<T> z = patch_partition_embed(fx, cfg.patch, ps, "swin.embed.proj");
  std::vector<StageGeometry> geom;
  {
    // Grid extents follow the actual feature map rather than cfg.input.
    std::size_t h = z.dim(1), w = z.dim(2);
    for (const auto& s : cfg.stages) {
      geom.push_back({h, w, s.window >= std::min(h, w) ? 0 : s.window / 2});
      h /= 2;
      w /= 2;
    }
  }
  for (std::size_t i = 0; i < cfg.stages.size(); ++i) {
    const auto& s = cfg.stages[i];
    const std::string pre = stage_prefix(i);
    for (std::size_t k = 0; k + 1 < s.depth; k += 2)
      z = swin_block_pair(z, s, geom[i].shift, ps, pre + ".block" + std::to_string(k),
                          pre + ".block" + std::to_string(k + 1), run, cfg.swin_dropout);
    z = patch_merge(z, ps, pre + ".merge");
  }
  // Spatial average pool to [T, C].
  const std::size_t t = z.dim(0), c = z.dim(3);
  return mean_axis(reshape(z, {t, z.dim(1) * z.dim(2), c}), 1);
}

}  // namespace detail

/// Stem features [T,H,W,C] -> per-frame embeddings [T, 2*C3].
template <class T>
Tensor<T> spatial_forward(const Tensor<T>& fx, const ModelConfig& cfg,
                          const ParamStore<T>& ps, const RunOptions& run) {
  const std::size_t t = fx.dim(0);
  bool taped = fx.on_tape();
  for (const auto& p : ps.tensors()) taped = taped || p.on_tape();
  const std::size_t workers = std::min(run.threads, t);
  if (workers <= 1 || taped || run.training)
    return detail::spatial_forward_serial(fx, cfg, ps, run);
  std::vector<Tensor<T>> parts(workers);
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t k = 0; k < workers; ++k) {
    const std::size_t lo = t * k / workers, hi = t * (k + 1) / workers;
    pool.emplace_back([&, k, lo, hi] {
      try {
        parts[k] = detail::spatial_forward_serial(slice_axis(fx, 0, lo, hi - lo), cfg, ps, run);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return concat(parts, 0);
}

}  // namespace swinlip
