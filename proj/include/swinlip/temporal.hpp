#pragma once

#include <cmath>
#include <string>

#include "swinlip/config.hpp"
#include "swinlip/conv.hpp"
#include "swinlip/ops.hpp"
#include "swinlip/params.hpp"
#include "swinlip/stem.hpp"

namespace swinlip {

// Convolutional attention blocks over the [T, D] frame-embedding sequence.
// Each block: half-step FFN, relative-position MHSA (absent when streaming),
// GLU/depthwise convolution module without normalization, half-step FFN, LN.

inline std::string temporal_prefix(std::size_t block) {
  return "temporal.block" + std::to_string(block);
}

inline void ffn_layout(LayoutBuilder& b, const std::string& prefix, std::size_t dim,
                       std::size_t hidden) {
  b.layer_norm(prefix + ".norm", dim);
  b.linear(prefix + ".linear1", dim, hidden);
  b.linear(prefix + ".linear2", hidden, dim);
}

inline void rel_mhsa_layout(LayoutBuilder& b, const std::string& prefix, std::size_t dim,
                            std::size_t heads) {
  b.layer_norm(prefix + ".norm", dim);
  b.linear(prefix + ".q", dim, dim);
  b.linear(prefix + ".k", dim, dim);
  b.linear(prefix + ".v", dim, dim);
  b.linear(prefix + ".pos", dim, dim, false);
  b.tensor(prefix + ".pos_bias_u", {heads, dim / heads}, InitKind::zeros);
  b.tensor(prefix + ".pos_bias_v", {heads, dim / heads}, InitKind::zeros);
  b.linear(prefix + ".out", dim, dim);
}

inline void conv_module_layout(LayoutBuilder& b, const std::string& prefix,
                               const TemporalBlockConfig& cfg) {
  b.layer_norm(prefix + ".norm", cfg.dim);
  b.linear(prefix + ".pw1", cfg.dim, cfg.conv_expansion * cfg.dim);
  b.tensor(prefix + ".dw.weight", {cfg.dw_kernel, cfg.dim}, InitKind::trunc_normal, 0.02);
  b.tensor(prefix + ".dw.bias", {cfg.dim}, InitKind::zeros);
  b.linear(prefix + ".pw2", cfg.dim, cfg.dim);
}

inline void temporal_layout(LayoutBuilder& b, const TemporalBlockConfig& cfg) {
  for (std::size_t i = 0; i < cfg.blocks; ++i) {
    const std::string pre = temporal_prefix(i);
    ffn_layout(b, pre + ".ffn1", cfg.dim, cfg.ffn_hidden);
    if (!cfg.streaming) rel_mhsa_layout(b, pre + ".mhsa", cfg.dim, cfg.heads);
    conv_module_layout(b, pre + ".conv", cfg);
    ffn_layout(b, pre + ".ffn2", cfg.dim, cfg.ffn_hidden);
    b.layer_norm(pre + ".final_norm", cfg.dim);
  }
}

/// LN -> linear -> swish -> dropout -> linear. The caller adds half of it.
template <class T>
Tensor<T> ffn_half(const Tensor<T>& y, const ParamStore<T>& ps, const std::string& prefix,
                   const RunOptions& run, double dropout_rate = 0.0) {
  Tensor<T> h = layer_norm(y, ps.get(prefix + ".norm.weight"), ps.get(prefix + ".norm.bias"));
  h = linear(h, ps.get(prefix + ".linear1.weight"), &ps.get(prefix + ".linear1.bias"));
  h = swish(h);
  h = dropout(h, dropout_rate, run.rng, run.training);
  return linear(h, ps.get(prefix + ".linear2.weight"), &ps.get(prefix + ".linear2.bias"));
}

/// Sinusoidal embeddings of relative offsets T-1, T-2, ..., -(T-1): [2T-1, D].
template <class T>
Tensor<T> relative_sinusoids(std::size_t frames, std::size_t dim) {
  const std::size_t rows = 2 * frames - 1;
  std::vector<T> pe(rows * dim);
  for (std::size_t p = 0; p < rows; ++p) {
    const double offset = double(frames) - 1.0 - double(p);
    for (std::size_t i = 0; i < dim; i += 2) {
      const double freq = std::exp(-std::log(10000.0) * double(i) / double(dim));
      pe[p * dim + i] = T(std::sin(offset * freq));
      if (i + 1 < dim) pe[p * dim + i + 1] = T(std::cos(offset * freq));
    }
  }
  return Tensor<T>({rows, dim}, std::move(pe));
}

/// LN -> multi-head attention over time with relative positional scoring:
/// score(i,j) = ((q_i + u) . k_j + (q_i + v) . W_pos r_{i-j}) / sqrt(d).
template <class T>
Tensor<T> rel_mhsa(const Tensor<T>& y, std::size_t heads, const ParamStore<T>& ps,
                   const std::string& prefix, const RunOptions& run,
                   double dropout_rate = 0.0) {
  if (y.rank() != 2) throw DimensionError("rel_mhsa expects [T, D]");
  const std::size_t t = y.dim(0), dim = y.dim(1);
  if (heads == 0 || dim % heads != 0)
    throw DimensionError("rel_mhsa: dim not divisible by heads");
  const std::size_t d = dim / heads;
  Tensor<T> x = layer_norm(y, ps.get(prefix + ".norm.weight"), ps.get(prefix + ".norm.bias"));
  auto heads_first = [&](const Tensor<T>& m, std::size_t rows) {
    return permute(reshape(m, {rows, heads, d}), {1, 0, 2});  // [H, rows, d]
  };
  Tensor<T> q = reshape(linear(x, ps.get(prefix + ".q.weight"), &ps.get(prefix + ".q.bias")),
                        {t, heads, d});
  Tensor<T> k = heads_first(
      linear(x, ps.get(prefix + ".k.weight"), &ps.get(prefix + ".k.bias")), t);
  Tensor<T> v = heads_first(
      linear(x, ps.get(prefix + ".v.weight"), &ps.get(prefix + ".v.bias")), t);
  Tensor<T> pos = heads_first(
      linear(relative_sinusoids<T>(t, dim), ps.get(prefix + ".pos.weight")), 2 * t - 1);

  Tensor<T> q_u = permute(add(q, ps.get(prefix + ".pos_bias_u")), {1, 0, 2});
  Tensor<T> q_v = permute(add(q, ps.get(prefix + ".pos_bias_v")), {1, 0, 2});
  Tensor<T> content = matmul(q_u, transpose_last2(k));                  // [H, T, T]
  Tensor<T> position = rel_shift(matmul(q_v, transpose_last2(pos)));    // [H, T, T]
  Tensor<T> scores = scale(add(content, position), T(1) / std::sqrt(T(d)));
  Tensor<T> attn = softmax(scores, -1);
  Tensor<T> out = matmul(attn, v);                                       // [H, T, d]
  out = reshape(permute(out, {1, 0, 2}), {t, dim});
  out = linear(out, ps.get(prefix + ".out.weight"), &ps.get(prefix + ".out.bias"));
  return dropout(out, dropout_rate, run.rng, run.training);
}

/// LN -> pointwise D->2D -> GLU -> depthwise conv over time -> swish ->
/// pointwise D->D -> dropout. Streaming pads only on the left (causal).
template <class T>
Tensor<T> conv_module(const Tensor<T>& y, const TemporalBlockConfig& cfg,
                      const ParamStore<T>& ps, const std::string& prefix,
                      const RunOptions& run) {
  if (cfg.dw_kernel % 2 == 0)
    throw ConfigError("depthwise kernel must be odd, got " + std::to_string(cfg.dw_kernel));
  Tensor<T> h = layer_norm(y, ps.get(prefix + ".norm.weight"), ps.get(prefix + ".norm.bias"));
  h = linear(h, ps.get(prefix + ".pw1.weight"), &ps.get(prefix + ".pw1.bias"));
  h = glu(h);
  const std::size_t k = cfg.dw_kernel;
  const std::size_t left = cfg.streaming ? k - 1 : (k - 1) / 2;
  const std::size_t right = cfg.streaming ? 0 : (k - 1) / 2;
  h = dwconv1d(h, ps.get(prefix + ".dw.weight"), &ps.get(prefix + ".dw.bias"), left, right);
  h = swish(h);
  h = linear(h, ps.get(prefix + ".pw2.weight"), &ps.get(prefix + ".pw2.bias"));
  return dropout(h, cfg.dropout, run.rng, run.training);
}

template <class T>
Tensor<T> conv_attention_block(const Tensor<T>& g, const TemporalBlockConfig& cfg,
                               const ParamStore<T>& ps, const std::string& prefix,
                               const RunOptions& run) {
  Tensor<T> y = add(g, scale(ffn_half(g, ps, prefix + ".ffn1", run, cfg.dropout), T(0.5)));
  if (!cfg.streaming)
    y = add(y, rel_mhsa(y, cfg.heads, ps, prefix + ".mhsa", run, cfg.dropout));
  y = add(y, conv_module(y, cfg, ps, prefix + ".conv", run));
  y = add(y, scale(ffn_half(y, ps, prefix + ".ffn2", run, cfg.dropout), T(0.5)));
  return layer_norm(y, ps.get(prefix + ".final_norm.weight"),
                    ps.get(prefix + ".final_norm.bias"));
}

/// g_z [T, D] -> [T, D] through every block.
template <class T>
Tensor<T> temporal_forward(const Tensor<T>& g, const TemporalBlockConfig& cfg,
                           const ParamStore<T>& ps, const RunOptions& run) {
  if (g.rank() != 2 || g.dim(1) != cfg.dim)
    throw DimensionError("temporal module expects [T, " + std::to_string(cfg.dim) +
                         "], got " + to_string(g.shape()));
  Tensor<T> y = g;
  for (std::size_t i = 0; i < cfg.blocks; ++i)
    y = conv_attention_block(y, cfg, ps, temporal_prefix(i), run);
  return y;
}

}  // namespace swinlip
