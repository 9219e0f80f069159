#pragma once

#include <algorithm>
#include <cstdint>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "swinlip/config.hpp"
#include "swinlip/model.hpp"
#include "swinlip/params.hpp"
#include "swinlip/resnet.hpp"

namespace swinlip {

// Analytical parameter and multiply-accumulate accounting. MAC formulas:
// conv = out_elems * k_elems * Cin / groups, linear = out_elems * in_features,
// attention products counted per score and per weighted value. Norms,
// activations, softmax, pooling and residual additions cost 0 MACs.

struct CostRow {
  std::string layer;
  std::uint64_t params = 0;
  std::uint64_t macs = 0;
  Shape out_shape;
};

struct CostReport {
  std::string model;
  std::vector<CostRow> rows;
  double flops_per_mac = 1.0;
  std::uint64_t buffers = 0;  // batch-norm running statistics, not trainable
  std::vector<std::string> assumptions;

  std::uint64_t total_params() const {
    std::uint64_t n = 0;
    for (const auto& r : rows) n += r.params;
    return n;
  }
  std::uint64_t total_macs() const {
    std::uint64_t n = 0;
    for (const auto& r : rows) n += r.macs;
    return n;
  }
  double flops(const CostRow& r) const { return double(r.macs) * flops_per_mac; }
  double total_flops() const { return double(total_macs()) * flops_per_mac; }

  const CostRow* find(const std::string& layer) const {
    for (const auto& r : rows)
      if (r.layer == layer) return &r;
    return nullptr;
  }

  // Sums over rows whose name starts with prefix.
  std::uint64_t params_under(const std::string& prefix) const {
    std::uint64_t n = 0;
    for (const auto& r : rows)
      if (r.layer.rfind(prefix, 0) == 0) n += r.params;
    return n;
  }
  std::uint64_t macs_under(const std::string& prefix) const {
    std::uint64_t n = 0;
    for (const auto& r : rows)
      if (r.layer.rfind(prefix, 0) == 0) n += r.macs;
    return n;
  }

  // Rows summed by their first name component (stem, swin, temporal, ...),
  // in order of first appearance.
  std::vector<CostRow> modules() const {
    std::vector<CostRow> out;
    for (const auto& r : rows) {
      const std::string top = r.layer.substr(0, r.layer.find('.'));
      auto it = std::find_if(out.begin(), out.end(), [&](const CostRow& m) { return m.layer == top; });
      if (it == out.end()) it = out.insert(out.end(), CostRow{top, 0, 0, {}});
      it->params += r.params;
      it->macs += r.macs;
      it->out_shape = r.out_shape;
    }
    return out;
  }

  std::string convention() const {
    std::ostringstream s;
    s << "1 MAC counted as " << flops_per_mac << " FLOP";
    return s.str();
  }

  std::string totals_line() const {
    std::ostringstream s;
    s << std::fixed << std::setprecision(2) << "params ≈ " << double(total_params()) / 1e6
      << " M, MACs ≈ " << double(total_macs()) / 1e9 << " G";
    return s.str();
  }

  std::string text() const;
  std::string csv() const;
};

namespace detail {

class CostWalk {
 public:
  explicit CostWalk(CostReport& rep) : rep_(rep) {}

  void row(const std::string& layer, std::uint64_t macs, Shape out) {
    rep_.rows.push_back({layer, 0, macs, std::move(out)});
  }

  void linear(const std::string& layer, const Shape& in, std::size_t out_features) {
    Shape out = in;
    out.back() = out_features;
    row(layer, numel(out) * in.back(), out);
  }

  void norm(const std::string& layer, const Shape& s) { row(layer, 0, s); }

 private:
  CostReport& rep_;
};

inline void attribute_params(CostReport& rep, const ParamLayout& layout) {
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < rep.rows.size(); ++i) index.emplace(rep.rows[i].layer, i);
  for (const auto& spec : layout) {
    if (is_buffer_name(spec.name)) {
      rep.buffers += numel(spec.shape);
      continue;
    }
    const std::string owner = owner_of(spec.name);
    auto it = index.find(owner);
    if (it == index.end())
      throw Error("cost walk has no row for parameter '" + spec.name + "'");
    rep.rows[it->second].params += numel(spec.shape);
  }
}

inline void default_assumptions(CostReport& rep) {
  rep.assumptions.push_back(rep.convention());
  rep.assumptions.push_back(
      "norms, activations, softmax, pooling and residual additions count 0 MACs");
  rep.assumptions.push_back("batch-norm running statistics are buffers, not parameters");
}

inline Shape stem_out_shape(const StemConfig& s, const Shape& clip) {
  Shape out(4);
  for (int a = 0; a < 3; ++a)
    out[a] = conv_extent(clip[a], s.pad[a], s.pad[a], s.kernel[a], s.stride[a],
                         a == 0 ? "T" : a == 1 ? "H" : "W");
  out[3] = s.out_channels;
  return out;
}

}  // namespace detail

/// Cost of the 3-d stem on clip shape [T,H,W,Cin].
inline CostReport stem_cost(const StemConfig& s, const Shape& clip,
                            const std::string& prefix = "stem") {
  CostReport rep;
  rep.model = prefix;
  detail::CostWalk w(rep);
  const Shape out = detail::stem_out_shape(s, clip);
  const std::uint64_t k = s.kernel[0] * s.kernel[1] * s.kernel[2] * clip[3];
  w.row(prefix + ".conv", numel(out) * k, out);
  if (s.batch_norm) w.norm(prefix + ".bn", out);
  w.norm(prefix + ".act", out);
  LayoutBuilder b;
  stem_layout(b, s, clip[3], prefix);
  detail::attribute_params(rep, b.layout());
  detail::default_assumptions(rep);
  return rep;
}

/// Cost of the windowed encoder on stem features [T,H,W,C].
inline CostReport spatial_cost(const ModelConfig& cfg, const Shape& fx) {
  CostReport rep;
  rep.model = "swin";
  detail::CostWalk w(rep);
  const std::size_t t = fx[0];
  std::size_t h = fx[1] / cfg.patch, wd = fx[2] / cfg.patch;
  std::size_t c = cfg.stages.front().channels;
  w.linear("swin.embed.proj", {t, h, wd, cfg.patch * cfg.patch * fx[3]}, c);
  for (std::size_t i = 0; i < cfg.stages.size(); ++i) {
    const auto& s = cfg.stages[i];
    c = s.channels;
    const Shape grid{t, h, wd, c};
    const std::uint64_t tokens = t * h * wd, n = s.window * s.window;
    for (std::size_t k = 0; k < s.depth; ++k) {
      const std::string pre = stage_prefix(i) + ".block" + std::to_string(k);
      w.norm(pre + ".norm1", grid);
      w.linear(pre + ".attn.qkv", grid, 3 * c);
      // QK^T and AV: every token scores N keys and mixes N values over C.
      w.row(pre + ".attn", tokens * n * c * 2, grid);
      w.linear(pre + ".attn.proj", grid, c);
      w.norm(pre + ".norm2", grid);
      w.linear(pre + ".mlp.fc1", grid, cfg.mlp_ratio * c);
      w.linear(pre + ".mlp.fc2", {t, h, wd, cfg.mlp_ratio * c}, c);
    }
    h /= 2;
    wd /= 2;
    w.norm(stage_prefix(i) + ".merge.norm", {t, h, wd, 4 * c});
    w.linear(stage_prefix(i) + ".merge.reduction", {t, h, wd, 4 * c}, 2 * c);
  }
  w.norm("swin.pool", {t, 2 * c});
  LayoutBuilder b;
  swin_layout(b, cfg);
  detail::attribute_params(rep, b.layout());
  detail::default_assumptions(rep);
  const auto geom = stage_geometry(cfg);
  for (std::size_t i = 0; i < geom.size(); ++i)
    if (geom[i].shift == 0)
      rep.assumptions.push_back(stage_prefix(i) +
                                ": window covers the grid, shift clamped to 0 (cost unchanged)");
  return rep;
}

/// Cost of the temporal block stack on a [T, D] sequence.
inline CostReport temporal_cost(const TemporalBlockConfig& cfg, std::size_t frames) {
  CostReport rep;
  rep.model = "temporal";
  detail::CostWalk w(rep);
  const std::uint64_t t = frames, d = cfg.dim;
  const Shape seq{frames, cfg.dim};
  auto ffn = [&](const std::string& pre) {
    w.norm(pre + ".norm", seq);
    w.linear(pre + ".linear1", seq, cfg.ffn_hidden);
    w.linear(pre + ".linear2", {frames, cfg.ffn_hidden}, cfg.dim);
  };
  for (std::size_t i = 0; i < cfg.blocks; ++i) {
    const std::string pre = temporal_prefix(i);
    ffn(pre + ".ffn1");
    if (!cfg.streaming) {
      w.norm(pre + ".mhsa.norm", seq);
      for (const char* p : {".mhsa.q", ".mhsa.k", ".mhsa.v"}) w.linear(pre + p, seq, cfg.dim);
      w.linear(pre + ".mhsa.pos", {2 * frames - 1, cfg.dim}, cfg.dim);
      // Content scores T x T, positional scores T x (2T-1), weighted values T x T.
      w.row(pre + ".mhsa", t * d * (2 * t + 2 * t - 1), seq);
      w.linear(pre + ".mhsa.out", seq, cfg.dim);
    }
    w.norm(pre + ".conv.norm", seq);
    w.linear(pre + ".conv.pw1", seq, cfg.conv_expansion * cfg.dim);
    w.row(pre + ".conv.dw", t * d * cfg.dw_kernel, seq);
    w.linear(pre + ".conv.pw2", seq, cfg.dim);
    ffn(pre + ".ffn2");
    w.norm(pre + ".final_norm", seq);
  }
  LayoutBuilder b;
  temporal_layout(b, cfg);
  detail::attribute_params(rep, b.layout());
  detail::default_assumptions(rep);
  if (!cfg.streaming)
    rep.assumptions.push_back(
        "temporal MHSA uses relative positional attention (projection + two bias vectors)");
  return rep;
}

/// Cost of the per-frame residual trunk behind its stem.
inline CostReport resnet_cost(const ModelConfig& cfg, const Shape& clip) {
  CostReport rep;
  rep.model = to_string(cfg.kind);
  detail::CostWalk w(rep);
  Shape s = detail::stem_out_shape(cfg.stem, clip);
  const std::uint64_t k = cfg.stem.kernel[0] * cfg.stem.kernel[1] * cfg.stem.kernel[2] * clip[3];
  w.row("frontend.conv", numel(s) * k, s);
  w.norm("frontend.bn", s);
  w.norm("frontend.act", s);
  s[1] = detail::conv_extent(s[1], kPoolPad, kPoolPad, kPoolKernel, kPoolStride, "H");
  s[2] = detail::conv_extent(s[2], kPoolPad, kPoolPad, kPoolKernel, kPoolStride, "W");
  w.norm("frontend.pool", s);
  auto conv = [&](const std::string& layer, const Shape& in, std::size_t kk, std::size_t stride,
                  std::size_t pad, std::size_t cout) {
    Shape out{in[0], detail::conv_extent(in[1], pad, pad, kk, stride, "H"),
              detail::conv_extent(in[2], pad, pad, kk, stride, "W"), cout};
    w.row(layer, numel(out) * kk * kk * in[3], out);
    return out;
  };
  for (std::size_t st = 0; st < 4; ++st) {
    for (std::size_t b = 0; b < kResnetBlocks; ++b) {
      const std::string pre = resnet_block_prefix(st, b);
      const std::size_t stride = b == 0 ? resnet_stages()[st].stride : 1;
      const std::size_t cout = resnet_stages()[st].channels;
      Shape y = conv(pre + ".conv1", s, 3, stride, 1, cout);
      w.norm(pre + ".bn1", y);
      y = conv(pre + ".conv2", y, 3, 1, 1, cout);
      w.norm(pre + ".bn2", y);
      if (stride != 1 || s[3] != cout) {
        conv(pre + ".downsample.conv", s, 1, stride, 0, cout);
        w.norm(pre + ".downsample.bn", y);
      }
      s = y;
    }
  }
  w.norm("trunk.pool", {s[0], s[3]});
  LayoutBuilder b;
  resnet_layout(b, cfg);
  detail::attribute_params(rep, b.layout());
  detail::default_assumptions(rep);
  rep.assumptions.push_back(
      "baseline frontend includes a 3x3/2 max pool after the stem");
  return rep;
}

/// Concatenates rows of independently probed sub-modules.
inline CostReport merge_reports(std::string model, const std::vector<CostReport>& parts) {
  CostReport rep;
  rep.model = std::move(model);
  for (const auto& p : parts) {
    rep.rows.insert(rep.rows.end(), p.rows.begin(), p.rows.end());
    rep.buffers += p.buffers;
    for (const auto& a : p.assumptions)
      if (std::find(rep.assumptions.begin(), rep.assumptions.end(), a) == rep.assumptions.end())
        rep.assumptions.push_back(a);
  }
  return rep;
}

/// Full per-layer report of cfg at its configured input shape.
inline CostReport count_costs(const ModelConfig& cfg) {
  cfg.validate();
  const Shape clip = cfg.input.shape();
  if (!cfg.is_swin()) return resnet_cost(cfg, clip);
  const Shape fx = detail::stem_out_shape(cfg.stem, clip);
  return merge_reports(to_string(cfg.kind),
                       {stem_cost(cfg.stem, clip), spatial_cost(cfg, fx),
                        temporal_cost(cfg.temporal, fx[0])});
}

inline CostReport count_costs(const ModelConfig& cfg, const Shape& clip) {
  if (clip.size() != 4 || clip[3] != 1)
    throw ConfigError("input shape must be T x H x W x 1, got " + to_string(clip));
  ModelConfig c = cfg;
  c.input = {clip[0], clip[1], clip[2]};
  return count_costs(c);
}

inline std::uint64_t count_params(const ModelConfig& cfg) { return count_costs(cfg).total_params(); }

template <class T>
std::uint64_t count_params(const Model<T>& m) {
  return count_params(m.config);
}

inline std::uint64_t count_macs(const ModelConfig& cfg, const Shape& clip) {
  return count_costs(cfg, clip).total_macs();
}

template <class T>
std::uint64_t count_macs(const Model<T>& m, const Shape& clip) {
  return count_macs(m.config, clip);
}

/// The full encoder with only its stem kernel replaced, stride 1 and
/// same-padding, evaluated at cfg's input shape.
inline CostReport stem_variant_cost_probe(const ModelConfig& cfg, const Extent3& kernel) {
  ModelConfig c = cfg;
  c.stem.kernel = kernel;
  c.stem.stride = {1, 1, 1};
  for (int a = 0; a < 3; ++a) {
    if (kernel[a] % 2 == 0)
      throw ConfigError("stem variant kernel must be odd on every axis");
    c.stem.pad[a] = kernel[a] / 2;
  }
  return count_costs(c);
}

struct CostDelta {
  std::string layer;
  std::int64_t params = 0;  // b - a
  std::int64_t macs = 0;
  bool only_in_a = false;
  bool only_in_b = false;
};

/// Row-aligned b - a; rows follow a's order, then rows only in b.
inline std::vector<CostDelta> diff_reports(const CostReport& a, const CostReport& b) {
  std::vector<CostDelta> out;
  for (const auto& r : a.rows) {
    const CostRow* o = b.find(r.layer);
    CostDelta d{r.layer, 0, 0, o == nullptr, false};
    d.params = std::int64_t(o ? o->params : 0) - std::int64_t(r.params);
    d.macs = std::int64_t(o ? o->macs : 0) - std::int64_t(r.macs);
    out.push_back(d);
  }
  for (const auto& r : b.rows)
    if (!a.find(r.layer))
      out.push_back({r.layer, std::int64_t(r.params), std::int64_t(r.macs), false, true});
  return out;
}

inline std::string CostReport::text() const {
  std::size_t wl = 5, ws = 9;
  for (const auto& r : rows) {
    wl = std::max(wl, r.layer.size());
    ws = std::max(ws, to_string(r.out_shape).size());
  }
  std::ostringstream s;
  s << model << "\n";
  s << std::left << std::setw(int(wl)) << "layer" << "  " << std::right << std::setw(12)
    << "params" << "  " << std::setw(16) << "MACs" << "  " << std::left << "out_shape\n";
  for (const auto& r : rows)
    s << std::left << std::setw(int(wl)) << r.layer << "  " << std::right << std::setw(12)
      << r.params << "  " << std::setw(16) << r.macs << "  " << std::left
      << to_string(r.out_shape) << "\n";
  s << std::left << std::setw(int(wl)) << "total" << "  " << std::right << std::setw(12)
    << total_params() << "  " << std::setw(16) << total_macs() << "\n";
  s << "\nper module\n";
  for (const auto& m : modules())
    s << std::left << std::setw(int(wl)) << m.layer << "  " << std::right << std::setw(12)
      << m.params << "  " << std::setw(16) << m.macs << "  " << std::left
      << to_string(m.out_shape) << "\n";
  s << totals_line() << "\n";
  s << "convention: " << convention() << "\n";
  if (buffers) s << "buffers (not counted): " << buffers << "\n";
  for (const auto& a : assumptions) s << "note: " << a << "\n";
  return s.str();
}

inline std::string CostReport::csv() const {
  std::ostringstream s;
  auto shape = [](const Shape& sh) {
    std::string o;
    for (std::size_t i = 0; i < sh.size(); ++i) o += (i ? "x" : "") + std::to_string(sh[i]);
    return o;
  };
  s << "layer,params,macs,out_shape\n";
  for (const auto& r : rows)
    s << r.layer << "," << r.params << "," << r.macs << "," << shape(r.out_shape)
      << "\n";
  s << "total," << total_params() << "," << total_macs() << ",\n";
  return s.str();
}

}  // namespace swinlip
