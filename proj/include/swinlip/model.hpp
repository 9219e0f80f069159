#pragma once

#include "swinlip/config.hpp"
#include "swinlip/params.hpp"
#include "swinlip/resnet.hpp"
#include "swinlip/stem.hpp"
#include "swinlip/swin.hpp"
#include "swinlip/temporal.hpp"

namespace swinlip {

inline ParamLayout model_layout(const ModelConfig& cfg) {
  LayoutBuilder b;
  if (cfg.is_swin()) {
    stem_layout(b, cfg.stem, 1, "stem");
    swin_layout(b, cfg);
    temporal_layout(b, cfg.temporal);
  } else {
    resnet_layout(b, cfg);
  }
  return b.take();
}

/// A configured encoder and its parameters.
template <class T>
struct Model {
  ModelConfig config;
  ParamStore<T> params;

  /// Per-frame embeddings before the temporal module, [T, 512].
  Tensor<T> spatial_features(const Tensor<T>& clip, const RunOptions& run = {}) const {
    return spatial_features(clip, params, run);
  }

  Tensor<T> spatial_features(const Tensor<T>& clip, const ParamStore<T>& ps,
                             const RunOptions& run) const {
    check_clip(clip);
    if (!config.is_swin()) return resnet_forward(clip, config, ps, run);
    return spatial_forward(stem_forward(clip, config.stem, ps, run), config, ps, run);
  }

  /// Clip [T,H,W,1] -> encoder features [T, 512].
  Tensor<T> forward(const Tensor<T>& clip, const RunOptions& run = {}) const {
    return forward(clip, params, run);
  }

  // Same, with an alternative store of matching layout (e.g. one attached to
  // a tape).
  Tensor<T> forward(const Tensor<T>& clip, const ParamStore<T>& ps,
                    const RunOptions& run) const {
    Tensor<T> g = spatial_features(clip, ps, run);
    if (!config.is_swin()) return g;
    return temporal_forward(g, config.temporal, ps, run);
  }

  Tensor<T> forward(const Clip<T>& clip, const RunOptions& run = {}) const {
    return forward(clip.pixels(), run);
  }

  void check_clip(const Tensor<T>& clip) const {
    if (clip.rank() != 4 || clip.dim(3) != 1)
      throw DimensionError("a clip must be T x H x W x 1, got " + to_string(clip.shape()));
    if (!config.is_swin()) return;
    ModelConfig c = config;
    c.input = {clip.dim(0), clip.dim(1), clip.dim(2)};
    c.validate();
  }
};

/// Deterministic initialization from cfg.seed.
template <class T>
Model<T> build(const ModelConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  Model<T> m{cfg, initialize<T>(model_layout(cfg), rng)};
  m.params.set_config_hash(cfg.hash());
  return m;
}

template <class T>
Model<T> build(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  Model<T> m{cfg, initialize<T>(model_layout(cfg), rng)};
  m.params.set_config_hash(cfg.hash());
  return m;
}

}  // namespace swinlip
