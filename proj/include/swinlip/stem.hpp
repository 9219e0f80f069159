#pragma once

#include <string>

#include "swinlip/config.hpp"
#include "swinlip/conv.hpp"
#include "swinlip/ops.hpp"
#include "swinlip/params.hpp"

namespace swinlip {

/// Grayscale clip T x H x W x 1 of normalized pixel values.
template <class T>
class Clip {
 public:
  explicit Clip(Tensor<T> pixels) : pixels_(std::move(pixels)) {
    if (pixels_.rank() != 4 || pixels_.dim(3) != 1)
      throw DimensionError("a clip must be T x H x W x 1, got " +
                           to_string(pixels_.shape()));
  }

  const Tensor<T>& pixels() const { return pixels_; }
  std::size_t frames() const { return pixels_.dim(0); }
  std::size_t height() const { return pixels_.dim(1); }
  std::size_t width() const { return pixels_.dim(2); }

 private:
  Tensor<T> pixels_;
};

/// Options shared by every forward pass.
struct RunOptions {
  bool training = false;
  Rng* rng = nullptr;        // dropout masks; required when training with dropout
  std::size_t threads = 1;   // per-frame parallelism of the spatial encoder
};

inline void stem_layout(LayoutBuilder& b, const StemConfig& cfg, std::size_t in_channels,
                        const std::string& prefix = "stem") {
  const auto& k = cfg.kernel;
  b.tensor(prefix + ".conv.weight", {k[0], k[1], k[2], in_channels, cfg.out_channels},
           InitKind::trunc_normal, 0.02);
  if (cfg.conv_bias) b.tensor(prefix + ".conv.bias", {cfg.out_channels}, InitKind::zeros);
  if (cfg.batch_norm) b.batch_norm(prefix + ".bn", cfg.out_channels);
  if (cfg.activation == Activation::prelu)
    b.tensor(prefix + ".act.weight", {cfg.out_channels}, InitKind::constant, 0.25);
}

/// conv3d -> batch norm -> PReLU/ReLU. With the default preset the output keeps
/// the input's T, H and W.
template <class T>
Tensor<T> stem_forward(const Tensor<T>& clip, const StemConfig& cfg,
                       const ParamStore<T>& ps, const RunOptions& run,
                       const std::string& prefix = "stem") {
  const Tensor<T>* bias = cfg.conv_bias ? &ps.get(prefix + ".conv.bias") : nullptr;
  Tensor<T> y = conv3d(clip, ps.get(prefix + ".conv.weight"), bias, cfg.stride, cfg.pad);
  if (cfg.batch_norm)
    y = batch_norm(y, ps.get(prefix + ".bn.weight"), ps.get(prefix + ".bn.bias"),
                   ps.get(prefix + ".bn.running_mean"), ps.get(prefix + ".bn.running_var"),
                   run.training);
  return cfg.activation == Activation::prelu ? prelu(y, ps.get(prefix + ".act.weight"))
                                             : relu(y);
}

template <class T>
Tensor<T> stem_forward(const Clip<T>& clip, const StemConfig& cfg, const ParamStore<T>& ps,
                       const RunOptions& run, const std::string& prefix = "stem") {
  return stem_forward(clip.pixels(), cfg, ps, run, prefix);
}

}  // namespace swinlip
