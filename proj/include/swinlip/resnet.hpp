#pragma once

#include <string>

#include "swinlip/config.hpp"
#include "swinlip/conv.hpp"
#include "swinlip/ops.hpp"
#include "swinlip/params.hpp"
#include "swinlip/stem.hpp"

namespace swinlip {

// Per-frame 18-layer residual trunk behind the conventional 3-d stem.

struct ResnetStage {
  std::size_t channels;
  std::size_t stride;
};

inline const std::array<ResnetStage, 4>& resnet_stages() {
  static const std::array<ResnetStage, 4> s{{{64, 1}, {128, 2}, {256, 2}, {512, 2}}};
  return s;
}

constexpr std::size_t kResnetBlocks = 2;
constexpr std::size_t kPoolKernel = 3, kPoolStride = 2, kPoolPad = 1;

inline std::string resnet_block_prefix(std::size_t stage, std::size_t block) {
  return "trunk.layer" + std::to_string(stage + 1) + ".block" + std::to_string(block);
}

inline void conv2d_layout(LayoutBuilder& b, const std::string& prefix, std::size_t k,
                          std::size_t cin, std::size_t cout) {
  b.tensor(prefix + ".weight", {k, k, cin, cout}, InitKind::trunc_normal, 0.02);
}

inline void resnet_layout(LayoutBuilder& b, const ModelConfig& cfg) {
  stem_layout(b, cfg.stem, 1, "frontend");
  std::size_t cin = cfg.stem.out_channels;
  for (std::size_t s = 0; s < 4; ++s) {
    const auto& st = resnet_stages()[s];
    for (std::size_t k = 0; k < kResnetBlocks; ++k) {
      const std::string pre = resnet_block_prefix(s, k);
      const std::size_t stride = k == 0 ? st.stride : 1;
      conv2d_layout(b, pre + ".conv1", 3, cin, st.channels);
      b.batch_norm(pre + ".bn1", st.channels);
      conv2d_layout(b, pre + ".conv2", 3, st.channels, st.channels);
      b.batch_norm(pre + ".bn2", st.channels);
      if (stride != 1 || cin != st.channels) {
        conv2d_layout(b, pre + ".downsample.conv", 1, cin, st.channels);
        b.batch_norm(pre + ".downsample.bn", st.channels);
      }
      cin = st.channels;
    }
  }
}

template <class T>
Tensor<T> bn_named(const Tensor<T>& x, const ParamStore<T>& ps, const std::string& prefix,
                   const RunOptions& run) {
  return batch_norm(x, ps.get(prefix + ".weight"), ps.get(prefix + ".bias"),
                    ps.get(prefix + ".running_mean"), ps.get(prefix + ".running_var"),
                    run.training);
}

template <class T>
Tensor<T> basic_block(const Tensor<T>& x, std::size_t stride, const ParamStore<T>& ps,
                      const std::string& prefix, const RunOptions& run) {
  Tensor<T> y = conv2d(x, ps.get(prefix + ".conv1.weight"), nullptr, {stride, stride},
                       Pad2{1, 1, 1, 1});
  y = relu(bn_named(y, ps, prefix + ".bn1", run));
  y = conv2d(y, ps.get(prefix + ".conv2.weight"), nullptr, {1, 1}, Pad2{1, 1, 1, 1});
  y = bn_named(y, ps, prefix + ".bn2", run);
  Tensor<T> skip = x;
  if (ps.contains(prefix + ".downsample.conv.weight")) {
    skip = conv2d(x, ps.get(prefix + ".downsample.conv.weight"), nullptr, {stride, stride},
                  Pad2{0, 0, 0, 0});
    skip = bn_named(skip, ps, prefix + ".downsample.bn", run);
  }
  return relu(add(y, skip));
}

/// Clip [T,H,W,1] -> [T, 512].
template <class T>
Tensor<T> resnet_forward(const Tensor<T>& clip, const ModelConfig& cfg, const ParamStore<T>& ps,
                         const RunOptions& run) {
  Tensor<T> y = stem_forward(clip, cfg.stem, ps, run, "frontend");
  y = maxpool2d(y, kPoolKernel, kPoolStride, kPoolPad);
  for (std::size_t s = 0; s < 4; ++s)
    for (std::size_t k = 0; k < kResnetBlocks; ++k)
      y = basic_block(y, k == 0 ? resnet_stages()[s].stride : 1, ps, resnet_block_prefix(s, k),
                      run);
  const std::size_t t = y.dim(0), c = y.dim(3);
  return mean_axis(reshape(y, {t, y.dim(1) * y.dim(2), c}), 1);
}

}  // namespace swinlip
