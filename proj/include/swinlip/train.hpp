#pragma once

#include <cmath>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "swinlip/model.hpp"

namespace swinlip {

// Desk-scale trainability check: a small synthetic clip set, the encoder
// mean-pooled over time, a linear classifier and SGD with momentum.

struct MotionClip {
  Tensor<float> pixels;  // [T, H, W, 1]
  std::size_t label;
};

/// Clip i has class i % classes: a bright square drifting across a noisy
/// background in direction pi * class / classes (two classes: horizontal
/// versus vertical). Start offsets and noise come from the seed.
inline std::vector<MotionClip> motion_dataset(std::size_t clips, std::size_t classes,
                                              std::size_t frames, std::size_t height,
                                              std::size_t width, std::uint64_t seed) {
  if (classes < 2) throw ConfigError("--classes must be at least 2");
  if (clips < classes) throw ConfigError("fewer clips than classes");
  constexpr double side = 16, speed = 3;
  Rng rng(seed);
  std::vector<MotionClip> out;
  for (std::size_t i = 0; i < clips; ++i) {
    const std::size_t label = i % classes;
    const double angle = std::numbers::pi * double(label) / double(classes);
    const double vy = speed * std::sin(angle), vx = speed * std::cos(angle);
    const double travel_y = std::abs(vy) * double(frames - 1);
    const double travel_x = std::abs(vx) * double(frames - 1);
    const double span_y = std::max(0.0, double(height) - side - travel_y);
    const double span_x = std::max(0.0, double(width) - side - travel_x);
    const double y0 = rng.uniform() * span_y + (vy < 0 ? travel_y : 0);
    const double x0 = rng.uniform() * span_x + (vx < 0 ? travel_x : 0);
    std::vector<float> px(frames * height * width);
    for (auto& v : px) v = float(0.1 * rng.normal());
    for (std::size_t t = 0; t < frames; ++t) {
      const double cy = y0 + vy * double(t), cx = x0 + vx * double(t);
      for (std::size_t y = 0; y < height; ++y)
        for (std::size_t x = 0; x < width; ++x)
          if (double(y) >= cy && double(y) < cy + side && double(x) >= cx &&
              double(x) < cx + side)
            px[(t * height + y) * width + x] += 1.0f;
    }
    out.push_back({Tensor<float>({frames, height, width, 1}, std::move(px)), label});
  }
  return out;
}

struct OverfitOptions {
  std::size_t steps = 200;
  std::size_t classes = 2;
  std::size_t clips = 16;
  double lr = 0.01;
  double momentum = 0.9;
  std::uint64_t seed = 0;
};

struct OverfitStep {
  std::size_t step;
  double loss;
  double accuracy;
};

struct OverfitResult {
  std::vector<OverfitStep> trace;

  const OverfitStep& last() const { return trace.back(); }

  std::string csv() const {
    std::ostringstream s;
    s << "step,loss,accuracy\n";
    for (const auto& r : trace) s << r.step << "," << r.loss << "," << r.accuracy << "\n";
    return s.str();
  }
};

class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// Trains every parameter of a freshly built cfg model plus a linear head on
/// the synthetic set. Each step is one full-batch pass: per-clip tapes with
/// batch-norm in training mode, gradients averaged over clips.
inline OverfitResult overfit(ModelConfig cfg, const OverfitOptions& opt,
                             const std::function<void(const OverfitStep&)>& on_step = {}) {
  if (!cfg.is_swin()) throw ConfigError("overfit runs on the windowed encoder models");
  cfg.temporal.dropout = 0.0;
  cfg.swin_dropout = 0.0;
  Model<float> model = build<float>(cfg);
  Rng head_rng(cfg.seed ^ 0x5eedULL);
  LayoutBuilder hb;
  hb.linear("head", cfg.temporal.dim, opt.classes);
  ParamStore<float> head = initialize<float>(hb.layout(), head_rng);

  const auto data = motion_dataset(opt.clips, opt.classes, cfg.input.frames, cfg.input.height,
                                   cfg.input.width, cfg.seed + 1);
  std::vector<std::vector<float>> velocity_m, velocity_h;
  for (const auto& t : model.params.tensors()) velocity_m.emplace_back(t.size(), 0.0f);
  for (const auto& t : head.tensors()) velocity_h.emplace_back(t.size(), 0.0f);

  OverfitResult res;
  RunOptions run;
  run.training = true;
  for (std::size_t step = 0; step <= opt.steps; ++step) {
    std::vector<std::vector<float>> grad_m, grad_h;
    for (const auto& t : model.params.tensors()) grad_m.emplace_back(t.size(), 0.0f);
    for (const auto& t : head.tensors()) grad_h.emplace_back(t.size(), 0.0f);
    double loss_sum = 0;
    std::size_t correct = 0;
    for (const auto& clip : data) {
      Tape<float> tape;
      const ParamStore<float> ps = model.params.attached(tape);
      const ParamStore<float> hs = head.attached(tape);
      Tensor<float> feat = mean_axis(model.forward(clip.pixels, ps, run), 0);
      Tensor<float> logits = linear(reshape(feat, {1, feat.size()}), hs.get("head.weight"),
                                    &hs.get("head.bias"));
      Tensor<float> loss = cross_entropy(logits, {clip.label});
      loss_sum += loss.item();
      std::size_t best = 0;
      for (std::size_t k = 1; k < opt.classes; ++k)
        if (logits[k] > logits[best]) best = k;
      correct += best == clip.label;
      if (step == opt.steps) continue;
      tape.backward(loss);
      auto gather = [&](const ParamStore<float>& store, std::vector<std::vector<float>>& acc) {
        for (std::size_t i = 0; i < store.size(); ++i) {
          if (is_buffer_name(store.names()[i])) continue;
          auto g = tape.grad(store.tensors()[i]).data();
          for (std::size_t e = 0; e < g.size(); ++e) acc[i][e] += g[e];
        }
      };
      gather(ps, grad_m);
      gather(hs, grad_h);
    }
    const OverfitStep rec{step, loss_sum / double(data.size()),
                          double(correct) / double(data.size())};
    if (!std::isfinite(rec.loss))
      throw DivergenceError("loss diverged at step " + std::to_string(step));
    res.trace.push_back(rec);
    if (on_step) on_step(rec);
    if (step == opt.steps) break;
    const float scale = 1.0f / float(data.size());
    auto update = [&](ParamStore<float>& store, std::vector<std::vector<float>>& grad,
                      std::vector<std::vector<float>>& vel) {
      for (std::size_t i = 0; i < store.size(); ++i) {
        if (is_buffer_name(store.names()[i])) continue;
        auto p = store.tensors()[i].mutable_data();
        for (std::size_t e = 0; e < p.size(); ++e) {
          vel[i][e] = float(opt.momentum) * vel[i][e] + grad[i][e] * scale;
          p[e] -= float(opt.lr) * vel[i][e];
        }
      }
    };
    update(model.params, grad_m, velocity_m);
    update(head, grad_h, velocity_h);
  }
  return res;
}

}  // namespace swinlip
