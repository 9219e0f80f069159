#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "swinlip/conv.hpp"
#include "swinlip/gradcheck.hpp"
#include "swinlip/model.hpp"
#include "swinlip/ops.hpp"

namespace swinlip {

// Registry of finite-difference checks: every differentiable op on small
// random tensors, the composed modules, and a reduced end-to-end encoder.

struct GradCase {
  std::string name;
  std::vector<Tensor<double>> inputs;
  GradFn fn;
  std::size_t max_entries = 0;  // per input; 0 probes every entry
  double step = 0;              // 0 keeps the suite step
};

struct GradCaseResult {
  std::string name;
  GradCheckReport report;
};

namespace detail {

// Scalar loss <y, R> with R fixed by the seed, so every output entry
// contributes a distinct weight.
inline Tensor<double> project(const Tensor<double>& y, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(y, random_normal<double>(y.shape(), rng, 1.0)));
}

// Random values bounded away from zero and from each other, so kinks
// (relu, prelu, max-pool ties) stay outside the finite-difference step.
inline Tensor<double> spread(const Shape& shape, Rng& rng) {
  const std::size_t n = numel(shape);
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = (double(i) + 0.5 - double(n) / 2) / double(n) * 4;
  for (std::size_t i = n; i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
  return Tensor<double>(shape, std::move(v));
}

inline std::size_t extent(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + rng.below(hi - lo + 1);
}

// Replaces initial values by O(1)-scaled random ones so that every term of a
// module's gradient is exercised.
inline void randomize(ParamStore<double>& ps, Rng& rng) {
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (is_buffer_name(ps.names()[i])) continue;
    Tensor<double>& t = ps.tensors()[i];
    auto d = t.mutable_data();
    if (t.rank() == 1) {
      for (auto& v : d) v += 0.1 * rng.normal();
    } else {
      const double fan_in = double(t.size()) / double(t.dim(t.rank() - 1));
      for (auto& v : d) v = rng.normal() / std::sqrt(fan_in);
    }
  }
}

using ModuleFn = std::function<Tensor<double>(const Tensor<double>&, const ParamStore<double>&)>;

// Inputs are x followed by every trainable tensor of ps; buffers stay fixed.
inline GradCase module_case(std::string name, Tensor<double> x, const ParamStore<double>& ps,
                            ModuleFn f, std::uint64_t seed, std::size_t max_entries = 0) {
  GradCase c{std::move(name), {x}, {}, max_entries};
  std::vector<std::size_t> slots;
  for (std::size_t i = 0; i < ps.size(); ++i)
    if (!is_buffer_name(ps.names()[i])) {
      slots.push_back(i);
      c.inputs.push_back(ps.tensors()[i]);
    }
  c.fn = [ps, slots, f = std::move(f), seed](const std::vector<Tensor<double>>& xs) {
    ParamStore<double> p;
    std::size_t next = 0;
    for (std::size_t i = 0; i < ps.size(); ++i) {
      if (next < slots.size() && slots[next] == i)
        p.add(ps.names()[i], xs[1 + next++]);
      else
        p.add(ps.names()[i], ps.tensors()[i]);
    }
    return project(f(xs[0], p), seed);
  };
  return c;
}

inline ParamStore<double> random_store(const ParamLayout& layout, Rng& rng) {
  ParamStore<double> ps = initialize<double>(layout, rng);
  randomize(ps, rng);
  return ps;
}

}  // namespace detail

/// Elementary tensor ops on small random shapes drawn from the seed.
inline std::vector<GradCase> elementary_grad_cases(std::uint64_t seed) {
  using detail::extent;
  using detail::project;
  using detail::spread;
  using V = std::vector<Tensor<double>>;
  Rng rng(seed);
  const std::uint64_t ps = seed * 7919 + 1;  // projection seed
  const std::size_t a = extent(rng, 2, 3), b = extent(rng, 2, 4), c = extent(rng, 2, 4);
  const std::size_t d = extent(rng, 2, 3);
  auto rnd = [&](const Shape& s) { return random_normal<double>(s, rng, 1.0); };
  std::vector<GradCase> cases;
  auto add_case = [&](std::string name, V inputs, GradFn fn) {
    cases.push_back({std::move(name), std::move(inputs), std::move(fn), 0});
  };
  auto unary_case = [&](std::string name, Tensor<double> x,
                        std::function<Tensor<double>(const Tensor<double>&)> f) {
    add_case(std::move(name), {std::move(x)},
             [f = std::move(f), ps](const V& v) { return project(f(v[0]), ps); });
  };

  add_case("add", {rnd({a, b, c}), rnd({b, c})},
           [ps](const V& v) { return project(add(v[0], v[1]), ps); });
  add_case("sub", {rnd({a, b, c}), rnd({a, 1, c})},
           [ps](const V& v) { return project(sub(v[0], v[1]), ps); });
  add_case("mul", {rnd({a, b, c}), rnd({b, 1})},
           [ps](const V& v) { return project(mul(v[0], v[1]), ps); });
  unary_case("scale", rnd({a, b, c}), [](const Tensor<double>& x) { return scale(x, -1.7); });
  unary_case("reshape", rnd({a, b, c}),
             [=](const Tensor<double>& x) { return reshape(x, {b, a * c}); });
  unary_case("permute", rnd({a, b, c, d}),
             [](const Tensor<double>& x) { return permute(x, {2, 0, 3, 1}); });
  unary_case("transpose_last2", rnd({a, b, c}),
             [](const Tensor<double>& x) { return transpose_last2(x); });
  unary_case("slice_axis", rnd({a, b + 1, c}),
             [=](const Tensor<double>& x) { return slice_axis(x, 1, 1, b); });
  add_case("concat", {rnd({a, b, c}), rnd({a, 2, c})},
           [ps](const V& v) { return project(concat(v, 1), ps); });
  unary_case("roll", rnd({a, b, c}), [](const Tensor<double>& x) { return roll(x, 2, -1); });
  unary_case("gather_rows", rnd({b + 1, c}), [=](const Tensor<double>& x) {
    return gather_rows(x, {0, b, 1, 0, b - 1});
  });
  unary_case("rel_shift", rnd({a, b, 2 * b - 1}),
             [](const Tensor<double>& x) { return rel_shift(x); });
  unary_case("relu", spread({a, b, c}, rng), [](const Tensor<double>& x) { return relu(x); });
  unary_case("sigmoid", rnd({a, b, c}), [](const Tensor<double>& x) { return sigmoid(x); });
  unary_case("swish", rnd({a, b, c}), [](const Tensor<double>& x) { return swish(x); });
  unary_case("gelu", rnd({a, b, c}), [](const Tensor<double>& x) { return gelu(x); });
  add_case("prelu", {spread({a, b, c}, rng), rnd({c})},
           [ps](const V& v) { return project(prelu(v[0], v[1]), ps); });
  unary_case("glu", rnd({a, b, 2 * c}), [](const Tensor<double>& x) { return glu(x); });
  unary_case("dropout", rnd({a, b, c}), [seed](const Tensor<double>& x) {
    Rng mask(seed + 3);
    return dropout(x, 0.3, &mask, true);
  });
  unary_case("sum", rnd({a, b, c}), [](const Tensor<double>& x) { return scale(sum(x), 0.3); });
  unary_case("mean", rnd({a, b, c}), [](const Tensor<double>& x) { return mean(x); });
  unary_case("mean_axis", rnd({a, b, c}),
             [](const Tensor<double>& x) { return mean_axis(x, 1); });
  unary_case("softmax", rnd({a, b, c}),
             [](const Tensor<double>& x) { return softmax(x, -1); });
  unary_case("softmax_axis0", rnd({a, b, c}),
             [](const Tensor<double>& x) { return softmax(x, 0); });
  {
    std::vector<std::size_t> labels(b);
    for (auto& l : labels) l = rng.below(c);
    unary_case("cross_entropy", rnd({b, c}),
               [labels](const Tensor<double>& x) { return cross_entropy(x, labels); });
  }
  add_case("matmul", {rnd({a, b, c}), rnd({a, c, d})},
           [ps](const V& v) { return project(matmul(v[0], v[1]), ps); });
  add_case("matmul_broadcast_b", {rnd({a, b, c}), rnd({c, d})},
           [ps](const V& v) { return project(matmul(v[0], v[1]), ps); });
  add_case("matmul_broadcast_a", {rnd({b, c}), rnd({a, c, d})},
           [ps](const V& v) { return project(matmul(v[0], v[1]), ps); });
  add_case("linear", {rnd({a, b, c}), rnd({c, d}), rnd({d})},
           [ps](const V& v) { return project(linear(v[0], v[1], &v[2]), ps); });
  add_case("layer_norm", {rnd({a, b, c + 1}), rnd({c + 1}), rnd({c + 1})},
           [ps](const V& v) { return project(layer_norm(v[0], v[1], v[2]), ps); });
  {
    Tensor<double> rm = rnd({c}), rv = random_uniform<double>({c}, rng, 0.5, 2.0);
    add_case("batch_norm_eval", {rnd({a, b, c}), rnd({c}), rnd({c})}, [=](const V& v) {
      return project(batch_norm(v[0], v[1], v[2], rm.clone(), rv.clone(), false), ps);
    });
    add_case("batch_norm_train", {rnd({a, b, c}), rnd({c}), rnd({c})}, [=](const V& v) {
      return project(batch_norm(v[0], v[1], v[2], rm.clone(), rv.clone(), true), ps);
    });
  }
  add_case("conv3d", {rnd({b + 2, 5, 4, 2}), rnd({3, 3, 2, 2, 3}), rnd({3})},
           [ps](const V& v) {
             return project(conv3d(v[0], v[1], &v[2], {1, 2, 1}, {1, 1, 0}), ps);
           });
  add_case("conv2d", {rnd({a, 5, 6, 3}), rnd({3, 2, 3, 4}), rnd({4})}, [ps](const V& v) {
    return project(conv2d(v[0], v[1], &v[2], {2, 1}, Pad2{1, 1, 0, 1}), ps);
  });
  add_case("conv2d_grouped", {rnd({a, 4, 5, 4}), rnd({3, 3, 2, 6}), rnd({6})},
           [ps](const V& v) {
             return project(conv2d(v[0], v[1], &v[2], {1, 1}, Pad2{1, 1, 1, 1}, 2), ps);
           });
  add_case("dwconv1d", {rnd({b + 4, c}), rnd({3, c}), rnd({c})},
           [ps](const V& v) { return project(dwconv1d(v[0], v[1], &v[2], 1, 1), ps); });
  add_case("dwconv1d_causal", {rnd({b + 4, c}), rnd({5, c}), rnd({c})},
           [ps](const V& v) { return project(dwconv1d(v[0], v[1], &v[2], 4, 0), ps); });
  unary_case("maxpool2d", spread({a, 7, 6, 2}, rng),
             [](const Tensor<double>& x) { return maxpool2d(x, 3, 2, 1); });
  return cases;
}

/// Windowed-attention, patch and temporal modules on small grids.
inline std::vector<GradCase> module_grad_cases(std::uint64_t seed) {
  using detail::module_case;
  using detail::random_store;
  Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  const std::uint64_t ps = seed * 104729 + 5;
  std::vector<GradCase> cases;
  RunOptions eval;

  {
    StemConfig s{{3, 3, 3}, {1, 1, 1}, {1, 1, 1}, 3, true, true, Activation::prelu};
    LayoutBuilder b;
    stem_layout(b, s, 1);
    cases.push_back(module_case(
        "stem", random_normal<double>({3, 5, 5, 1}, rng), random_store(b.layout(), rng),
        [s, eval](const Tensor<double>& x, const ParamStore<double>& p) {
          return stem_forward(x, s, p, eval);
        },
        ps));
  }
  {
    LayoutBuilder b;
    b.linear("embed", 3 * 3 * 2, 5);
    cases.push_back(module_case(
        "patch_partition_embed", random_normal<double>({2, 6, 6, 2}, rng),
        random_store(b.layout(), rng),
        [](const Tensor<double>& x, const ParamStore<double>& p) {
          return patch_partition_embed(x, 3, p, "embed");
        },
        ps));
  }
  const StageSpec spec{8, 2, 2, 2};
  {
    LayoutBuilder b;
    swin_block_layout(b, "blk", {8, 2, 4, 2}, 4);
    const ParamStore<double> store = random_store(b.layout(), rng);
    cases.push_back(module_case(
        "window_mhsa", random_normal<double>({2, 16, 8}, rng), store,
        [](const Tensor<double>& x, const ParamStore<double>& p) {
          return window_mhsa(x, 2, 4, p, "blk.attn");
        },
        ps));
  }
  {
    LayoutBuilder b;
    swin_block_layout(b, "blk", spec, 4);
    const ParamStore<double> store = random_store(b.layout(), rng);
    const Tensor<double> mask = build_shift_mask<double>(4, 4, 2, 1);
    cases.push_back(module_case(
        "window_mhsa_masked", random_normal<double>({8, 4, 8}, rng), store,
        [mask](const Tensor<double>& x, const ParamStore<double>& p) {
          return window_mhsa(x, 2, 2, p, "blk.attn", &mask);
        },
        ps));
  }
  {
    LayoutBuilder b;
    swin_block_layout(b, "b0", spec, 4);
    swin_block_layout(b, "b1", spec, 4);
    cases.push_back(module_case(
        "swin_block_pair", random_normal<double>({2, 4, 4, 8}, rng),
        random_store(b.layout(), rng),
        [spec, eval](const Tensor<double>& x, const ParamStore<double>& p) {
          return swin_block_pair(x, spec, 1, p, "b0", "b1", eval);
        },
        ps));
  }
  {
    LayoutBuilder b;
    b.layer_norm("merge.norm", 24);
    b.linear("merge.reduction", 24, 12, false);
    cases.push_back(module_case(
        "patch_merge", random_normal<double>({2, 4, 4, 6}, rng), random_store(b.layout(), rng),
        [](const Tensor<double>& x, const ParamStore<double>& p) {
          return patch_merge(x, p, "merge");
        },
        ps));
  }
  TemporalBlockConfig tc;
  tc.dim = 16;
  tc.heads = 4;
  tc.ffn_hidden = 16;
  tc.dw_kernel = 5;
  tc.blocks = 2;
  tc.dropout = 0.0;
  for (bool streaming : {false, true}) {
    tc.streaming = streaming;
    LayoutBuilder b;
    temporal_layout(b, tc);
    const ParamStore<double> store = random_store(b.layout(), rng);
    const Tensor<double> g = random_normal<double>({6, 16}, rng);
    const std::string tag = streaming ? "_streaming" : "";
    if (!streaming) {
      cases.push_back(module_case(
          "ffn_half", g, store,
          [eval](const Tensor<double>& x, const ParamStore<double>& p) {
            return ffn_half(x, p, "temporal.block0.ffn1", eval);
          },
          ps));
      cases.push_back(module_case(
          "rel_mhsa", g, store,
          [eval](const Tensor<double>& x, const ParamStore<double>& p) {
            return rel_mhsa(x, 4, p, "temporal.block0.mhsa", eval);
          },
          ps));
    }
    cases.push_back(module_case(
        "conv_module" + tag, g, store,
        [tc, eval](const Tensor<double>& x, const ParamStore<double>& p) {
          return conv_module(x, tc, p, "temporal.block0.conv", eval);
        },
        ps));
    cases.push_back(module_case(
        "conv_attention_block" + tag, g, store,
        [tc, eval](const Tensor<double>& x, const ParamStore<double>& p) {
          return conv_attention_block(x, tc, p, "temporal.block0", eval);
        },
        ps));
    cases.push_back(module_case(
        "temporal_stack" + tag, g, store,
        [tc, eval](const Tensor<double>& x, const ParamStore<double>& p) {
          return temporal_forward(x, tc, p, eval);
        },
        ps));
  }
  return cases;
}

/// The reduced encoder end to end (eval-mode norms, no dropout) under a
/// mean-square loss against a fixed random target. Probed with a 1e-6 step:
/// at 1e-4 some stem activations cross the PReLU kink.
inline GradCase end_to_end_grad_case(const ModelConfig& reduced, std::uint64_t seed,
                                     std::size_t max_entries = 2) {
  ModelConfig cfg = reduced;
  cfg.temporal.dropout = 0.0;
  cfg.swin_dropout = 0.0;
  cfg.seed = seed;
  Model<double> model = build<double>(cfg);
  Rng rng(seed + 11);
  detail::randomize(model.params, rng);
  const Tensor<double> clip = random_normal<double>(cfg.input.shape(), rng);
  const Tensor<double> target =
      random_normal<double>({cfg.input.frames, cfg.temporal.dim}, rng);
  GradCase c = detail::module_case(
      std::string("end_to_end_") + to_string(cfg.kind), clip, model.params,
      [model, target](const Tensor<double>& x, const ParamStore<double>& p) {
        const Tensor<double> d = sub(model.forward(x, p, RunOptions{}), target);
        return mean(mul(d, d));
      },
      seed, max_entries);
  c.step = 1e-6;
  return c;
}

/// Suite of registered cases; tests may append their own.
class GradSuite {
 public:
  static GradSuite standard(const ModelConfig& reduced, std::uint64_t seed) {
    GradSuite s;
    for (auto& c : elementary_grad_cases(seed)) s.add(std::move(c));
    for (auto& c : module_grad_cases(seed)) s.add(std::move(c));
    s.add(end_to_end_grad_case(reduced, seed));
    return s;
  }

  void add(GradCase c) { cases_.push_back(std::move(c)); }
  const std::vector<GradCase>& cases() const { return cases_; }

  std::vector<GradCaseResult> run(const GradCheckOptions& opt,
                                  const std::function<void(const GradCaseResult&)>& on_case = {})
      const {
    std::vector<GradCaseResult> out;
    for (const auto& c : cases_) {
      GradCheckOptions o = opt;
      if (c.max_entries) o.max_entries = c.max_entries;
      if (c.step > 0) o.step = c.step;
      out.push_back({c.name, finite_diff_check(c.fn, c.inputs, o)});
      if (on_case) on_case(out.back());
    }
    return out;
  }

 private:
  std::vector<GradCase> cases_;
};

}  // namespace swinlip
