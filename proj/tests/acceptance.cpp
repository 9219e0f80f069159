#include <chrono>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>

#include "oracles.hpp"
#include "swinlip.hpp"

using namespace swinlip;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(const char* f, double a, double b = 0, double c = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

bool within(double value, double target, double rel) {
  return std::abs(value - target) <= rel * target;
}

ParamStore<double> random_store(const ParamLayout& layout, Rng& rng) {
  ParamStore<double> ps = initialize<double>(layout, rng);
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (is_buffer_name(ps.names()[i])) continue;
    Tensor<double>& t = ps.tensors()[i];
    const double s = t.rank() == 1 ? 0.2 : 1.0 / std::sqrt(double(t.dim(0)));
    for (auto& v : t.mutable_data()) v += s * rng.normal();
  }
  return ps;
}

Outcome params_budget() {
  const Model<float> m = build<float>(ModelConfig::swinlip());
  const CostReport rep = count_costs(m.config);
  const double p = double(m.params.trainable_elements());
  std::ostringstream s;
  s << fmt("%.0f trainable (target 12.46 M +-3%%);", p);
  for (const auto& r : rep.modules()) s << " " << r.layer << " " << r.params;
  return {within(p, 12.46e6, 0.03) && p == double(rep.total_params()), s.str()};
}

Outcome compute_budget() {
  const double macs = double(count_macs(ModelConfig::swinlip(), {29, 88, 88, 1}));
  return {within(macs, 1.92e9, 0.05), fmt("%.4g MACs (target 1.92 G +-5%%), 1 MAC = 1 FLOP", macs)};
}

Outcome streaming_delta() {
  const CostReport full = count_costs(ModelConfig::swinlip());
  const CostReport st = count_costs(ModelConfig::swinlip_streaming());
  bool localized = true;
  std::int64_t dp = 0, dm = 0;
  for (const auto& d : diff_reports(full, st)) {
    if (d.params == 0 && d.macs == 0 && !d.only_in_a && !d.only_in_b) continue;
    localized = localized && d.layer.rfind("temporal.", 0) == 0 &&
                d.layer.find(".mhsa") != std::string::npos;
    dp += d.params;
    dm += d.macs;
  }
  localized = localized &&
              dp == std::int64_t(st.total_params()) - std::int64_t(full.total_params()) &&
              dm == std::int64_t(st.total_macs()) - std::int64_t(full.total_macs());
  const double p = double(st.total_params()), m = double(st.total_macs());
  return {within(p, 9.82e6, 0.03) && within(m, 1.84e9, 0.05) && localized,
          fmt("%.0f params, %.4g MACs, ", p, m) + "delta " + std::to_string(dp) + " params / " +
              std::to_string(dm) + " MACs" + (localized ? " all in temporal attention" : " NOT localized")};
}

Outcome stem_probe() {
  const CostReport rep = stem_variant_cost_probe(ModelConfig::swinlip(), {5, 7, 7});
  const double p = double(rep.total_params()), m = double(rep.total_macs());
  return {within(m, 2.84e9, 0.05) && within(p, 12.47e6, 0.03),
          fmt("(5,7,7) stem: %.0f params, %.4g MACs", p, m)};
}

Outcome baseline_costs() {
  const CostReport rep = count_costs(ModelConfig::resnet18_frontend());
  const double p = double(rep.total_params()), m = double(rep.total_macs());
  return {within(p, 11.18e6, 0.05) && within(m, 9.2e9, 0.10),
          fmt("%.0f params, %.4g MACs at 29 frames", p, m)};
}

Outcome latency() {
  BenchOptions o;
  o.frames = {29, 58, 116, 232};
  o.reps = 5;
  o.threads = 1;
  const BenchResult s = benchmark(ModelConfig::swinlip(), o);
  const BenchResult r = benchmark(ModelConfig::resnet18_frontend(), o);
  bool pass = true;
  std::ostringstream d;
  for (std::size_t i = 0; i < s.rows.size(); ++i) {
    pass = pass && s.rows[i].mean_ms < r.rows[i].mean_ms;
    d << "T=" << s.rows[i].frames << fmt(" %.0f/%.0f ms", s.rows[i].mean_ms, r.rows[i].mean_ms);
    if (i > 0) {
      const double ratio = s.rows[i].mean_ms / s.rows[i - 1].mean_ms;
      pass = pass && ratio <= 2.5;
      d << fmt(" (x%.2f)", ratio);
    }
    d << "; ";
  }
  d << s.machine;
  return {pass, d.str()};
}

Outcome attention_oracle() {
  double worst = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const std::size_t M = 2 + rng.below(3), heads = 1 + rng.below(3);
    const std::size_t C = heads * (2 + rng.below(4));
    LayoutBuilder b;
    swin_block_layout(b, "blk", {C, 2, M, heads}, 4);
    const ParamStore<double> ps = random_store(b.layout(), rng);
    const Tensor<double> z = random_normal<double>({1, M, M, C}, rng);
    const Tensor<float> y =
        window_mhsa(window_partition(z.cast<float>(), M), heads, M, ps.cast<float>(), "blk.attn");
    const Tensor<double> table = ps.get("blk.attn.rel_pos_table");
    const auto idx = relative_position_index(M);
    auto bias = [&](std::size_t h, std::size_t a, std::size_t c) {
      return table.at({idx[a * M * M + c], h});
    };
    const auto ref = oracle::dense_attention(
        oracle::values(z), M * M, C, heads, oracle::values(ps.get("blk.attn.qkv.weight")),
        oracle::values(ps.get("blk.attn.qkv.bias")), oracle::values(ps.get("blk.attn.proj.weight")),
        oracle::values(ps.get("blk.attn.proj.bias")), bias);
    for (std::size_t i = 0; i < ref.size(); ++i)
      worst = std::max(worst, std::abs(double(y[i]) - ref[i]));
  }
  std::size_t grids = 0, mismatches = 0;
  for (const auto& cfg : {ModelConfig::swinlip(), ModelConfig::swinlip_streaming(),
                          ModelConfig::reduced(), ModelConfig::reduced(true)}) {
    const auto geom = stage_geometry(cfg);
    for (std::size_t i = 0; i < geom.size(); ++i)
      for (std::size_t s : {geom[i].shift, cfg.stages[i].window / 2}) {
        const std::size_t M = cfg.stages[i].window;
        if (M > std::min(geom[i].grid_h, geom[i].grid_w)) continue;
        const Tensor<float> m = build_shift_mask<float>(geom[i].grid_h, geom[i].grid_w, M, s);
        const auto ref = oracle::region_mask(geom[i].grid_h, geom[i].grid_w, M, s);
        ++grids;
        for (std::size_t k = 0; k < ref.size(); ++k) mismatches += double(m[k]) != ref[k];
      }
  }
  return {worst <= 1e-5 && mismatches == 0 && grids > 0,
          fmt("max |window - dense| %.2e over 20 seeds; ", worst) + std::to_string(grids) +
              " preset masks, " + std::to_string(mismatches) + " mismatched entries"};
}

Outcome gradient_suite() {
  ModelConfig cfg = ModelConfig::reduced();
  cfg.input.frames = 3;
  const GradSuite suite = GradSuite::standard(cfg, 1);
  GradCheckOptions opt;
  opt.tolerance = 1e-4;
  double worst = 0;
  std::string worst_name, failed;
  for (const auto& r : suite.run(opt)) {
    if (r.report.max_rel_error > worst) worst = r.report.max_rel_error, worst_name = r.name;
    if (!r.report.passed) failed += " " + r.name;
  }
  return {failed.empty(), std::to_string(suite.cases().size()) + " cases" +
                              fmt(", worst %.2e in ", worst) + worst_name +
                              (failed.empty() ? "" : "; failed:" + failed)};
}

Outcome streaming_causality() {
  const TemporalBlockConfig c = ModelConfig::reduced(true).temporal;
  LayoutBuilder b;
  temporal_layout(b, c);
  std::size_t violations = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    const ParamStore<double> ps = random_store(b.layout(), rng);
    const std::size_t T = 2 + rng.below(15);
    const Tensor<double> g = random_normal<double>({T, c.dim}, rng);
    const std::size_t cut = 1 + rng.below(T - 1);
    Tensor<double> h = g.clone();
    for (std::size_t i = cut * c.dim; i < h.size(); ++i) h.mutable_data()[i] = rng.normal();
    const Tensor<double> ya = temporal_forward(g, c, ps, RunOptions{});
    const Tensor<double> yb = temporal_forward(h, c, ps, RunOptions{});
    violations += std::memcmp(ya.data().data(), yb.data().data(), cut * c.dim * sizeof(double)) != 0;
  }
  return {violations == 0, "50 random inputs and cut points, " + std::to_string(violations) +
                               " prefixes changed"};
}

Outcome trainability() {
  bool pass = true;
  std::ostringstream d;
  for (bool streaming : {false, true}) {
    const ModelConfig cfg = ModelConfig::reduced(streaming);
    OverfitOptions o;
    o.steps = 200;
    const OverfitResult r = overfit(cfg, o);
    long reached = -1;
    for (const auto& s : r.trace)
      if (s.accuracy == 1.0 && s.loss < 0.1) {
        reached = long(s.step);
        break;
      }
    pass = pass && reached >= 0;
    d << to_string(cfg.kind) << ": "
      << (reached >= 0 ? "reached at step " + std::to_string(reached) : std::string("not reached"))
      << fmt(", final loss %.4f acc %.2f", r.last().loss, r.last().accuracy) << (streaming ? "" : "; ");
  }
  return {pass, d.str()};
}

Outcome round_trips() {
  std::size_t checks = 0, bad = 0;
  auto expect = [&](bool ok) {
    ++checks;
    bad += !ok;
  };
  Rng rng(3);
  for (const auto& cfg : {ModelConfig::swinlip(), ModelConfig::reduced()}) {
    const auto geom = stage_geometry(cfg);
    for (std::size_t i = 0; i < geom.size(); ++i) {
      const std::size_t M = std::min(cfg.stages[i].window, geom[i].grid_h);
      const Tensor<float> x =
          random_normal<float>({2, geom[i].grid_h, geom[i].grid_w, cfg.stages[i].channels}, rng);
      expect(bitwise_equal(window_reverse(window_partition(x, M), M, 2, geom[i].grid_h,
                                          geom[i].grid_w),
                           x));
      for (std::size_t s = 0; s < M; ++s) expect(bitwise_equal(cyclic_unshift(cyclic_shift(x, s), s), x));
    }
  }
  const auto dir = std::filesystem::temp_directory_path();
  const Model<float> m = build<float>(ModelConfig::swinlip());
  const std::string wpath = (dir / "swinlip_acceptance.slwz").string();
  save_weights(m.params, wpath);
  const ParamStore<float> back = load_weights<float>(wpath);
  expect(back.names() == m.params.names());
  for (std::size_t i = 0; i < back.size() && i < m.params.size(); ++i)
    expect(bitwise_equal(back.tensors()[i], m.params.tensors()[i]));
  std::filesystem::remove(wpath);
  const std::string tpath = (dir / "swinlip_acceptance.slt").string();
  for (const Shape& s : {Shape{29, 88, 88, 1}, Shape{29, 512}, Shape{1}}) {
    const Tensor<float> t = random_normal<float>(s, rng);
    save_tensor(tpath, t);
    expect(bitwise_equal(load_tensor<float>(tpath), t));
    const Tensor<double> td = t.cast<double>();
    save_tensor(tpath, td);
    expect(bitwise_equal(load_tensor<double>(tpath), td));
  }
  std::filesystem::remove(tpath);
  return {bad == 0, std::to_string(checks) + " bitwise identities, " + std::to_string(bad) + " broken"};
}

}  // namespace

int main() {
  configure_allocator();
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"parameter budget", params_budget},
      {"compute budget", compute_budget},
      {"streaming deltas", streaming_delta},
      {"stem variant costs", stem_probe},
      {"baseline costs", baseline_costs},
      {"latency ordering", latency},
      {"attention oracle", attention_oracle},
      {"gradient suite", gradient_suite},
      {"streaming causality", streaming_causality},
      {"trainability", trainability},
      {"round-trip exactness", round_trips},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double sec =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failures += !o.pass;
    std::printf("%s %2zu %-22s %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", i + 1,
                criteria[i].first.c_str(), o.detail.c_str(), sec);
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria failed\n", failures, criteria.size());
  return failures ? 1 : 0;
}
