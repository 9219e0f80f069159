#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "swinlip/model.hpp"

namespace swinlip {

constexpr std::size_t kWarmupRuns = 2;
constexpr std::size_t kMinReps = 5;

/// Keeps freed feature maps in the heap instead of returning them to the OS,
/// so repeated forwards do not pay page faults for every large tensor.
inline void configure_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

struct BenchRow {
  std::size_t frames;
  double mean_ms;
  double std_ms;
  std::size_t reps;
};

struct BenchResult {
  std::string model;
  std::string machine;
  std::vector<BenchRow> rows;

  std::string csv() const {
    std::ostringstream s;
    s << "model,T,mean_ms,std_ms,reps\n";
    for (const auto& r : rows)
      s << model << "," << r.frames << "," << r.mean_ms << "," << r.std_ms << "," << r.reps
        << "\n";
    return s.str();
  }
};

inline std::string machine_note() {
  std::ostringstream s;
  s << std::thread::hardware_concurrency() << " hardware threads";
#if defined(__AVX512F__)
  s << ", AVX-512";
#elif defined(__AVX2__)
  s << ", AVX2";
#endif
  return s.str();
}

struct BenchOptions {
  std::vector<std::size_t> frames{29, 58, 116, 232};
  std::size_t reps = kMinReps;
  std::size_t threads = 1;
  std::uint64_t seed = 0;
};

/// Mean and sample standard deviation of eval-mode forward latency per clip
/// length, on synthetic clips drawn from the seed. Rows are sorted by T.
inline BenchResult benchmark(const ModelConfig& cfg, BenchOptions opt) {
  if (opt.reps < kMinReps)
    throw ConfigError("--reps must be at least " + std::to_string(kMinReps) + ", got " +
                      std::to_string(opt.reps));
  if (opt.frames.empty()) throw ConfigError("no clip lengths to benchmark");
  if (opt.threads == 0) throw ConfigError("--threads must be at least 1");
  configure_allocator();
  std::sort(opt.frames.begin(), opt.frames.end());
  opt.frames.erase(std::unique(opt.frames.begin(), opt.frames.end()), opt.frames.end());
  const Model<float> model = build<float>(cfg);
  Rng rng(opt.seed);
  BenchResult res{to_string(cfg.kind), machine_note(), {}};
  RunOptions run;
  run.threads = opt.threads;
  for (std::size_t t : opt.frames) {
    const Tensor<float> clip =
        random_normal<float>({t, cfg.input.height, cfg.input.width, 1}, rng, 1.0);
    for (std::size_t i = 0; i < kWarmupRuns; ++i) model.forward(clip, run);
    std::vector<double> ms;
    for (std::size_t i = 0; i < opt.reps; ++i) {
      const auto t0 = std::chrono::steady_clock::now();
      const Tensor<float> y = model.forward(clip, run);
      const auto t1 = std::chrono::steady_clock::now();
      if (y.dim(0) != t) throw Error("forward returned the wrong number of frames");
      ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    double mean = 0;
    for (double v : ms) mean += v;
    mean /= double(ms.size());
    double var = 0;
    for (double v : ms) var += (v - mean) * (v - mean);
    var /= double(ms.size() - 1);
    res.rows.push_back({t, mean, std::sqrt(var), opt.reps});
  }
  return res;
}

}  // namespace swinlip
