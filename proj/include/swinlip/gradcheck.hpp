#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "swinlip/rng.hpp"
#include "swinlip/tape.hpp"

namespace swinlip {

struct GradCheckOptions {
  double step = 1e-4;
  double tolerance = 1e-4;
  // Denominator floor of the relative error, so that entries whose true
  // gradient is ~0 are judged on absolute error instead.
  double scale_floor = 1e-3;
  // Entries probed per input; 0 probes every entry.
  std::size_t max_entries = 0;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_rel_error = 0;
  double mean_rel_error = 0;
  std::size_t entries = 0;
  std::size_t worst_input = 0;
  std::size_t worst_entry = 0;
  double worst_analytic = 0;
  double worst_numeric = 0;
  bool passed = false;
};

using GradFn = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

/// Compares reverse-mode gradients of a scalar function against central
/// differences. f must be deterministic; two forward evaluations are
/// compared bitwise first.
inline GradCheckReport finite_diff_check(const GradFn& f,
                                         const std::vector<Tensor<double>>& inputs,
                                         const GradCheckOptions& opt = {}) {
  auto eval = [&](const std::vector<Tensor<double>>& xs) {
    Tensor<double> y = f(xs);
    if (y.size() != 1)
      throw TapeError("finite_diff_check needs a scalar function, got shape " +
                      to_string(y.shape()));
    return y.item();
  };
  const double y0 = eval(inputs);
  const double y1 = eval(inputs);
  if (std::memcmp(&y0, &y1, sizeof(double)) != 0)
    throw Error("finite_diff_check: function is not deterministic (" +
                std::to_string(y0) + " vs " + std::to_string(y1) + ")");

  std::vector<Tensor<double>> analytic;
  {
    Tape<double> tape;
    std::vector<Tensor<double>> watched;
    for (const auto& x : inputs) watched.push_back(tape.watch(x.detached()));
    Tensor<double> loss = f(watched);
    tape.backward(loss);
    for (const auto& w : watched) analytic.push_back(tape.grad(w).clone());
  }

  GradCheckReport rep;
  Rng rng(opt.seed);
  double total = 0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const std::size_t n = inputs[k].size();
    std::vector<std::size_t> entries(n);
    std::iota(entries.begin(), entries.end(), 0);
    if (opt.max_entries && opt.max_entries < n) {
      for (std::size_t i = 0; i < opt.max_entries; ++i)
        std::swap(entries[i], entries[i + rng.below(n - i)]);
      entries.resize(opt.max_entries);
    }
    for (std::size_t e : entries) {
      auto perturbed = [&](double delta) {
        std::vector<Tensor<double>> xs = inputs;
        xs[k] = inputs[k].clone();
        xs[k].mutable_data()[e] += delta;
        return eval(xs);
      };
      const double numeric = (perturbed(opt.step) - perturbed(-opt.step)) / (2 * opt.step);
      const double a = analytic[k][e];
      const double denom = std::max({std::abs(a), std::abs(numeric), opt.scale_floor});
      const double rel = std::abs(a - numeric) / denom;
      total += rel;
      ++rep.entries;
      if (rel > rep.max_rel_error || rep.entries == 1) {
        rep.max_rel_error = rel;
        rep.worst_input = k;
        rep.worst_entry = e;
        rep.worst_analytic = a;
        rep.worst_numeric = numeric;
      }
    }
  }
  rep.mean_rel_error = rep.entries ? total / double(rep.entries) : 0.0;
  rep.passed = rep.max_rel_error < opt.tolerance;
  return rep;
}

inline GradCheckReport finite_diff_check(
    const std::function<Tensor<double>(const Tensor<double>&)>& f,
    const Tensor<double>& x, const GradCheckOptions& opt = {}) {
  return finite_diff_check(
      [&](const std::vector<Tensor<double>>& xs) { return f(xs[0]); }, {x}, opt);
}

}  // namespace swinlip
