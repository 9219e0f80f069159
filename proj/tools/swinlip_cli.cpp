#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "swinlip.hpp"

using namespace swinlip;

namespace {

enum Exit { ok = 0, failed = 1, config_error = 2, io_error = 3 };

ModelConfig config_or(const std::string& path, ModelConfig fallback) {
  return path.empty() ? fallback : load_config(path);
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw IoError("failed writing '" + path + "'");
}

std::vector<std::size_t> parse_list(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(item, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos == 0 || pos != item.size() || v == 0)
      throw ConfigError("--t-values: expected positive integers, got '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError("--t-values is empty");
  return out;
}

int cmd_describe(const std::string& config, const std::string& csv) {
  const ModelConfig cfg = config_or(config, ModelConfig::swinlip());
  const CostReport rep = count_costs(cfg);
  std::cout << rep.text();
  if (!csv.empty()) write_file(csv, rep.csv());
  return ok;
}

int cmd_init(const std::string& config, const std::string& output) {
  const ModelConfig cfg = config_or(config, ModelConfig::swinlip());
  save_weights(build<float>(cfg).params, output);
  std::cout << "wrote " << output << " (config " << to_hex(cfg.hash()) << ")\n";
  return ok;
}

int cmd_forward(const std::string& config, const std::string& weights, const std::string& input,
                const std::string& output) {
  const ModelConfig cfg = config_or(config, ModelConfig::swinlip());
  const Model<float> model = weights.empty() ? build<float>(cfg) : load_model<float>(cfg, weights);
  const Tensor<float> clip = load_tensor<float>(input);
  const auto t0 = std::chrono::steady_clock::now();
  const Tensor<float> y = model.forward(clip);
  const auto t1 = std::chrono::steady_clock::now();
  save_tensor(output, y);
  std::printf("%s -> %s in %.1f ms\n", to_string(clip.shape()).c_str(),
              to_string(y.shape()).c_str(),
              std::chrono::duration<double, std::milli>(t1 - t0).count());
  return ok;
}

int cmd_bench(const std::string& config, const std::string& t_values, std::size_t reps,
              const std::string& csv, std::size_t threads, std::uint64_t seed) {
  const ModelConfig cfg = config_or(config, ModelConfig::swinlip());
  BenchOptions opt;
  opt.frames = parse_list(t_values);
  opt.reps = reps;
  opt.threads = threads;
  opt.seed = seed;
  const BenchResult res = benchmark(cfg, opt);
  std::cout << "# " << res.machine << "\n" << res.csv();
  if (!csv.empty()) write_file(csv, res.csv());
  return ok;
}

int cmd_gradcheck(const std::string& config, std::uint64_t seed, double tolerance) {
  ModelConfig cfg = config_or(config, ModelConfig::reduced());
  cfg.input.frames = 3;
  const GradSuite suite = GradSuite::standard(cfg, seed);
  GradCheckOptions opt;
  opt.tolerance = tolerance;
  opt.seed = seed;
  std::vector<std::string> bad;
  suite.run(opt, [&](const GradCaseResult& r) {
    std::printf("%-32s %.3e  %s\n", r.name.c_str(), r.report.max_rel_error,
                r.report.passed ? "ok" : "FAIL");
    std::fflush(stdout);
    if (!r.report.passed) bad.push_back(r.name);
  });
  if (bad.empty()) {
    std::printf("all %zu ops within %g\n", suite.cases().size(), tolerance);
    return ok;
  }
  std::printf("failed:");
  for (const auto& n : bad) std::printf(" %s", n.c_str());
  std::printf("\n");
  return failed;
}

int cmd_overfit(const std::string& config, std::size_t steps, std::size_t classes, double lr,
                const std::string& csv) {
  const ModelConfig cfg = config_or(config, ModelConfig::reduced());
  OverfitOptions opt;
  opt.steps = steps;
  opt.classes = classes;
  opt.lr = lr;
  opt.seed = cfg.seed;
  std::cout << "step,loss,accuracy\n";
  const OverfitResult res = overfit(cfg, opt, [](const OverfitStep& s) {
    std::cout << s.step << "," << s.loss << "," << s.accuracy << std::endl;
  });
  if (!csv.empty()) write_file(csv, res.csv());
  return ok;
}

}  // namespace

int main(int argc, char** argv) {
  configure_allocator();
  CLI::App app{"SwinLip visual speech encoder"};
  app.require_subcommand(1);

  std::string config, csv, weights, input, output, t_values = "29,58,116,232";
  std::size_t reps = kMinReps, threads = 1, steps = 200, classes = 2;
  std::uint64_t seed = 0;
  double tolerance = 1e-4, lr = OverfitOptions{}.lr;

  auto* describe = app.add_subcommand("describe", "per-layer parameter and MAC report");
  describe->add_option("--config", config, "config file");
  describe->add_option("--csv", csv, "also write the report as CSV");

  auto* init = app.add_subcommand("init", "write seeded initial weights");
  init->add_option("--config", config, "config file");
  init->add_option("--output", output, "SLWZ weight file")->required();

  auto* forward = app.add_subcommand("forward", "encode one clip");
  forward->add_option("--config", config, "config file");
  forward->add_option("--weights", weights, "SLWZ weight file (default: seeded init)");
  forward->add_option("--input", input, "SLT1 clip T x H x W x 1")->required();
  forward->add_option("--output", output, "SLT1 features T x 512")->required();

  auto* bench = app.add_subcommand("bench", "forward latency over clip lengths");
  bench->add_option("--config", config, "config file");
  bench->add_option("--t-values", t_values, "comma-separated clip lengths");
  bench->add_option("--reps", reps, "timed repetitions per length");
  bench->add_option("--csv", csv, "also write rows as CSV");
  bench->add_option("--threads", threads, "frame-parallel workers");
  bench->add_option("--seed", seed, "synthetic clip seed");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference suite in double");
  gradcheck->add_option("--config", config, "reduced model config");
  gradcheck->add_option("--seed", seed, "shape and value seed");
  gradcheck->add_option("--tolerance", tolerance, "max relative error");

  auto* overfit_cmd = app.add_subcommand("overfit", "memorize the synthetic motion set");
  overfit_cmd->add_option("--config", config, "reduced model config");
  overfit_cmd->add_option("--steps", steps, "updates");
  overfit_cmd->add_option("--classes", classes, "motion directions");
  overfit_cmd->add_option("--lr", lr, "learning rate");
  overfit_cmd->add_option("--csv", csv, "also write the trace as CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? ok : config_error;
  }

  try {
    if (*describe) return cmd_describe(config, csv);
    if (*init) return cmd_init(config, output);
    if (*forward) return cmd_forward(config, weights, input, output);
    if (*bench) return cmd_bench(config, t_values, reps, csv, threads, seed);
    if (*gradcheck) return cmd_gradcheck(config, seed, tolerance);
    if (*overfit_cmd) return cmd_overfit(config, steps, classes, lr, csv);
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.fault() == FormatError::Fault::config_hash ? config_error : io_error;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return io_error;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return config_error;
  } catch (const DimensionError& e) {
    std::cerr << "shape error: " << e.what() << "\n";
    return config_error;
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return failed;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return failed;
  }
  return ok;
}
