#include <gtest/gtest.h>

#include <set>

#include "swinlip.hpp"

using namespace swinlip;

namespace {

// Forward is x*x, backward claims 1.9*x.
Tensor<double> broken_square(const Tensor<double>& x) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (auto& v : out) v *= v;
  return detail::finish(Tensor<double>(x.shape(), std::move(out)), x.tape(), "broken_square",
                        {x.node()}, [x](const Tensor<double>& g, Tape<double>& tape) {
                          tape.accumulate(x, mul(g.detached(), scale(x.detached(), 1.9)));
                        });
}

GradCheckOptions strict() {
  GradCheckOptions o;
  o.tolerance = 1e-5;
  return o;
}

}  // namespace

TEST(GradCheck, ElementaryOpsOverTwentySeeds) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto cases = elementary_grad_cases(seed);
    for (const auto& c : cases) {
      const GradCheckReport r = finite_diff_check(c.fn, c.inputs, strict());
      EXPECT_TRUE(r.passed) << c.name << " seed " << seed << " err " << r.max_rel_error
                            << " analytic " << r.worst_analytic << " numeric "
                            << r.worst_numeric;
      EXPECT_GT(r.entries, 0u) << c.name;
    }
  }
}

TEST(GradCheck, RegistryCoversEveryOp) {
  std::set<std::string> names;
  for (const auto& c : elementary_grad_cases(0)) EXPECT_TRUE(names.insert(c.name).second);
  for (const auto& c : module_grad_cases(0)) EXPECT_TRUE(names.insert(c.name).second);
  for (const char* n :
       {"add", "mul", "matmul", "softmax", "layer_norm", "batch_norm_train", "conv3d", "conv2d",
        "dwconv1d_causal", "maxpool2d", "gelu", "prelu", "glu", "rel_shift", "gather_rows",
        "roll", "cross_entropy", "stem", "window_mhsa_masked", "patch_merge", "rel_mhsa",
        "conv_module", "temporal_stack_streaming"})
    EXPECT_TRUE(names.count(n)) << n;
}

TEST(GradCheck, ModuleCases) {
  GradSuite suite;
  for (auto& c : module_grad_cases(1)) suite.add(std::move(c));
  for (const auto& r : suite.run(strict()))
    EXPECT_TRUE(r.report.passed) << r.name << " err " << r.report.max_rel_error;
}

TEST(GradCheck, ReducedEncoderEndToEnd) {
  ModelConfig cfg = ModelConfig::reduced();
  cfg.input.frames = 3;
  GradSuite suite;
  suite.add(end_to_end_grad_case(cfg, 1));
  const auto r = suite.run(strict());
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r[0].name, "end_to_end_swinlip");
  EXPECT_TRUE(r[0].report.passed) << r[0].report.max_rel_error;
}

TEST(GradCheck, CorruptedBackwardIsCaught) {
  Rng rng(3);
  GradSuite suite;
  suite.add({"broken_square", {detail::spread({3, 4}, rng)},
             [](const std::vector<Tensor<double>>& xs) {
               return detail::project(broken_square(xs[0]), 11);
             }});
  suite.add({"square", {detail::spread({3, 4}, rng)},
             [](const std::vector<Tensor<double>>& xs) {
               return detail::project(mul(xs[0], xs[0]), 11);
             }});
  std::vector<std::string> failed;
  for (const auto& r : suite.run(strict()))
    if (!r.report.passed) failed.push_back(r.name);
  ASSERT_EQ(failed, std::vector<std::string>{"broken_square"});
}

TEST(GradCheck, ReportsWorstEntry) {
  Rng rng(4);
  const Tensor<double> x = detail::spread({5}, rng);
  const GradCheckReport r = finite_diff_check(
      [](const Tensor<double>& v) { return detail::project(broken_square(v), 2); }, x);
  EXPECT_FALSE(r.passed);
  EXPECT_EQ(r.entries, 5u);
  EXPECT_NEAR(r.worst_analytic / r.worst_numeric, 0.95, 1e-6);
}

TEST(GradCheck, MaxEntriesLimitsProbes) {
  Rng rng(5);
  const Tensor<double> x = detail::spread({40}, rng);
  GradCheckOptions o;
  o.max_entries = 7;
  const GradCheckReport r =
      finite_diff_check([](const Tensor<double>& v) { return sum(mul(v, v)); }, x, o);
  EXPECT_EQ(r.entries, 7u);
  EXPECT_TRUE(r.passed);
}

TEST(GradCheck, RejectsNonDeterministicFunction) {
  int calls = 0;
  const Tensor<double> x({3}, 1.0);
  EXPECT_THROW(finite_diff_check(
                   [&](const Tensor<double>& v) { return scale(sum(v), double(++calls)); }, x),
               Error);
}

TEST(GradCheck, RejectsNonScalarFunction) {
  const Tensor<double> x({3}, 1.0);
  EXPECT_THROW(finite_diff_check([](const Tensor<double>& v) { return scale(v, 2.0); }, x),
               TapeError);
}
