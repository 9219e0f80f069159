#include <gtest/gtest.h>

#include "swinlip.hpp"

using namespace swinlip;

TEST(Bench, RejectsTooFewReps) {
  BenchOptions o;
  o.reps = 4;
  EXPECT_THROW(benchmark(ModelConfig::reduced(), o), ConfigError);
  o.reps = 5;
  o.frames.clear();
  EXPECT_THROW(benchmark(ModelConfig::reduced(), o), ConfigError);
  o.frames = {2};
  o.threads = 0;
  EXPECT_THROW(benchmark(ModelConfig::reduced(), o), ConfigError);
}

TEST(Bench, RowsSortedAndUnique) {
  BenchOptions o;
  o.frames = {4, 2, 4};
  const BenchResult r = benchmark(ModelConfig::reduced(), o);
  ASSERT_EQ(r.rows.size(), 2u);
  EXPECT_EQ(r.rows[0].frames, 2u);
  EXPECT_EQ(r.rows[1].frames, 4u);
  for (const auto& row : r.rows) {
    EXPECT_GT(row.mean_ms, 0.0);
    EXPECT_GE(row.std_ms, 0.0);
    EXPECT_EQ(row.reps, 5u);
  }
  const std::string csv = r.csv();
  EXPECT_EQ(csv.rfind("model,T,mean_ms,std_ms,reps\nswinlip,2,", 0), 0u);
  EXPECT_FALSE(r.machine.empty());
}

TEST(MotionData, DeterministicAndLabelled) {
  const auto a = motion_dataset(6, 3, 4, 40, 40, 7);
  const auto b = motion_dataset(6, 3, 4, 40, 40, 7);
  const auto c = motion_dataset(6, 3, 4, 40, 40, 8);
  ASSERT_EQ(a.size(), 6u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].label, i % 3);
    EXPECT_EQ(a[i].pixels.shape(), (Shape{4, 40, 40, 1}));
    EXPECT_TRUE(bitwise_equal(a[i].pixels, b[i].pixels));
  }
  EXPECT_FALSE(bitwise_equal(a[0].pixels, c[0].pixels));
  EXPECT_THROW(motion_dataset(6, 1, 4, 40, 40, 0), ConfigError);
  EXPECT_THROW(motion_dataset(2, 3, 4, 40, 40, 0), ConfigError);
}

TEST(MotionData, SquareMovesAlongClassDirection) {
  // class 0 drifts horizontally, class 1 vertically
  const auto d = motion_dataset(2, 2, 3, 48, 48, 1);
  auto centroid = [](const Tensor<float>& px, std::size_t t) {
    double sy = 0, sx = 0, n = 0;
    for (std::size_t y = 0; y < 48; ++y)
      for (std::size_t x = 0; x < 48; ++x)
        if (px.at({t, y, x, 0}) > 0.5f) sy += double(y), sx += double(x), n += 1;
    return std::pair{sy / n, sx / n};
  };
  const auto h0 = centroid(d[0].pixels, 0), h2 = centroid(d[0].pixels, 2);
  const auto v0 = centroid(d[1].pixels, 0), v2 = centroid(d[1].pixels, 2);
  EXPECT_GT(std::abs(h2.second - h0.second), 4.0);
  EXPECT_LT(std::abs(h2.first - h0.first), 1.0);
  EXPECT_GT(std::abs(v2.first - v0.first), 4.0);
  EXPECT_LT(std::abs(v2.second - v0.second), 1.0);
}

TEST(Overfit, ZeroLearningRateKeepsLossConstant) {
  ModelConfig cfg = ModelConfig::reduced();
  cfg.input.frames = 3;
  OverfitOptions o;
  o.steps = 2;
  o.clips = 4;
  o.lr = 0.0;
  std::size_t seen = 0;
  const OverfitResult r = overfit(cfg, o, [&](const OverfitStep&) { ++seen; });
  ASSERT_EQ(r.trace.size(), 3u);
  EXPECT_EQ(seen, 3u);
  EXPECT_EQ(r.trace[0].loss, r.trace[2].loss);
  EXPECT_EQ(r.csv().rfind("step,loss,accuracy\n0,", 0), 0u);
}

TEST(Overfit, LossDecreasesOnStreamingVariant) {
  ModelConfig cfg = ModelConfig::reduced(true);
  cfg.input.frames = 4;
  OverfitOptions o;
  o.steps = 10;
  o.clips = 4;
  const OverfitResult r = overfit(cfg, o);
  EXPECT_LT(r.last().loss, r.trace.front().loss);
}

TEST(Overfit, RejectsBaselineAndBadClasses) {
  EXPECT_THROW(overfit(ModelConfig::resnet18_frontend(), OverfitOptions{}), ConfigError);
  OverfitOptions o;
  o.classes = 1;
  EXPECT_THROW(overfit(ModelConfig::reduced(), o), ConfigError);
}
