#include <gtest/gtest.h>

#include "oracles.hpp"
#include "swinlip.hpp"

using namespace swinlip;

TEST(Conv3d, MatchesSevenLoopOracle) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const std::size_t T = 2 + rng.below(4), H = 3 + rng.below(6), W = 3 + rng.below(6);
    const std::size_t cin = 1 + rng.below(3), cout = 1 + rng.below(5);
    const std::size_t kt = 1 + rng.below(3), kh = 1 + rng.below(3), kw = 1 + rng.below(3);
    const Extent3 stride{1 + rng.below(2), 1 + rng.below(2), 1 + rng.below(2)};
    const Extent3 pad{rng.below(kt), rng.below(kh), rng.below(kw)};
    if (kt > T + 2 * pad[0]) continue;
    Tensor<double> x = random_normal<double>({T, H, W, cin}, rng);
    Tensor<double> w = random_normal<double>({kt, kh, kw, cin, cout}, rng);
    Tensor<double> b = random_normal<double>({cout}, rng);
    const oracle::Vec bv = oracle::values(b);
    std::size_t To, Ho, Wo;
    const auto ref = oracle::conv3d(oracle::values(x), T, H, W, cin, oracle::values(w), kt, kh,
                                    kw, cout, &bv, stride, pad, To, Ho, Wo);
    const Tensor<double> y = conv3d(x, w, &b, stride, pad);
    ASSERT_EQ(y.shape(), (Shape{To, Ho, Wo, cout})) << seed;
    for (std::size_t i = 0; i < ref.size(); ++i) ASSERT_NEAR(y[i], ref[i], 1e-10) << seed;
  }
}

TEST(Conv3d, FloatAgreesWithDouble) {
  Rng rng(4);
  Tensor<double> x = random_normal<double>({5, 12, 12, 1}, rng);
  Tensor<double> w = random_normal<double>({3, 5, 5, 1, 24}, rng, 0.2);
  const Tensor<double> y = conv3d(x, w, nullptr, {1, 1, 1}, {1, 2, 2});
  const Tensor<float> yf =
      conv3d(x.cast<float>(), w.cast<float>(), nullptr, {1, 1, 1}, {1, 2, 2});
  EXPECT_LT(max_abs_diff(yf.cast<double>(), y), 1e-5);
}

TEST(Conv3d, RejectsBadShapes) {
  Tensor<float> x({2, 4, 4, 2});
  EXPECT_THROW(conv3d(x, Tensor<float>({1, 1, 1, 3, 4}), nullptr, {1, 1, 1}, {0, 0, 0}),
               DimensionError);
  EXPECT_ANY_THROW(conv3d(x, Tensor<float>({1, 7, 7, 2, 4}), nullptr, {1, 1, 1}, {0, 0, 0}));
}

TEST(Conv2d, GroupedMatchesOracle) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const std::size_t groups = 1 + rng.below(3);
    const std::size_t cin = groups * (1 + rng.below(3)), cout = groups * (1 + rng.below(3));
    const std::size_t N = 1 + rng.below(3), H = 3 + rng.below(5), W = 3 + rng.below(5);
    const std::size_t kh = 1 + rng.below(3), kw = 1 + rng.below(3);
    const std::size_t sh = 1 + rng.below(2), sw = 1 + rng.below(2);
    const Pad2 pad{rng.below(2), rng.below(2), rng.below(3), rng.below(2)};
    Tensor<double> x = random_normal<double>({N, H, W, cin}, rng);
    Tensor<double> w = random_normal<double>({kh, kw, cin / groups, cout}, rng);
    std::size_t Ho, Wo;
    const auto ref = oracle::conv2d(oracle::values(x), N, H, W, cin, oracle::values(w), kh, kw,
                                    cout, nullptr, sh, sw, pad.top, pad.bottom, pad.left,
                                    pad.right, groups, Ho, Wo);
    const Tensor<double> y = conv2d(x, w, nullptr, {sh, sw}, pad, groups);
    ASSERT_EQ(y.shape(), (Shape{N, Ho, Wo, cout})) << seed;
    for (std::size_t i = 0; i < ref.size(); ++i) ASSERT_NEAR(y[i], ref[i], 1e-10) << seed;
  }
}

TEST(Dwconv1d, CausalAndCentredPadding) {
  Rng rng(8);
  const std::size_t T = 9, C = 3, K = 5;
  Tensor<double> x = random_normal<double>({T, C}, rng);
  Tensor<double> w = random_normal<double>({K, C}, rng);
  Tensor<double> b = random_normal<double>({C}, rng);
  for (bool causal : {false, true}) {
    const std::size_t left = causal ? K - 1 : (K - 1) / 2, right = causal ? 0 : (K - 1) / 2;
    const Tensor<double> y = dwconv1d(x, w, &b, left, right);
    ASSERT_EQ(y.shape(), (Shape{T, C}));
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t c = 0; c < C; ++c) {
        double s = b[c];
        for (std::size_t k = 0; k < K; ++k) {
          const long src = long(t + k) - long(left);
          if (src >= 0 && src < long(T)) s += w.at({k, c}) * x.at({std::size_t(src), c});
        }
        EXPECT_NEAR(y.at({t, c}), s, 1e-12);
      }
  }
}

TEST(MaxPool, MatchesWindowMax) {
  Rng rng(12);
  Tensor<double> x = random_normal<double>({2, 7, 8, 3}, rng);
  const Tensor<double> y = maxpool2d(x, 3, 2, 1);
  ASSERT_EQ(y.shape(), (Shape{2, 4, 4, 3}));
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j)
        for (std::size_t c = 0; c < 3; ++c) {
          double m = -1e300;
          for (long a = long(2 * i) - 1; a <= long(2 * i) + 1; ++a)
            for (long b = long(2 * j) - 1; b <= long(2 * j) + 1; ++b)
              if (a >= 0 && b >= 0 && a < 7 && b < 8)
                m = std::max(m, x.at({n, std::size_t(a), std::size_t(b), c}));
          EXPECT_EQ(y.at({n, i, j, c}), m);
        }
}

TEST(Stem, DefaultPresetPreservesExtents) {
  ModelConfig cfg = ModelConfig::swinlip();
  LayoutBuilder b;
  stem_layout(b, cfg.stem, 1);
  Rng rng(0);
  const ParamStore<float> ps = initialize<float>(b.layout(), rng);
  const Tensor<float> clip = random_normal<float>({4, 88, 88, 1}, rng);
  const Tensor<float> y = stem_forward(clip, cfg.stem, ps, RunOptions{});
  EXPECT_EQ(y.shape(), (Shape{4, 88, 88, 24}));
  for (float v : y.data()) ASSERT_TRUE(std::isfinite(v));
}

TEST(Stem, ConvBnPreluMatchesOracle) {
  StemConfig s{{3, 3, 3}, {1, 1, 1}, {1, 1, 1}, 4, true, true, Activation::prelu};
  LayoutBuilder b;
  stem_layout(b, s, 1);
  Rng rng(1);
  ParamStore<double> ps = initialize<double>(b.layout(), rng);
  for (auto& t : ps.tensors())
    for (auto& v : t.mutable_data()) v += 0.3 * rng.normal();
  for (auto& v : ps.get("stem.bn.running_var").mutable_data()) v = 1.0 + std::abs(v);
  const Tensor<double> clip = random_normal<double>({3, 6, 5, 1}, rng);
  const Tensor<double> y = stem_forward(clip, s, ps, RunOptions{});
  std::size_t To, Ho, Wo;
  const oracle::Vec bias = oracle::values(ps.get("stem.conv.bias"));
  auto ref = oracle::conv3d(oracle::values(clip), 3, 6, 5, 1,
                            oracle::values(ps.get("stem.conv.weight")), 3, 3, 3, 4, &bias,
                            {1, 1, 1}, {1, 1, 1}, To, Ho, Wo);
  ref = oracle::batch_norm(ref, 4, oracle::values(ps.get("stem.bn.weight")),
                           oracle::values(ps.get("stem.bn.bias")),
                           oracle::values(ps.get("stem.bn.running_mean")),
                           oracle::values(ps.get("stem.bn.running_var")));
  const oracle::Vec slope = oracle::values(ps.get("stem.act.weight"));
  for (std::size_t i = 0; i < ref.size(); ++i)
    if (ref[i] < 0) ref[i] *= slope[i % 4];
  ASSERT_EQ(y.shape(), (Shape{3, 6, 5, 4}));
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-10);
}

TEST(Stem, BaselineHalvesSpatialExtent) {
  ModelConfig cfg = ModelConfig::resnet18_frontend();
  LayoutBuilder b;
  stem_layout(b, cfg.stem, 1);
  Rng rng(0);
  const ParamStore<float> ps = initialize<float>(b.layout(), rng);
  EXPECT_FALSE(ps.contains("stem.conv.bias"));
  const Tensor<float> y =
      stem_forward(random_normal<float>({3, 88, 88, 1}, rng), cfg.stem, ps, RunOptions{});
  EXPECT_EQ(y.shape(), (Shape{3, 44, 44, 64}));
  for (float v : y.data()) ASSERT_GE(v, 0.0f);
}

TEST(Clip, RejectsWrongRank) {
  EXPECT_THROW(Clip<float>(Tensor<float>({2, 8, 8})), DimensionError);
  EXPECT_THROW(Clip<float>(Tensor<float>({2, 8, 8, 3})), DimensionError);
  Clip<float> c(Tensor<float>({2, 8, 6, 1}));
  EXPECT_EQ(c.frames(), 2u);
  EXPECT_EQ(c.width(), 6u);
}
