#include <gtest/gtest.h>

#include "swinlip.hpp"

using namespace swinlip;

namespace {

std::uint64_t buffer_elements(const ModelConfig& cfg) {
  std::uint64_t n = 0;
  for (const auto& s : model_layout(cfg))
    if (is_buffer_name(s.name)) n += numel(s.shape);
  return n;
}

std::uint64_t trainable_elements(const ModelConfig& cfg) {
  std::uint64_t n = 0;
  for (const auto& s : model_layout(cfg))
    if (!is_buffer_name(s.name)) n += numel(s.shape);
  return n;
}

void expect_within(double value, double target, double rel) {
  EXPECT_LE(std::abs(value - target), rel * target) << value << " vs " << target;
}

std::vector<ModelConfig> variants() {
  std::vector<ModelConfig> out = {ModelConfig::swinlip(), ModelConfig::swinlip_streaming(),
                                  ModelConfig::resnet18_frontend(), ModelConfig::reduced(),
                                  ModelConfig::reduced(true)};
  ModelConfig a = ModelConfig::swinlip();
  a.temporal.dw_kernel = 31;
  a.stages[2].depth = 4;
  a.temporal.blocks = 3;
  out.push_back(a);
  ModelConfig b = ModelConfig::swinlip();
  b.stem.kernel = {5, 7, 7};
  b.stem.pad = {2, 3, 3};
  b.stem.conv_bias = false;
  b.stem.activation = Activation::relu;
  out.push_back(b);
  return out;
}

}  // namespace

TEST(CostReport, ParamsEqualBuiltTensorSizes) {
  for (const auto& cfg : variants()) {
    const CostReport rep = count_costs(cfg);
    EXPECT_EQ(rep.total_params(), trainable_elements(cfg)) << to_string(cfg.kind);
    EXPECT_EQ(rep.buffers, buffer_elements(cfg));
  }
  const Model<float> m = build<float>(ModelConfig::reduced());
  EXPECT_EQ(count_params(m), m.params.trainable_elements());
}

TEST(CostReport, HandCountedRows) {
  const CostReport rep = count_costs(ModelConfig::swinlip());
  const std::uint64_t T = 29;
  // stem: T*88*88 outputs x 24 channels x (3*5*5) taps
  EXPECT_EQ(rep.find("stem.conv")->macs, T * 88 * 88 * 24 * 75);
  EXPECT_EQ(rep.find("stem.conv")->params, 75u * 24 + 24);
  EXPECT_EQ(rep.find("stem.bn")->params, 48u);
  // embedding: 64 tokens per frame, 11*11*24 inputs, 64 outputs
  EXPECT_EQ(rep.find("swin.embed.proj")->macs, T * 64 * 2904 * 64);
  EXPECT_EQ(rep.find("swin.embed.proj")->params, 2904u * 64 + 64);
  // window attention: every token scores 16 keys and mixes 16 values
  EXPECT_EQ(rep.find("swin.stage1.block0.attn")->macs, T * 64 * 16 * 64 * 2);
  EXPECT_EQ(rep.find("swin.stage1.block0.attn")->params, 49u * 2);
  EXPECT_EQ(rep.find("swin.stage3.block0.attn")->macs, T * 4 * 4 * 256 * 2);
  EXPECT_EQ(rep.find("swin.stage3.merge.reduction")->params, 1024u * 512);
  // temporal attention: QK^T + AV + position scores over 2T-1 offsets
  EXPECT_EQ(rep.find("temporal.block0.mhsa")->macs, T * 512 * (T + T + 2 * T - 1));
  EXPECT_EQ(rep.find("temporal.block0.mhsa.pos")->macs, (2 * T - 1) * 512 * 512);
  EXPECT_EQ(rep.find("temporal.block0.mhsa.pos")->params, 512u * 512);
  EXPECT_EQ(rep.find("temporal.block0.conv.dw")->macs, T * 512 * 15);
  EXPECT_EQ(rep.find("temporal.block0.conv.pw1")->params, 512u * 1024 + 1024);
  // zero-MAC conventions
  EXPECT_EQ(rep.find("stem.act")->macs, 0u);
  EXPECT_EQ(rep.find("swin.stage1.block0.norm1")->macs, 0u);
}

TEST(CostReport, SpatialCostLinearInFrames) {
  const ModelConfig cfg = ModelConfig::swinlip();
  const CostReport a = count_costs(cfg, {10, 88, 88, 1});
  const CostReport b = count_costs(cfg, {20, 88, 88, 1});
  EXPECT_EQ(2 * a.macs_under("swin."), b.macs_under("swin."));
  EXPECT_EQ(2 * a.macs_under("stem."), b.macs_under("stem."));
  EXPECT_GT(b.macs_under("temporal."), 2 * a.macs_under("temporal."));
  EXPECT_EQ(a.total_params(), b.total_params());
}

TEST(CostReport, StreamingDeltaIsTemporalAttentionOnly) {
  const CostReport full = count_costs(ModelConfig::swinlip());
  const CostReport stream = count_costs(ModelConfig::swinlip_streaming());
  std::int64_t dp = 0, dm = 0;
  for (const auto& d : diff_reports(full, stream)) {
    if (d.params == 0 && d.macs == 0 && !d.only_in_a && !d.only_in_b) continue;
    EXPECT_EQ(d.layer.rfind("temporal.", 0), 0u) << d.layer;
    EXPECT_NE(d.layer.find(".mhsa"), std::string::npos) << d.layer;
    EXPECT_TRUE(d.only_in_a) << d.layer;
    dp += d.params;
    dm += d.macs;
  }
  EXPECT_EQ(dp, std::int64_t(stream.total_params()) - std::int64_t(full.total_params()));
  EXPECT_EQ(dm, std::int64_t(stream.total_macs()) - std::int64_t(full.total_macs()));
  EXPECT_LT(dp, 0);
}

TEST(CostReport, DiffAlignsRowsBothWays) {
  CostReport a, b;
  a.rows = {{"x", 1, 2, {}}, {"y", 3, 4, {}}};
  b.rows = {{"y", 5, 4, {}}, {"z", 1, 1, {}}};
  const auto d = diff_reports(a, b);
  ASSERT_EQ(d.size(), 3u);
  EXPECT_TRUE(d[0].only_in_a);
  EXPECT_EQ(d[0].params, -1);
  EXPECT_EQ(d[1].params, 2);
  EXPECT_EQ(d[1].macs, 0);
  EXPECT_TRUE(d[2].only_in_b);
}

TEST(CostReport, CsvAndTextFormats) {
  const CostReport rep = count_costs(ModelConfig::swinlip());
  const std::string csv = rep.csv();
  EXPECT_EQ(csv.rfind("layer,params,macs,out_shape\nstem.conv,1824,", 0), 0u);
  EXPECT_NE(csv.find("\ntotal," + std::to_string(rep.total_params()) + "," +
                     std::to_string(rep.total_macs()) + ",\n"),
            std::string::npos);
  EXPECT_NE(csv.find("stem.conv,1824,404236800,29x88x88x24"), std::string::npos);
  const std::string text = rep.text();
  EXPECT_NE(text.find("params ≈ 12.45 M, MACs ≈ 1.92 G"), std::string::npos);
  EXPECT_NE(text.find("per module"), std::string::npos);
  EXPECT_NE(text.find("shift clamped"), std::string::npos);
  EXPECT_EQ(rep.convention(), "1 MAC counted as 1 FLOP");
  const auto mods = rep.modules();
  ASSERT_EQ(mods.size(), 3u);
  EXPECT_EQ(mods[0].params + mods[1].params + mods[2].params, rep.total_params());
}

TEST(CostReport, FlopFactorIsExplicit) {
  CostReport rep = count_costs(ModelConfig::reduced());
  EXPECT_EQ(rep.total_flops(), double(rep.total_macs()));
  rep.flops_per_mac = 2;
  EXPECT_EQ(rep.total_flops(), 2.0 * double(rep.total_macs()));
  EXPECT_EQ(rep.convention(), "1 MAC counted as 2 FLOP");
}

TEST(CostReport, StemProbe) {
  const CostReport rep = stem_variant_cost_probe(ModelConfig::swinlip(), {5, 7, 7});
  EXPECT_EQ(rep.find("stem.conv")->macs, 29u * 88 * 88 * 24 * 245);
  EXPECT_EQ(rep.find("stem.conv")->out_shape, (Shape{29, 88, 88, 24}));
  EXPECT_EQ(rep.macs_under("swin."), count_costs(ModelConfig::swinlip()).macs_under("swin."));
  EXPECT_THROW(stem_variant_cost_probe(ModelConfig::swinlip(), {4, 7, 7}), ConfigError);
}

TEST(CostReport, ReferenceBudgets) {
  const CostReport s = count_costs(ModelConfig::swinlip());
  expect_within(double(s.total_params()), 12.46e6, 0.03);
  expect_within(double(s.total_macs()), 1.92e9, 0.05);
  const CostReport st = count_costs(ModelConfig::swinlip_streaming());
  expect_within(double(st.total_params()), 9.82e6, 0.03);
  expect_within(double(st.total_macs()), 1.84e9, 0.05);
  const CostReport probe = stem_variant_cost_probe(ModelConfig::swinlip(), {5, 7, 7});
  expect_within(double(probe.total_params()), 12.47e6, 0.03);
  expect_within(double(probe.total_macs()), 2.84e9, 0.05);
  const CostReport r = count_costs(ModelConfig::resnet18_frontend());
  expect_within(double(r.total_params()), 11.18e6, 0.05);
  expect_within(double(r.total_macs()), 9.2e9, 0.10);
}

TEST(CostReport, RejectsBadInputShape) {
  EXPECT_THROW(count_costs(ModelConfig::swinlip(), {29, 88, 88, 3}), ConfigError);
  EXPECT_THROW(count_costs(ModelConfig::swinlip(), {29, 90, 90, 1}), ConfigError);
}
