#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <map>

#include "msamseg/checkpoint.hpp"
#include "msamseg/network.hpp"
#include "msamseg/rng.hpp"
#include "test_util.hpp"

namespace msamseg {
namespace {

using test::random_image;
using test::small_config;

TEST(ModelConfig, SizeMustDivideByDepth) {
  ModelConfig c;
  c.height = 60;
  EXPECT_THROW(c.validate(), ConfigError);
  c.height = 64;
  c.depth = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c.depth = 3;
  EXPECT_NO_THROW(c.validate());
}

TEST(ModelConfig, LabelsAndJsonRoundTrip) {
  ModelConfig c;
  c.backbone_input = BackboneInput::kPETCT;
  c.msam_input = MsamInput::kPETCT;
  EXPECT_EQ(c.label(), "U-Net(PETCT)+MSAM(PETCT)");
  EXPECT_EQ(model_config_from_json(model_config_to_json(c)), c);
  c.msam_input = MsamInput::kOff;
  EXPECT_EQ(c.label(), "U-Net(PETCT)");
  EXPECT_THROW(parse_backbone_input("MRI"), ConfigError);
}

// Hand enumeration of the depth-3, width-16 backbone with CT input.
TEST(BuildModel, InventoryMatchesStageListing) {
  ModelConfig c;
  c.msam_input = MsamInput::kOff;
  const std::vector<std::pair<std::string, Shape>> expected = {
      {"backbone.enc0.conv0", {16, 1, 3, 3}},        {"backbone.enc0.conv1", {16, 16, 3, 3}},
      {"backbone.enc1.conv0", {32, 16, 3, 3}},       {"backbone.enc1.conv1", {32, 32, 3, 3}},
      {"backbone.enc2.conv0", {64, 32, 3, 3}},       {"backbone.enc2.conv1", {64, 64, 3, 3}},
      {"backbone.bottleneck.conv0", {128, 64, 3, 3}}, {"backbone.bottleneck.conv1", {128, 128, 3, 3}},
      {"backbone.dec2.up", {128, 64, 2, 2}},         {"backbone.dec2.conv1", {64, 128, 3, 3}},
      {"backbone.dec2.conv2", {64, 64, 3, 3}},       {"backbone.dec1.up", {64, 32, 2, 2}},
      {"backbone.dec1.conv1", {32, 64, 3, 3}},       {"backbone.dec1.conv2", {32, 32, 3, 3}},
      {"backbone.dec0.up", {32, 16, 2, 2}},          {"backbone.dec0.conv1", {16, 32, 3, 3}},
      {"backbone.dec0.conv2", {16, 16, 3, 3}},       {"backbone.head", {2, 16, 1, 1}},
  };
  const auto p = build_model<float>(c, 1);
  ASSERT_EQ(p.entries.size(), 2 * expected.size());
  std::size_t total = 0;
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const auto& [prefix, shape] = expected[i];
    EXPECT_EQ(p.entries[2 * i].name, prefix + ".weight");
    EXPECT_EQ(p.entries[2 * i].value.shape(), shape) << prefix;
    EXPECT_EQ(p.entries[2 * i + 1].name, prefix + ".bias");
    const std::size_t out = prefix.ends_with(".up") ? shape.c : shape.n;
    EXPECT_EQ(p.entries[2 * i + 1].value.size(), out) << prefix;
    total += shape.numel() + out;
  }
  EXPECT_EQ(p.scalar_count(), total);
  EXPECT_EQ(total, 481762u);
}

TEST(BuildModel, NoMsamParametersWhenOff) {
  ModelConfig c = small_config(MsamInput::kOff);
  for (const auto& e : build_model<float>(c, 3).entries) EXPECT_EQ(e.subnet, Subnet::kBackbone) << e.name;
  c.msam_input = MsamInput::kPETCT;
  const auto p = build_model<float>(c, 3);
  EXPECT_NE(p.find("msam.enc0.conv0.weight"), nullptr);
  EXPECT_EQ(p.find("msam.enc0.conv0.weight")->value.shape().c, 2u);
}

TEST(BuildModel, DeterministicForSeed) {
  const ModelConfig c = small_config(MsamInput::kPET);
  EXPECT_EQ(build_model<float>(c, 9), build_model<float>(c, 9));
  EXPECT_FALSE(build_model<float>(c, 9) == build_model<float>(c, 10));
}

TEST(BuildModel, BackboneUnaffectedByMsam) {
  const auto off = build_model<float>(small_config(MsamInput::kOff), 5);
  const auto on = build_model<float>(small_config(MsamInput::kPET), 5);
  for (std::size_t i = 0; i < off.entries.size(); ++i) {
    EXPECT_EQ(off.entries[i].name, on.entries[i].name);
    EXPECT_EQ(off.entries[i].value, on.entries[i].value) << off.entries[i].name;
  }
  EXPECT_GT(on.entries.size(), off.entries.size());
}

TEST(BuildModel, HeNormalWeightsAndZeroBiases) {
  ModelConfig c;
  const auto p = build_model<double>(c, 2);
  for (const auto& e : p.entries) {
    if (e.name.ends_with(".bias")) {
      for (double v : e.value.storage()) ASSERT_EQ(v, 0.0) << e.name;
    }
  }
  // 32*32*9 = 9216 draws with variance 2/288; sample variance SE ~ sqrt(2/n).
  const auto& w = p.find("backbone.enc1.conv1.weight")->value;
  double mean = 0, sq = 0;
  for (double v : w.storage()) mean += v;
  mean /= static_cast<double>(w.size());
  for (double v : w.storage()) sq += (v - mean) * (v - mean);
  const double var = sq / static_cast<double>(w.size());
  const double target = 2.0 / 288.0;
  EXPECT_NEAR(var / target, 1.0, 4 * std::sqrt(2.0 / 9216.0));
  EXPECT_NEAR(mean, 0.0, 4 * std::sqrt(target / 9216.0));
}

TEST(BuildModel, HeadsDrawnBiasesZero) {
  const ModelConfig c = small_config(MsamInput::kPET);
  const auto p = build_model<float>(c, 4);
  for (const char* name : {"backbone.head.weight", "msam.head.weight"}) {
    std::size_t nonzero = 0;
    for (float v : p.find(name)->value.storage()) nonzero += v != 0.0f;
    EXPECT_EQ(nonzero, p.find(name)->value.size()) << name;
  }
  for (const auto& e : p.entries) {
    if (!e.name.ends_with(".bias")) continue;
    for (float v : e.value.storage()) EXPECT_EQ(v, 0.0f) << e.name;
  }
  const auto r = model_forward(c, p, random_image(2, 16, 11), random_image(2, 16, 12));
  bool asymmetric = false;
  for (float v : r.probabilities.storage()) asymmetric |= v != 0.5f;
  EXPECT_TRUE(asymmetric);
}

TEST(MsamForward, ZeroParametersGiveZeroMap) {
  const ModelConfig c = small_config(MsamInput::kPET);
  auto p = build_model<float>(c, 1);
  for (auto& e : p.entries) e.value.fill(0.0f);
  const auto m = msam_forward(c, p, random_image(2, 16, 1));
  EXPECT_EQ(m, Tensor<float>({2, 1, 16, 16}));
}

TEST(MsamForward, NonnegativeWithRandomParameters) {
  const ModelConfig c = small_config(MsamInput::kPETCT);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto p = test::randomized_params(c, seed);
    const auto m = msam_forward(c, p, test::concat(random_image(2, 16, seed), random_image(2, 16, seed + 100)));
    EXPECT_EQ(m.shape(), (Shape{2, 1, 16, 16}));
    for (float v : m.storage()) ASSERT_GE(v, 0.0f);
  }
}

TEST(MsamForward, FullSizeShapeAndOffError) {
  ModelConfig c;
  c.base_width = 4;
  const auto p = build_model<float>(c, 1);
  EXPECT_EQ(msam_forward(c, p, random_image(1, 64, 2)).shape(), (Shape{1, 1, 64, 64}));
  c.msam_input = MsamInput::kOff;
  EXPECT_THROW(msam_forward(c, build_model<float>(c, 1), random_image(1, 64, 2)), ConfigError);
}

TEST(GateSkip, IdentityZeroAndConstant) {
  Rng rng(3);
  Tensor<double> skip({1, 4, 16, 16});
  for (auto& v : skip.storage()) v = rng.normal();
  auto run = [&](double c) {
    Graph<double> g;
    return gate_skip(g.input(skip), g.input(Tensor<double>({1, 1, 64, 64}, c))).value();
  };
  EXPECT_EQ(run(1.0), skip);
  EXPECT_EQ(run(0.0), Tensor<double>(skip.shape()));
  const auto twice = run(2.0);
  for (std::size_t i = 0; i < skip.size(); ++i) EXPECT_EQ(twice[i], 2.0 * skip[i]);
}

TEST(ModelForward, ProbabilitiesSumToOne) {
  const ModelConfig c = small_config(MsamInput::kPET);
  const auto p = test::randomized_params(c, 2);
  const auto r = model_forward(c, p, random_image(3, 16, 1), random_image(3, 16, 2));
  ASSERT_TRUE(r.attention.has_value());
  for (std::size_t n = 0; n < 3; ++n)
    for (std::size_t i = 0; i < 256; ++i)
      EXPECT_NEAR(r.probabilities.plane(n, 0)[i] + r.probabilities.plane(n, 1)[i], 1.0f, 1e-6f);
}

TEST(ModelForward, ModalityIsolation) {
  const auto pet = random_image(2, 16, 1), ct = random_image(2, 16, 2), other = random_image(2, 16, 3);
  ModelConfig c = small_config(MsamInput::kOff);
  auto p = test::randomized_params(c, 1);
  EXPECT_EQ(model_forward(c, p, pet, ct).probabilities, model_forward(c, p, other, ct).probabilities);
  EXPECT_NE(model_forward(c, p, pet, ct).probabilities, model_forward(c, p, pet, other).probabilities);
  EXPECT_FALSE(model_forward(c, p, pet, ct).attention.has_value());
  c.backbone_input = BackboneInput::kPET;
  p = test::randomized_params(c, 1);
  EXPECT_EQ(model_forward(c, p, pet, ct).probabilities, model_forward(c, p, pet, other).probabilities);
  EXPECT_NE(model_forward(c, p, pet, ct).probabilities, model_forward(c, p, other, ct).probabilities);
}

TEST(ModelForward, ShapeMismatchIsValidationError) {
  const ModelConfig c = small_config(MsamInput::kPET);
  const auto p = build_model<float>(c, 1);
  EXPECT_THROW(model_forward(c, p, random_image(1, 16, 1), random_image(2, 16, 1)), ValidationError);
  EXPECT_THROW(model_forward(c, p, random_image(1, 8, 1), random_image(1, 8, 1)), ValidationError);
}

TEST(ModelForward, Deterministic) {
  const ModelConfig c = small_config(MsamInput::kPETCT);
  const auto p = test::randomized_params(c, 6);
  const auto pet = random_image(2, 16, 4), ct = random_image(2, 16, 5);
  const auto a = model_forward(c, p, pet, ct), b = model_forward(c, p, pet, ct);
  EXPECT_EQ(a.probabilities, b.probabilities);
  EXPECT_EQ(*a.attention, *b.attention);
}

class OverrideTest : public ::testing::Test {
 protected:
  ModelConfig config = small_config(MsamInput::kPET);
  SegmentationModel<float> model{config, test::randomized_params(config, 8)};
  Tensor<float> pet = random_image(2, 16, 21), ct = random_image(2, 16, 22);
};

TEST_F(OverrideTest, OnesMatchUngatedBitwise) {
  const auto ungated = model.forward(pet, ct, Gating::kDisabled);
  auto handle = model.inject_attention_override(Tensor<float>({2, 1, 16, 16}, 1.0f));
  const auto gated = model.forward(pet, ct);
  EXPECT_EQ(gated.probabilities, ungated.probabilities);
  ASSERT_EQ(gated.gated_skips.size(), ungated.gated_skips.size());
  for (std::size_t i = 0; i < gated.gated_skips.size(); ++i) EXPECT_EQ(gated.gated_skips[i], ungated.gated_skips[i]);
}

TEST_F(OverrideTest, ZerosSilenceEverySkip) {
  auto handle = model.inject_attention_override(Tensor<float>({2, 1, 16, 16}, 0.0f));
  const auto r = model.forward(pet, ct);
  ASSERT_EQ(r.gated_skips.size(), config.depth);
  for (const auto& s : r.gated_skips) {
    for (float v : s.storage()) ASSERT_EQ(v, 0.0f);
  }
  handle.release();
  EXPECT_NE(model.forward(pet, ct).probabilities, r.probabilities);
}

TEST_F(OverrideTest, OwnMapRoundTripsBitwise) {
  const auto normal = model.forward(pet, ct);
  auto handle = model.inject_attention_override(*normal.attention);
  EXPECT_EQ(model.forward(pet, ct).probabilities, normal.probabilities);
}

TEST_F(OverrideTest, HandleScopeRestoresSubnetwork) {
  const auto normal = model.forward(pet, ct);
  {
    auto handle = model.inject_attention_override(Tensor<float>({2, 1, 16, 16}, 0.0f));
  }
  EXPECT_EQ(model.forward(pet, ct).probabilities, normal.probabilities);
}

TEST_F(OverrideTest, HomogeneityAtGateOutputs) {
  const auto base_map = model.attention(pet, ct);
  std::vector<Tensor<float>> base;
  {
    auto h = model.inject_attention_override(base_map);
    base = model.forward(pet, ct).gated_skips;
  }
  for (float alpha : {0.0f, 0.25f, 0.5f, 2.0f, 8.0f}) {
    Tensor<float> scaled = base_map;
    for (auto& v : scaled.storage()) v *= alpha;
    auto h = model.inject_attention_override(scaled);
    const auto skips = model.forward(pet, ct).gated_skips;
    for (std::size_t l = 0; l < skips.size(); ++l)
      for (std::size_t i = 0; i < skips[l].size(); ++i) ASSERT_EQ(skips[l][i], alpha * base[l][i]) << alpha;
  }
  // Arbitrary alpha: exact in real arithmetic, so only rounding separates them.
  for (float alpha : {0.3f, 1.7f, 3.1f}) {
    Tensor<float> scaled = base_map;
    for (auto& v : scaled.storage()) v *= alpha;
    auto h = model.inject_attention_override(scaled);
    const auto skips = model.forward(pet, ct).gated_skips;
    for (std::size_t l = 0; l < skips.size(); ++l)
      for (std::size_t i = 0; i < skips[l].size(); ++i)
        ASSERT_NEAR(skips[l][i], alpha * base[l][i], 1e-5f * (1 + std::abs(alpha * base[l][i])));
  }
}

TEST_F(OverrideTest, WrongResolutionAndMissingMsam) {
  EXPECT_THROW(auto h = model.inject_attention_override(Tensor<float>({2, 1, 8, 8}, 1.0f)), ShapeError);
  EXPECT_THROW(auto h = model.inject_attention_override(Tensor<float>({2, 2, 16, 16}, 1.0f)), ShapeError);
  ModelConfig off = small_config(MsamInput::kOff);
  SegmentationModel<float> plain(off, build_model<float>(off, 1));
  EXPECT_THROW(auto h = plain.inject_attention_override(Tensor<float>({2, 1, 16, 16}, 1.0f)), ConfigError);
}

TEST(PredictMask, ThresholdAndTies) {
  Tensor<float> probs({1, 2, 1, 3}, std::vector<float>{0.3f, 0.5f, 1.0f, 0.7f, 0.5f, 0.0f});
  EXPECT_EQ(predict_mask(probs), Tensor<float>({1, 1, 1, 3}, std::vector<float>{1, 0, 0}));
  Tensor<float> background({1, 2, 2, 2});
  for (std::size_t i = 0; i < 4; ++i) background.plane(0, 0)[i] = 1.0f;
  EXPECT_EQ(predict_mask(background), Tensor<float>({1, 1, 2, 2}));
}

TEST(GradientReach, BothSubnetworksReceiveGradient) {
  for (auto msam : {MsamInput::kPET, MsamInput::kPETCT}) {
    const ModelConfig c = small_config(msam);
    const auto p = test::randomized_params(c, 3);
    Graph<float> g;
    ForwardOptions<float> o;
    o.params_require_grad = true;
    auto fg = build_forward(g, c, p, random_image(2, 16, 1), random_image(2, 16, 2), o);
    Tensor<float> target({2, 1, 16, 16});
    for (std::size_t i = 0; i < target.size(); i += 3) target[i] = 1.0f;
    g.backward(softmax_cross_entropy(fg.logits, target));
    bool backbone = false, msam_hit = false;
    for (std::size_t i = 0; i < p.entries.size(); ++i) {
      const auto& gr = fg.params[i].grad();
      bool nonzero = false;
      for (float v : gr.storage()) nonzero |= v != 0.0f;
      (p.entries[i].subnet == Subnet::kBackbone ? backbone : msam_hit) |= nonzero;
    }
    EXPECT_TRUE(backbone);
    EXPECT_TRUE(msam_hit);
  }
}

TEST(Checkpoint, SaveLoadForwardBitwise) {
  const ModelConfig c = small_config(MsamInput::kPET);
  Checkpoint ck{c, test::randomized_params(c, 12), std::nullopt, {}};
  ck.meta.seed = 7;
  ck.meta.stats.pet = {1.5, 2.0};
  const auto path = test::temp_dir("ckpt") / "m.ckpt";
  save_checkpoint(path, ck);
  const auto back = load_checkpoint(path);
  EXPECT_EQ(back.config, c);
  EXPECT_EQ(back.params, ck.params);
  EXPECT_EQ(back.meta, ck.meta);
  EXPECT_FALSE(back.optimizer.has_value());
  const auto pet = random_image(1, 16, 1), ct = random_image(1, 16, 2);
  EXPECT_EQ(model_forward(c, back.params, pet, ct).probabilities, model_forward(c, ck.params, pet, ct).probabilities);
}

TEST(Checkpoint, CorruptionIsDetected) {
  const ModelConfig c = small_config(MsamInput::kPET);
  Checkpoint ck{c, build_model<float>(c, 1), OptimizerState<float>::fresh(build_model<float>(c, 1)), {}};
  const auto bytes = serialize_checkpoint(ck);
  EXPECT_EQ(deserialize_checkpoint(bytes).optimizer, ck.optimizer);

  auto truncated = bytes;
  truncated.resize(bytes.size() / 2);
  EXPECT_THROW(deserialize_checkpoint(truncated), LoadError);
  auto flipped = bytes;
  flipped[bytes.size() / 3] ^= 0x10;
  EXPECT_THROW(deserialize_checkpoint(flipped), LoadError);
  auto version = bytes;
  version[8] = 9;
  EXPECT_THROW(deserialize_checkpoint(version), LoadError);
  auto magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW(deserialize_checkpoint(magic), LoadError);
  EXPECT_THROW(load_checkpoint(test::temp_dir("ckpt_missing") / "none.ckpt"), LoadError);
}

}  // namespace
}  // namespace msamseg
