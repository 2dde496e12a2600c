#include <gtest/gtest.h>

#include <cstring>
#include <sstream>

#include "attention_fixtures.hpp"
#include "test_util.hpp"
#include "tripse/backbone.hpp"
#include "tripse/errors.hpp"

using namespace tripse;

namespace {

BackboneConfig small_config(AttentionKind kind, std::uint64_t seed = 0) {
  BackboneConfig cfg;
  cfg.num_classes = 3;
  cfg.stages = {{{4, 1, false}, {6, 1, true}, {8, 1, true}, {8, 1, true}}};
  cfg.input_height = cfg.input_width = 16;
  cfg.attention = AttentionConfig{kind, 2, 3};
  cfg.seed = seed;
  return cfg;
}

std::string serialize(const MiniBackbone<float>& m, std::uint32_t version = kWeightsVersion) {
  std::ostringstream os;
  save_weights(m, os, version);
  return os.str();
}

}  // namespace

TEST(Backbone, BuildIsDeterministic) {
  auto a = MiniBackbone<float>::build(small_config(AttentionKind::tripse2, 5));
  auto b = MiniBackbone<float>::build(small_config(AttentionKind::tripse2, 5));
  EXPECT_EQ(serialize(a), serialize(b));
  auto c = MiniBackbone<float>::build(small_config(AttentionKind::tripse2, 6));
  EXPECT_NE(serialize(a), serialize(c));
}

TEST(Backbone, HostWeightsSharedAcrossVariants) {
  auto none = MiniBackbone<float>::build(small_config(AttentionKind::none));
  auto with = MiniBackbone<float>::build(small_config(AttentionKind::tripse4));
  auto sn = none.state();
  auto sw = with.state();
  for (const auto& e : sn) {
    auto it = std::find_if(sw.begin(), sw.end(), [&](const auto& f) { return f.name == e.name; });
    ASSERT_NE(it, sw.end()) << e.name;
    EXPECT_EQ(test::max_abs_diff(e.tensor, it->tensor), 0.0) << e.name;
  }
}

TEST(Backbone, ParamCountWithoutAttentionMatchesClosedForm) {
  for (auto cfg : {small_config(AttentionKind::none), BackboneConfig{}}) {
    cfg.attention.kind = AttentionKind::none;
    auto m = MiniBackbone<float>::build(cfg);
    EXPECT_EQ(m.count_params().total, host_param_count(cfg));
    EXPECT_EQ(m.count_params().attention, 0u);
  }
}

TEST(Backbone, AttentionOverheadIsAdditive) {
  BackboneConfig cfg;
  cfg.stages = {{{96, 1, false}, {192, 1, true}, {384, 1, true}, {768, 1, true}}};
  cfg.input_height = cfg.input_width = 56;
  cfg.attention = AttentionConfig{AttentionKind::tripse1, 16, 7};
  std::size_t overhead = 0;
  for (const auto& d : cfg.stage_dims()) overhead += attention_param_count(cfg.attention, d);
  EXPECT_EQ(overhead, 100650u);
  auto m = MiniBackbone<float>::build(cfg);
  EXPECT_EQ(m.count_params().attention, 100650u);
  EXPECT_EQ(m.count_params().total, host_param_count(cfg) + 100650u);
}

TEST(Backbone, LogitsShape) {
  auto m = MiniBackbone<float>::build(small_config(AttentionKind::ta));
  auto y = m.forward(test::random_tensor({2, 1, 16, 16}, 1), false);
  EXPECT_EQ(y.shape(), (Shape{2, 3}));
}

TEST(Backbone, StageShapes) {
  BackboneConfig cfg;
  cfg.attention.kind = AttentionKind::tripse1;
  auto m = MiniBackbone<float>::build(cfg);
  std::vector<Shape> shapes;
  m.forward(test::random_tensor({2, 1, 32, 32}, 2), true, &shapes);
  ASSERT_EQ(shapes.size(), 4u);
  EXPECT_EQ(shapes[0], (Shape{2, 16, 32, 32}));
  EXPECT_EQ(shapes[1], (Shape{2, 32, 16, 16}));
  EXPECT_EQ(shapes[2], (Shape{2, 64, 8, 8}));
  EXPECT_EQ(shapes[3], (Shape{2, 128, 4, 4}));
}

TEST(Backbone, RejectsIndivisibleInputAndWrongInputShape) {
  auto cfg = small_config(AttentionKind::none);
  cfg.input_height = 18;
  EXPECT_THROW(MiniBackbone<float>::build(cfg), ConfigError);
  auto m = MiniBackbone<float>::build(small_config(AttentionKind::none));
  EXPECT_THROW(m.forward(test::random_tensor({1, 1, 8, 8}, 3), false), ShapeError);
}

TEST(Backbone, SaturatedTripSE1MatchesPlainBackbone) {
  auto none = MiniBackbone<float>::build(small_config(AttentionKind::none, 7));
  auto with = MiniBackbone<float>::build(small_config(AttentionKind::tripse1, 7));
  for (auto& a : with.attention()) {
    auto& blk = *a->as<TripSEBlock<float>>();
    for (auto& br : blk.branches) br.force_unit_gate = true;
    test::saturate_se(*blk.unify_se);
  }
  auto x = test::random_tensor({3, 1, 16, 16}, 4);
  EXPECT_LE(test::max_abs_diff(none.forward(x, false), with.forward(x, false)), 1e-5);
}

TEST(Backbone, EndToEndGradient) {
  BackboneConfig cfg;
  cfg.num_classes = 3;
  cfg.stages = {{{2, 1, false}, {3, 1, true}, {4, 1, true}, {4, 1, true}}};
  cfg.input_height = cfg.input_width = 8;
  cfg.attention = AttentionConfig{AttentionKind::tripse1, 1, 3};
  cfg.seed = 8;
  auto m = MiniBackbone<double>::build(cfg);
  auto x = test::random_tensor<double>({1, 1, 8, 8}, 9);
  auto w = test::projection_weights<double>({1, 3}, 10);
  std::vector<Tensor64> tensors{x};
  for (auto& p : m.parameters()) tensors.push_back(p);
  const auto r = finite_diff_check_all<double>([&] { return sum(mul(m.forward(x, false), w)); }, tensors, 1e-6);
  EXPECT_LT(r.max_rel_error, 1e-4) << "analytic " << r.analytic << " numeric " << r.numeric;
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  auto a = MiniBackbone<float>::build(small_config(AttentionKind::tripse3, 11));
  auto b = MiniBackbone<float>::build(small_config(AttentionKind::tripse3, 12));
  const std::string bytes = serialize(a);
  std::istringstream in(bytes);
  EXPECT_EQ(load_weights(b, in), kWeightsVersion);
  EXPECT_EQ(serialize(b), bytes);
  auto x = test::random_tensor({2, 1, 16, 16}, 13);
  EXPECT_EQ(test::max_abs_diff(a.forward(x, false), b.forward(x, false)), 0.0);
}

TEST(Checkpoint, HeaderLayout) {
  auto a = MiniBackbone<float>::build(small_config(AttentionKind::none));
  const std::string bytes = serialize(a);
  EXPECT_EQ(bytes.substr(0, 4), "TSEW");
  std::uint32_t version;
  std::memcpy(&version, bytes.data() + 4, 4);
  EXPECT_EQ(version, kWeightsVersion);
  std::uint64_t fp;
  std::memcpy(&fp, bytes.data() + 8, 8);
  EXPECT_EQ(fp, a.fingerprint());
}

TEST(Checkpoint, ArchitectureMismatchIsRejected) {
  auto a = MiniBackbone<float>::build(small_config(AttentionKind::tripse1));
  auto b = MiniBackbone<float>::build(small_config(AttentionKind::tripse2));
  EXPECT_NE(a.fingerprint(), b.fingerprint());
  std::istringstream in(serialize(a));
  const std::string before = serialize(b);
  EXPECT_THROW(load_weights(b, in), CheckpointError);
  EXPECT_EQ(serialize(b), before);
}

TEST(Checkpoint, TruncationIsAFormatError) {
  auto a = MiniBackbone<float>::build(small_config(AttentionKind::ta));
  auto b = MiniBackbone<float>::build(small_config(AttentionKind::ta, 1));
  const std::string bytes = serialize(a);
  const std::string before = serialize(b);
  std::istringstream in(bytes.substr(0, bytes.size() - 10));
  EXPECT_THROW(load_weights(b, in), FormatError);
  EXPECT_EQ(serialize(b), before);
  std::istringstream bad("XXXX" + bytes.substr(4));
  EXPECT_THROW(load_weights(b, bad), FormatError);
}
