#include <gtest/gtest.h>

#include "ctcloud/ct_block.hpp"
#include "ctcloud/errors.hpp"
#include "ctcloud/gradcheck.hpp"
#include "oracles.hpp"

namespace ctcloud {
namespace {

CTBlockConfig micro_config() {
  CTBlockConfig cfg;
  cfg.n_in = 16;
  cfg.n_out = 8;
  cfg.c_in = 4;
  cfg.c_mid = 5;
  cfg.c_out = 6;
  cfg.group_size = 4;
  cfg.d_e = 8;
  return cfg;
}

TEST(CTBlock, VariantNamesRoundTrip) {
  for (auto v : {BlockVariant::Full, BlockVariant::ConvOnly, BlockVariant::TransformerOnly,
                 BlockVariant::NoTransmission}) {
    EXPECT_EQ(parse_block_variant(to_string(v)), v);
  }
  EXPECT_THROW(parse_block_variant("both"), ConfigError);
}

TEST(CTBlock, ConfigValidation) {
  CTBlockConfig cfg = micro_config();
  cfg.n_out = 7;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = micro_config();
  cfg.group_size = 17;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(CTBlock, ShapeContract) {
  CTBlockConfig cfg;  // n_in 512, n_out 256, S 32, c_in 64, c_mid 128, c_out 128, d_e 256
  Rng rng(1);
  ParameterSet params;
  CTBlockWeights w = CTBlockWeights::create(params, "b", cfg, rng);
  const BranchState in = oracle::random_state(1024, 512, 64, 256, rng);
  NoGradGuard no_grad;
  const BranchState out = ct_block_forward(in, cfg, w, Mode::Eval);
  EXPECT_EQ(out.local_features.shape(), (Shape{256, 128}));
  EXPECT_EQ(out.local_coords.shape(), (Shape{256, 3}));
  EXPECT_EQ(out.global_features.shape(), (Shape{1024, 256}));
  ASSERT_EQ(out.local_global_idx.size(), 256u);
  for (std::size_t i = 0; i < 256; ++i) {
    const Index g = out.local_global_idx[i];
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(out.local_coords[i * 3 + c], in.global_coords[g * 3 + c]);
  }
}

TEST(CTBlock, WrongInputShapeNamesStage) {
  const CTBlockConfig cfg = micro_config();
  Rng rng(2);
  ParameterSet params;
  CTBlockWeights w = CTBlockWeights::create(params, "b", cfg, rng);
  BranchState in = oracle::random_state(32, 16, 5, 8, rng);
  try {
    ct_block_forward(in, cfg, w, Mode::Train);
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("local features"), std::string::npos) << e.what();
  }
}

TEST(CTBlock, ZeroTransmissionDecouplesBranches) {
  for (Mode mode : {Mode::Train, Mode::Eval}) {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      const oracle::DecouplingError err = oracle::decoupling_error(micro_config(), 40, seed, mode);
      EXPECT_LT(err.local, 1e-9);
      EXPECT_LT(err.global, 1e-9);
    }
  }
}

TEST(CTBlock, TransmissionCouplesBranches) {
  // Without zeroing, the local output differs from the plain set abstraction.
  const CTBlockConfig cfg = micro_config();
  Rng rng(4);
  ParameterSet params;
  CTBlockWeights w = CTBlockWeights::create(params, "b", cfg, rng);
  const BranchState in = oracle::random_state(40, 16, 4, 8, rng);
  const oracle::Mat plain =
      oracle::set_abstraction(in.local_features, in.local_coords, cfg, w.conv1, w.conv2, Mode::Train);
  EXPECT_GT(oracle::max_abs_diff(plain, ct_block_forward(in, cfg, w, Mode::Train).local_features), 1e-3);
}

TEST(CTBlock, ReducedVariantsProduceOnlyTheirBranch) {
  Rng rng(5);
  const BranchState in = oracle::random_state(40, 16, 4, 8, rng);
  CTBlockConfig conv = micro_config();
  conv.variant = BlockVariant::ConvOnly;
  ParameterSet p1;
  CTBlockWeights w1 = CTBlockWeights::create(p1, "b", conv, rng);
  const BranchState o1 = ct_block_forward(in, conv, w1, Mode::Train);
  EXPECT_EQ(o1.local_features.shape(), (Shape{8, 6}));
  EXPECT_EQ(o1.global_features.node(), in.global_features.node());

  CTBlockConfig trans = micro_config();
  trans.variant = BlockVariant::TransformerOnly;
  ParameterSet p2;
  CTBlockWeights w2 = CTBlockWeights::create(p2, "b", trans, rng);
  const BranchState o2 = ct_block_forward(in, trans, w2, Mode::Train);
  EXPECT_EQ(o2.local_features.node(), in.local_features.node());
  EXPECT_EQ(o2.global_features.shape(), (Shape{40, 8}));
  EXPECT_EQ(p2.parameters().count("b.conv1.mlp0.weight"), 0u);
}

TEST(CTBlock, GradientCheck) {
  for (std::uint64_t seed = 1; seed <= 2; ++seed) {
    const CTBlockConfig cfg = micro_config();
    Rng rng(seed);
    auto params = std::make_shared<ParameterSet>();
    auto w = std::make_shared<CTBlockWeights>(CTBlockWeights::create(*params, "b", cfg, rng));
    BranchState in = oracle::random_state(32, 16, 4, 8, rng);
    in.local_features.set_requires_grad(true);
    in.global_features.set_requires_grad(true);
    std::vector<Tensor> inputs = {in.local_features, in.global_features};
    for (const auto& [name, p] : params->parameters()) inputs.push_back(p);
    const GradcheckResult r = check_gradients(
        "ct_block",
        [=] {
          const BranchState out = ct_block_forward(in, cfg, *w, Mode::Train);
          return concat({reshape(out.local_features, {out.local_features.numel()}),
                         reshape(out.global_features, {out.global_features.numel()})},
                        0);
        },
        inputs, kCompositeTolerance, seed);
    EXPECT_TRUE(r.passed()) << "seed " << seed << " max rel error " << r.max_rel_error;
  }
}

std::vector<CTBlockConfig> paper_stack() {
  std::vector<CTBlockConfig> cfgs;
  std::size_t n = 512, c = 64;
  for (std::size_t w : {128, 256, 512}) {
    CTBlockConfig cfg;
    cfg.n_in = n;
    cfg.n_out = n / 2;
    cfg.c_in = c;
    cfg.c_mid = w;
    cfg.c_out = w;
    cfgs.push_back(cfg);
    n /= 2;
    c = w;
  }
  return cfgs;
}

TEST(CTStack, ThreeBlocksHalvePointsAndDoubleChannels) {
  Rng rng(6);
  ParameterSet params;
  CTStack stack = CTStack::create(params, "enc", paper_stack(), rng);
  const BranchState in = oracle::random_state(1024, 512, 64, 256, rng);
  NoGradGuard no_grad;
  const auto states = stack.forward(in, Mode::Eval);
  ASSERT_EQ(states.size(), 3u);
  const std::size_t points[] = {256, 128, 64}, channels[] = {128, 256, 512};
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(states[i].local_features.shape(), (Shape{points[i], channels[i]}));
    EXPECT_EQ(states[i].global_features.shape(), (Shape{1024, 256}));
  }
}

TEST(CTStack, SingleBlockEqualsBlockForward) {
  const CTBlockConfig cfg = micro_config();
  Rng rng(7);
  ParameterSet params;
  CTStack stack = CTStack::create(params, "enc", {cfg}, rng);
  const BranchState in = oracle::random_state(32, 16, 4, 8, rng);
  const auto states = stack.forward(in, Mode::Eval);
  ASSERT_EQ(states.size(), 1u);
  const BranchState direct = ct_block_forward(in, cfg, stack.weights()[0], Mode::Eval);
  EXPECT_EQ(oracle::max_abs_diff(states[0].local_features, direct.local_features), 0.0);
  EXPECT_EQ(oracle::max_abs_diff(states[0].global_features, direct.global_features), 0.0);
}

TEST(CTStack, ChainMismatchRejectedAtBuild) {
  auto cfgs = paper_stack();
  cfgs[1].c_in = 100;
  Rng rng(8);
  ParameterSet params;
  EXPECT_THROW(CTStack::create(params, "enc", cfgs, rng), ConfigError);
  cfgs = paper_stack();
  cfgs[2].d_e = 128;
  ParameterSet params2;
  EXPECT_THROW(CTStack::create(params2, "enc", cfgs, rng), ConfigError);
}

}  // namespace
}  // namespace ctcloud
