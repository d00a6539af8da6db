#include <gtest/gtest.h>

#include <cmath>

#include "ctcloud/errors.hpp"
#include "ctcloud/networks.hpp"
#include "oracles.hpp"

namespace ctcloud {
namespace {

NetworkConfig tiny(Task task, std::size_t n_points, std::size_t classes) {
  NetworkConfig cfg;
  cfg.task = task;
  cfg.n_points = n_points;
  cfg.embed_width = 4;
  cfg.block_widths = {6, 8, 10};
  cfg.group_size = 4;
  cfg.d_e = 8;
  cfg.head_hidden = 8;
  cfg.dropout = 0.5;
  cfg.num_classes = classes;
  cfg.num_categories = 3;
  cfg.category_width = 4;
  return cfg;
}

PointCloud random_point_cloud(std::size_t n, Rng& rng, std::optional<int> category = std::nullopt) {
  PointCloud c;
  c.coords = oracle::random_cloud(n, rng);
  c.category = category;
  return c;
}

/// A few training-mode passes so the running statistics are not trivial.
void warm_up(PointModel& model, Rng& rng, std::optional<int> category = std::nullopt) {
  NoGradGuard no_grad;
  for (int i = 0; i < 3; ++i) model.forward(random_point_cloud(model.config().n_points, rng, category), Mode::Train);
}

TEST(NetworkConfig, Validation) {
  NetworkConfig cfg = tiny(Task::Classification, 32, 3);
  EXPECT_NO_THROW(cfg.validate());
  cfg.n_points = 40;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = tiny(Task::Classification, 32, 3);
  cfg.group_size = 5;  // last block has only 4 local points
  EXPECT_THROW(cfg.validate(), ConfigError);
  EXPECT_EQ(parse_task("segmentation"), Task::Segmentation);
  EXPECT_THROW(parse_task("detection"), ConfigError);
  EXPECT_EQ(parse_fusion(to_string(FusionMode::ProbabilitySum)), FusionMode::ProbabilitySum);
}

TEST(Classification, DefaultStackSizes) {
  const auto blocks = NetworkConfig::classification_default().block_configs();
  ASSERT_EQ(blocks.size(), 3u);
  EXPECT_EQ(blocks[0].n_in, 512u);
  EXPECT_EQ(blocks[2].n_out, 64u);
  EXPECT_EQ(blocks[2].c_out, 512u);
}

TEST(Classification, ThreeHeadsOfClassWidth) {
  ClassificationModel model(tiny(Task::Classification, 32, 40), 1);
  Rng rng(2);
  const HeadOutputs out = classify(model, random_point_cloud(32, rng), Mode::Train);
  EXPECT_EQ(out.local.shape(), (Shape{40}));
  EXPECT_EQ(out.global.shape(), (Shape{40}));
  EXPECT_EQ(out.fused.shape(), (Shape{40}));
  for (std::size_t i = 0; i < 40; ++i) EXPECT_EQ(out.fused[i], out.local[i] + out.global[i]);
}

TEST(Classification, WrongInputRejected) {
  ClassificationModel model(tiny(Task::Classification, 32, 3), 1);
  Rng rng(3);
  EXPECT_THROW(model.forward(random_point_cloud(64, rng), Mode::Eval), ConfigError);
  PointCloud c = random_point_cloud(32, rng);
  c.features = oracle::random_tensor({32, 4}, rng);
  EXPECT_THROW(model.forward(c, Mode::Eval), ConfigError);
}

TEST(Classification, FusedLogitsPermutationInvariant) {
  ClassificationModel model(tiny(Task::Classification, 64, 5), 4);
  Rng rng(5);
  warm_up(model, rng);
  NoGradGuard no_grad;
  for (int trial = 0; trial < 3; ++trial) {
    const PointCloud cloud = random_point_cloud(64, rng);
    const Tensor ref = model.forward(cloud, Mode::Eval).fused;
    for (int p = 0; p < 5; ++p) {
      PointCloud permuted = cloud;
      permuted.coords = oracle::permute_rows(cloud.coords, oracle::random_permutation(64, rng));
      EXPECT_LT(oracle::max_abs_diff(model.forward(permuted, Mode::Eval).fused, ref), 1e-6);
    }
  }
}

TEST(Classification, FiniteLogitsForManySeeds) {
  NoGradGuard no_grad;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    ClassificationModel model(tiny(Task::Classification, 32, 3), seed);
    Rng rng(seed + 1000);
    for (Mode mode : {Mode::Train, Mode::Eval}) {
      const Tensor fused = model.forward(random_point_cloud(32, rng), mode).fused;
      for (double v : fused.data()) {
        ASSERT_TRUE(std::isfinite(v)) << "seed " << seed;
      }
    }
  }
}

TEST(Classification, EvalBatchMatchesSingleClouds) {
  ClassificationModel model(tiny(Task::Classification, 32, 3), 6);
  Rng rng(7);
  warm_up(model, rng);
  NoGradGuard no_grad;
  const std::vector<PointCloud> clouds = {random_point_cloud(32, rng), random_point_cloud(32, rng),
                                          random_point_cloud(32, rng)};
  const HeadOutputs joint = model.forward_batch(clouds, Mode::Eval);
  ASSERT_EQ(joint.fused.shape(), (Shape{3, 3}));
  for (std::size_t b = 0; b < 3; ++b) {
    const Tensor single = model.forward(clouds[b], Mode::Eval).fused;
    for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(joint.fused[b * 3 + k], single[k], 1e-12);
  }
}

TEST(Classification, ProbabilityFusionAveragesHeads) {
  NetworkConfig cfg = tiny(Task::Classification, 32, 4);
  cfg.fusion = FusionMode::ProbabilitySum;
  ClassificationModel model(cfg, 8);
  Rng rng(9);
  NoGradGuard no_grad;
  const HeadOutputs out = model.forward(random_point_cloud(32, rng), Mode::Eval);
  const Tensor p = model.fused_probabilities(out);
  const Tensor pl = softmax_rows(reshape(out.local, {1, 4})), pg = softmax_rows(reshape(out.global, {1, 4}));
  for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(p[k], 0.5 * (pl[k] + pg[k]), 1e-12);
}

TEST(Classification, AblationVariantsHaveTheirHeads) {
  Rng rng(10);
  const PointCloud cloud = random_point_cloud(32, rng);
  for (auto v : {BlockVariant::ConvOnly, BlockVariant::TransformerOnly, BlockVariant::NoTransmission}) {
    NetworkConfig cfg = tiny(Task::Classification, 32, 3);
    cfg.variant = v;
    ClassificationModel model(cfg, 11);
    const HeadOutputs out = model.forward(cloud, Mode::Train);
    EXPECT_EQ(out.local.defined(), v != BlockVariant::TransformerOnly);
    EXPECT_EQ(out.global.defined(), v != BlockVariant::ConvOnly);
    EXPECT_EQ(out.fused.shape(), (Shape{3}));
  }
}

TEST(Segmentation, OutputRowsMatchInputPoints) {
  NoGradGuard no_grad;
  for (std::size_t n : {64, 256, 2048}) {
    SegmentationModel model(tiny(Task::Segmentation, n, 5), 12);
    Rng rng(n);
    const HeadOutputs out = segment(model, random_point_cloud(n, rng), 1, Mode::Eval);
    EXPECT_EQ(out.fused.shape(), (Shape{n, 5}));
    EXPECT_EQ(out.local.shape(), (Shape{n, 5}));
    EXPECT_EQ(out.global.shape(), (Shape{n, 5}));
  }
}

TEST(Segmentation, PermutationEquivariant) {
  SegmentationModel model(tiny(Task::Segmentation, 64, 4), 13);
  Rng rng(14);
  warm_up(model, rng, 2);
  NoGradGuard no_grad;
  const PointCloud cloud = random_point_cloud(64, rng);
  const Tensor ref = segment(model, cloud, 2, Mode::Eval).fused;
  for (int p = 0; p < 5; ++p) {
    const auto perm = oracle::random_permutation(64, rng);
    PointCloud permuted = cloud;
    permuted.coords = oracle::permute_rows(cloud.coords, perm);
    EXPECT_LT(oracle::max_abs_diff(segment(model, permuted, 2, Mode::Eval).fused, oracle::permute_rows(ref, perm)),
              1e-6);
  }
}

TEST(Segmentation, CategoryChecked) {
  SegmentationModel model(tiny(Task::Segmentation, 64, 4), 15);
  Rng rng(16);
  const PointCloud cloud = random_point_cloud(64, rng);
  EXPECT_THROW(segment(model, cloud, 3, Mode::Eval), DataError);
  EXPECT_THROW(segment(model, cloud, -1, Mode::Eval), DataError);
  EXPECT_THROW(model.forward(cloud, Mode::Eval), DataError);
  // Category conditioning changes the output.
  NoGradGuard no_grad;
  EXPECT_GT(oracle::max_abs_diff(segment(model, cloud, 0, Mode::Eval).fused,
                                 segment(model, cloud, 1, Mode::Eval).fused),
            0.0);
}

TEST(MultiScale, SingleUnitScaleIsPlainPrediction) {
  ClassificationModel model(tiny(Task::Classification, 32, 3), 17);
  Rng rng(18);
  const PointCloud cloud = random_point_cloud(32, rng);
  MultiScaleOptions opts;
  opts.scales = {1.0};
  EXPECT_EQ(oracle::max_abs_diff(multi_scale_predict(model, cloud, opts), model.predict_proba(cloud)), 0.0);
}

TEST(MultiScale, ProbabilitiesSumToOneAndOrderIsIrrelevant) {
  SegmentationModel model(tiny(Task::Segmentation, 64, 4), 19);
  Rng rng(20);
  const PointCloud cloud = random_point_cloud(64, rng, 1);
  const Tensor p = multi_scale_predict(model, cloud);
  for (std::size_t r = 0; r < 64; ++r) {
    double total = 0;
    for (std::size_t k = 0; k < 4; ++k) total += p[r * 4 + k];
    EXPECT_NEAR(total, 1.0, 1e-9);
  }
  MultiScaleOptions reversed;
  reversed.scales = {1.2, 1.1, 1.0, 0.9, 0.8};
  EXPECT_LT(oracle::max_abs_diff(multi_scale_predict(model, cloud, reversed), p), 1e-12);
}

}  // namespace
}  // namespace ctcloud
