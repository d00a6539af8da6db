#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <fstream>

#include "ctcloud/checkpoint.hpp"
#include "ctcloud/config.hpp"
#include "ctcloud/errors.hpp"
#include "ctcloud/metrics.hpp"
#include "oracles.hpp"
#include "temp_dir.hpp"

namespace ctcloud {
namespace {

using testing::TempDir;

TEST(Config, ParsesDottedKeysAndComments) {
  const RunConfig cfg = parse_config(
      "# toy run\n"
      "task = segmentation\n"
      "seed = 42   # trailing comment\n"
      "model.block_widths = 8, 16 ,32\n"
      "train.lr0 = 0.05\n"
      "train.augment = none\n"
      "eval.scales = 1.0,1.1\n");
  EXPECT_EQ(cfg.task, Task::Segmentation);
  EXPECT_EQ(cfg.seed, 42u);
  EXPECT_EQ(cfg.model.block_widths, (std::vector<std::size_t>{8, 16, 32}));
  EXPECT_DOUBLE_EQ(cfg.train.lr0, 0.05);
  EXPECT_EQ(cfg.eval.scales, (std::vector<double>{1.0, 1.1}));
  const TrainConfig tc = cfg.train_config();
  EXPECT_EQ(tc.seed, 42u);
  EXPECT_FALSE(tc.augment.z_rotation);
  EXPECT_DOUBLE_EQ(tc.augment.jitter_sigma, 0.0);
}

TEST(Config, AutoAugmentFollowsTask) {
  RunConfig cfg = parse_config("task = segmentation\n");
  EXPECT_TRUE(cfg.train_config().augment.aniso_scale);
  cfg = parse_config("task = classification\ntrain.jitter_sigma = 0.01\n");
  EXPECT_TRUE(cfg.train_config().augment.z_rotation);
  EXPECT_DOUBLE_EQ(cfg.train_config().augment.jitter_sigma, 0.01);
}

TEST(Config, UnknownKeyAndBadValueCarryLine) {
  try {
    parse_config("seed = 1\nmodel.widthz = 3\n");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
    EXPECT_NE(std::string(e.what()).find("model.widthz"), std::string::npos);
  }
  EXPECT_THROW(parse_config("train.lr0 = fast\n"), ParseError);
  EXPECT_THROW(parse_config("just words\n"), ParseError);
  RunConfig cfg;
  EXPECT_THROW(apply_setting(cfg, "nope", "1"), ConfigError);
}

TEST(Config, DumpRoundTrips) {
  const RunConfig cfg = parse_config("task = segmentation\nseed = 9\nmodel.d_e = 24\ntrain.epochs = 7\n"
                                     "data.manifest = /tmp/x/manifest.json\nmodel.variant = no_transmission\n");
  const std::string dumped = cfg.dump();
  const RunConfig again = parse_config(dumped);
  EXPECT_EQ(again.dump(), dumped);
  EXPECT_EQ(again.model.d_e, 24u);
  EXPECT_EQ(again.model.variant, BlockVariant::NoTransmission);
  // Every key appears once.
  for (const auto& key : config_keys()) EXPECT_NE(dumped.find(key + " = "), std::string::npos) << key;
}

TEST(Config, EnvironmentSeedIsFallbackOnly) {
  TempDir dir("cfg");
  {
    std::ofstream(dir / "with_seed.cfg") << "seed = 5\n";
    std::ofstream(dir / "no_seed.cfg") << "train.epochs = 2\n";
  }
  ::setenv("CTCLOUD_SEED", "77", 1);
  EXPECT_EQ(resolve_config(dir / "no_seed.cfg", {}).seed, 77u);
  EXPECT_EQ(resolve_config(dir / "with_seed.cfg", {}).seed, 5u);
  EXPECT_EQ(resolve_config(dir / "no_seed.cfg", {"seed=3"}).seed, 3u);
  ::unsetenv("CTCLOUD_SEED");
  EXPECT_EQ(resolve_config(dir / "no_seed.cfg", {}).seed, 1u);
  EXPECT_EQ(resolve_config(std::nullopt, {"train.epochs=4"}).train.epochs, 4u);
  EXPECT_THROW(resolve_config(std::nullopt, {"train.epochs"}), UsageError);
}

TEST(Config, ModelSizesComeFromData) {
  RunConfig cfg;
  cfg.model.n_points = 64;
  cfg.model.block_widths = {4, 4, 4};
  cfg.model.group_size = 4;
  Dataset ds = gen_part_shapes(1, 64, 1);
  const NetworkConfig m = model_config_for(cfg, ds);
  EXPECT_EQ(m.task, Task::Segmentation);
  EXPECT_EQ(m.num_classes, 5u);
  EXPECT_EQ(m.num_categories, 2u);
  cfg.model.num_classes = 4;
  EXPECT_THROW(model_config_for(cfg, ds), ConfigError);
  cfg.model.num_classes = 0;
  cfg.model.n_points = 128;
  EXPECT_THROW(model_config_for(cfg, ds), ConfigError);
}

TEST(Metrics, PerfectAndSingleClassPredictions) {
  const std::vector<int> target = {0, 1, 2, 0, 1, 2};
  const ClassificationMetrics perfect = classification_metrics(target, target, 3);
  EXPECT_EQ(perfect.overall_accuracy, 1.0);
  EXPECT_EQ(perfect.mean_class_accuracy, 1.0);
  const std::vector<int> zeros(6, 0);
  const ClassificationMetrics one = classification_metrics(zeros, target, 3);
  EXPECT_NEAR(one.overall_accuracy, 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(one.mean_class_accuracy, 1.0 / 3.0, 1e-15);
  EXPECT_EQ(*one.per_class_accuracy[0], 1.0);
  EXPECT_EQ(*one.per_class_accuracy[1], 0.0);
}

TEST(Metrics, MeanClassAccuracyWeighsClassesEqually) {
  const std::vector<int> target = {0, 0, 0, 1}, pred = {0, 0, 0, 0};
  const ClassificationMetrics m = classification_metrics(pred, target, 3);
  EXPECT_DOUBLE_EQ(m.overall_accuracy, 0.75);
  EXPECT_DOUBLE_EQ(m.mean_class_accuracy, 0.5);
  EXPECT_FALSE(m.per_class_accuracy[2].has_value());
}

TEST(Metrics, PartIouConventions) {
  const std::vector<int> parts = {2, 3, 4};
  const std::vector<int> target = {2, 2, 3, 3};
  EXPECT_EQ(shape_part_iou(target, target, parts), 1.0);  // part 4 absent from both
  const std::vector<int> disjoint = {3, 3, 2, 2};
  EXPECT_DOUBLE_EQ(shape_part_iou(disjoint, target, std::vector<int>{2, 3}), 0.0);
  const std::vector<int> half = {2, 3, 3, 3};
  // part 2: 1/2, part 3: 2/3, part 4: 1
  EXPECT_NEAR(shape_part_iou(half, target, parts), (0.5 + 2.0 / 3.0 + 1.0) / 3.0, 1e-15);
}

TEST(Metrics, RestrictedArgmaxIgnoresOtherCategories) {
  const Tensor p({2, 5}, {0.9, 0.0, 0.05, 0.03, 0.02, 0.1, 0.5, 0.1, 0.2, 0.1});
  const std::vector<int> cyl = {2, 3, 4};
  EXPECT_EQ(restricted_argmax(p, 0, cyl), 2);
  EXPECT_EQ(restricted_argmax(p, 1, cyl), 3);
  EXPECT_EQ(predict_parts(p, cyl), (std::vector<int>{2, 3}));
}

NetworkConfig small_seg() {
  NetworkConfig cfg;
  cfg.task = Task::Segmentation;
  cfg.n_points = 64;
  cfg.embed_width = 4;
  cfg.block_widths = {4, 4, 4};
  cfg.group_size = 4;
  cfg.d_e = 4;
  cfg.head_hidden = 4;
  cfg.num_classes = 5;
  cfg.num_categories = 2;
  cfg.category_width = 2;
  return cfg;
}

TEST(Evaluate, SegmentationReportIsConsistent) {
  Dataset ds = gen_part_shapes(2, 64, 2);
  assign_split(ds, 2, 2, 2);
  SegmentationModel model(small_seg(), 3);
  const EvalReport r = evaluate(model, ds, ds.test);
  EXPECT_EQ(r.num_items, 2u);
  EXPECT_GE(r.segmentation.point_accuracy, 0.0);
  EXPECT_LE(r.segmentation.point_accuracy, 1.0);
  EXPECT_GE(r.segmentation.instance_piou, 0.0);
  EXPECT_LE(r.segmentation.instance_piou, 1.0);
  // Recompute point accuracy and instance pIoU by hand.
  std::size_t hits = 0, total = 0;
  double piou = 0;
  for (std::size_t idx : ds.test) {
    const PointCloud& c = ds.items[idx];
    const auto parts = ds.category_parts[*c.category];
    const auto pred = predict_parts(model.predict_proba(c), parts);
    for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == c.point_labels[i];
    total += pred.size();
    piou += shape_part_iou(pred, c.point_labels, parts) / 2.0;
  }
  EXPECT_NEAR(r.segmentation.point_accuracy, static_cast<double>(hits) / total, 1e-15);
  EXPECT_NEAR(r.segmentation.instance_piou, piou, 1e-15);
  const std::string json = r.to_json(ds);
  EXPECT_NE(json.find("\"instance_piou\""), std::string::npos);
  EXPECT_NE(json.find("\"cylinder\""), std::string::npos);
  EXPECT_THROW(evaluate(model, ds, std::vector<std::size_t>{}), DataError);
}

TEST(Checkpoint, RoundTripIsExact) {
  TempDir dir("ckpt");
  Rng rng(4);
  Checkpoint ck;
  ck.tensors["a.weight"] = oracle::random_tensor({3, 4}, rng, -1e5, 1e5);
  ck.tensors["b"] = Tensor({1}, {1.0 / 3.0});
  ck.meta["next_epoch"] = "12";
  save_checkpoint(dir / "x.ckpt", ck);
  const Checkpoint back = load_checkpoint(dir / "x.ckpt");
  EXPECT_EQ(back.meta.at("next_epoch"), "12");
  EXPECT_EQ(oracle::max_abs_diff(back.tensors.at("a.weight"), ck.tensors["a.weight"]), 0.0);
  EXPECT_EQ(back.tensors.at("b")[0], 1.0 / 3.0);
  std::ifstream f(dir / "x.ckpt");
  std::string header;
  std::getline(f, header);
  EXPECT_EQ(header, kCheckpointMagic);
}

TEST(Checkpoint, RestoreChecksNamesAndShapes) {
  ParameterSet params;
  params.add_parameter("w", Tensor::zeros({2, 2}));
  params.add_buffer("bn.running_mean", Tensor::zeros({2}));
  Checkpoint ck;
  ck.tensors["w"] = Tensor({2, 2}, {1, 2, 3, 4});
  EXPECT_THROW(restore_parameters(params, ck), ConfigError);  // buffer missing
  ck.tensors["bn.running_mean"] = Tensor({2}, {5, 6});
  restore_parameters(params, ck);
  EXPECT_EQ(params.parameter("w")[3], 4.0);
  EXPECT_EQ(params.buffer("bn.running_mean")[1], 6.0);
  ck.tensors["w"] = Tensor::zeros({4});
  EXPECT_THROW(restore_parameters(params, ck), ConfigError);
  TempDir dir("ckpt");
  std::ofstream(dir / "bad.ckpt") << "not a checkpoint\n";
  EXPECT_THROW(load_checkpoint(dir / "bad.ckpt"), ParseError);
}

}  // namespace
}  // namespace ctcloud
