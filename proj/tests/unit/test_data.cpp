#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "ctcloud/data.hpp"
#include "ctcloud/errors.hpp"
#include "oracles.hpp"
#include "temp_dir.hpp"

namespace ctcloud {
namespace {

using testing::TempDir;

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

double max_norm(const Tensor& coords) {
  double r = 0;
  for (std::size_t i = 0; i < coords.dim(0); ++i) {
    r = std::max(r, std::sqrt(coords[3 * i] * coords[3 * i] + coords[3 * i + 1] * coords[3 * i + 1] +
                              coords[3 * i + 2] * coords[3 * i + 2]));
  }
  return r;
}

TEST(Samplers, SphereRadiiAreOne) {
  Rng rng(1);
  const Tensor s = sample_sphere(500, rng);
  for (std::size_t i = 0; i < 500; ++i) {
    EXPECT_NEAR(std::sqrt(oracle::squared_distance(s, i, Tensor::zeros({1, 3}), 0)), 1.0, 1e-9);
  }
}

TEST(Samplers, CubePointsLieOnFaces) {
  Rng rng(2);
  const Tensor c = sample_cube(500, rng);
  std::set<int> faces;
  for (std::size_t i = 0; i < 500; ++i) {
    int on_face = 0;
    for (int d = 0; d < 3; ++d) {
      const double v = c[3 * i + d];
      EXPECT_LE(std::abs(v), 0.5);
      if (std::abs(v) == 0.5) {
        ++on_face;
        faces.insert(d * 2 + (v > 0));
      }
    }
    EXPECT_GE(on_face, 1);
  }
  EXPECT_EQ(faces.size(), 6u);
}

TEST(Samplers, TorusSurface) {
  Rng rng(3);
  const Tensor t = sample_torus(300, 1.0, 0.4, rng);
  for (std::size_t i = 0; i < 300; ++i) {
    const double ring = std::hypot(t[3 * i], t[3 * i + 1]) - 1.0;
    EXPECT_NEAR(std::hypot(ring, t[3 * i + 2]), 0.4, 1e-9);
  }
}

TEST(GenShapes, BalancedNormalizedDeterministic) {
  const Dataset a = gen_shapes(5, 64, 9), b = gen_shapes(5, 64, 9);
  ASSERT_EQ(a.items.size(), 15u);
  int counts[3] = {0, 0, 0};
  for (std::size_t i = 0; i < a.items.size(); ++i) {
    ++counts[*a.items[i].category];
    EXPECT_EQ(a.items[i].size(), 64u);
    EXPECT_LE(max_norm(a.items[i].coords), 1.0 + 1e-9);
    EXPECT_NEAR(max_norm(a.items[i].coords), 1.0, 1e-12);
    EXPECT_EQ(oracle::max_abs_diff(a.items[i].coords, b.items[i].coords), 0.0);
  }
  EXPECT_EQ(counts[0], 5);
  EXPECT_EQ(counts[1], 5);
  EXPECT_EQ(counts[2], 5);
  EXPECT_THROW(gen_shapes(1, 4, 1), ConfigError);
  EXPECT_GT(oracle::max_abs_diff(gen_shapes(1, 64, 10).items[0].coords, a.items[0].coords), 0.0);
}

TEST(GenPartShapes, HemisphereLabelsFollowZ) {
  const Dataset ds = gen_part_shapes(4, 128, 3);
  for (const PointCloud& c : ds.items) {
    ASSERT_EQ(c.point_labels.size(), 128u);
    EXPECT_LE(max_norm(c.coords), 1.0 + 1e-9);
    if (*c.category != 0) continue;
    for (std::size_t i = 0; i < 128; ++i) EXPECT_EQ(c.point_labels[i], c.coords[3 * i + 2] < 0 ? 0 : 1);
  }
}

TEST(GenPartShapes, CylinderPartsMatchGeometry) {
  const Dataset ds = gen_part_shapes(2, 200, 4);
  for (const PointCloud& c : ds.items) {
    if (*c.category != 1) continue;
    double top = -1e9, bottom = 1e9;
    for (std::size_t i = 0; i < 200; ++i) {
      top = std::max(top, c.coords[3 * i + 2]);
      bottom = std::min(bottom, c.coords[3 * i + 2]);
    }
    for (std::size_t i = 0; i < 200; ++i) {
      const double z = c.coords[3 * i + 2];
      if (c.point_labels[i] == 2) EXPECT_EQ(z, bottom);
      if (c.point_labels[i] == 4) EXPECT_EQ(z, top);
    }
  }
}

TEST(GenPartShapes, EveryPartPresentOverManySeeds) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Dataset ds = gen_part_shapes(1, 64, seed);
    ds.validate();
    for (const PointCloud& c : ds.items) {
      const std::set<int> present(c.point_labels.begin(), c.point_labels.end());
      const auto& parts = ds.category_parts[*c.category];
      EXPECT_EQ(present, std::set<int>(parts.begin(), parts.end())) << "seed " << seed;
    }
  }
  EXPECT_EQ(gen_part_shapes(1, 64, 0).num_parts(), 5u);
}

TEST(Split, DisjointAndClassInterleaved) {
  Dataset ds = gen_shapes(10, 16, 1);
  assign_split(ds, 20, 6, 1);
  EXPECT_EQ(ds.train.size(), 20u);
  EXPECT_EQ(ds.test.size(), 6u);
  std::set<std::size_t> seen(ds.train.begin(), ds.train.end());
  for (std::size_t t : ds.test) EXPECT_TRUE(seen.insert(t).second);
  int per_class[3] = {0, 0, 0};
  for (std::size_t t : ds.test) ++per_class[*ds.items[t].category];
  EXPECT_EQ(per_class[0], 2);
  EXPECT_EQ(per_class[1], 2);
  EXPECT_EQ(per_class[2], 2);
  ds.validate();
  EXPECT_THROW(assign_split(ds, 25, 6, 1), ConfigError);
  ds.test.push_back(ds.train[0]);
  EXPECT_THROW(ds.validate(), DataError);
}

TEST(XyzFiles, TwoPointExample) {
  TempDir dir("xyz");
  write_text(dir / "a.xyz", "0 0 0\n1 2 3\n");
  const PointCloud c = load_xyz(dir / "a.xyz");
  EXPECT_EQ(c.size(), 2u);
  EXPECT_EQ(c.coords[5], 3.0);
  EXPECT_FALSE(c.features.defined());
}

TEST(XyzFiles, ExtraColumnsBecomeFeatures) {
  TempDir dir("xyz");
  write_text(dir / "f.xyz", "0 0 0 1 2\n1 1 1 3 4\n");
  const PointCloud c = load_xyz(dir / "f.xyz");
  EXPECT_EQ(c.features.shape(), (Shape{2, 2}));
  EXPECT_EQ(c.features[3], 4.0);
}

TEST(XyzFiles, RoundTripIsLossless) {
  TempDir dir("xyz");
  Rng rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    PointCloud c;
    c.coords = oracle::random_tensor({37, 3}, rng, -1e3, 1e3);
    if (trial % 2) c.features = oracle::random_tensor({37, 2}, rng, -1e-7, 1e-7);
    save_xyz(dir / "r.xyz", c);
    const PointCloud back = load_xyz(dir / "r.xyz");
    EXPECT_EQ(oracle::max_abs_diff(back.coords, c.coords), 0.0);
    if (trial % 2) EXPECT_EQ(oracle::max_abs_diff(back.features, c.features), 0.0);
  }
}

TEST(XyzFiles, MalformedInputsRejected) {
  TempDir dir("xyz");
  write_text(dir / "empty.xyz", "");
  EXPECT_THROW(load_xyz(dir / "empty.xyz"), ParseError);
  write_text(dir / "bad.xyz", "0 0 0\n1 x 3\n");
  try {
    load_xyz(dir / "bad.xyz");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  write_text(dir / "nan.xyz", "0 0 0\nnan 1 1\n");
  EXPECT_THROW(load_xyz(dir / "nan.xyz"), ParseError);
  write_text(dir / "ragged.xyz", "0 0 0\n1 1 1 1\n");
  EXPECT_THROW(load_xyz(dir / "ragged.xyz"), ParseError);
  EXPECT_THROW(load_xyz(dir / "missing.xyz"), DataError);
}

TEST(LabelFiles, RoundTripAndCountCheck) {
  TempDir dir("labels");
  const std::vector<int> labels = {0, 3, 1, 1};
  save_labels(dir / "l.labels", labels);
  EXPECT_EQ(load_labels(dir / "l.labels", 4), labels);
  EXPECT_THROW(load_labels(dir / "l.labels", 5), DataError);
  write_text(dir / "bad.labels", "1\n2.5\n");
  EXPECT_THROW(load_labels(dir / "bad.labels"), ParseError);
  write_text(dir / "empty.labels", "");
  EXPECT_THROW(load_labels(dir / "empty.labels"), ParseError);
}

TEST(Manifest, RoundTripPreservesDataset) {
  TempDir dir("manifest");
  Dataset ds = gen_part_shapes(3, 32, 8);
  assign_split(ds, 4, 2, 8);
  save_dataset(dir.path(), ds);
  const Dataset back = load_manifest(dir / "manifest.json");
  EXPECT_EQ(back.task, Task::Segmentation);
  EXPECT_EQ(back.class_names, ds.class_names);
  EXPECT_EQ(back.category_parts, ds.category_parts);
  auto sorted = [](std::vector<std::size_t> v) {
    std::sort(v.begin(), v.end());
    return v;
  };
  EXPECT_EQ(back.train, sorted(ds.train));
  EXPECT_EQ(back.test, sorted(ds.test));
  ASSERT_EQ(back.items.size(), ds.items.size());
  for (std::size_t i = 0; i < ds.items.size(); ++i) {
    EXPECT_EQ(oracle::max_abs_diff(back.items[i].coords, ds.items[i].coords), 0.0);
    EXPECT_EQ(back.items[i].point_labels, ds.items[i].point_labels);
    EXPECT_EQ(back.items[i].category, ds.items[i].category);
  }
  TempDir again("manifest");
  save_dataset(again.path(), ds);
  EXPECT_EQ(read_file(dir / "manifest.json"), read_file(again / "manifest.json"));
  EXPECT_EQ(read_file(dir / "clouds/000001.xyz"), read_file(again / "clouds/000001.xyz"));
}

TEST(Manifest, BadManifestIsDataError) {
  TempDir dir("manifest");
  write_text(dir / "manifest.json", "{not json");
  EXPECT_THROW(load_manifest(dir / "manifest.json"), DataError);
  write_text(dir / "m2.json", R"({"format":"ctcloud-manifest-1","task":"classification","class_names":["a"],)"
                              R"("items":[{"points":"nope.xyz","category":0,"split":"train"}]})");
  EXPECT_THROW(load_manifest(dir / "m2.json"), DataError);
}

TEST(PointCloudInvariants, Validation) {
  PointCloud c;
  c.coords = Tensor({2, 3}, {0, 0, 0, 1, std::nan(""), 0});
  EXPECT_THROW(c.validate(), NumericError);
  c.coords = Tensor::zeros({2, 3});
  c.point_labels = {1};
  EXPECT_THROW(c.validate(), DimensionError);
}

}  // namespace
}  // namespace ctcloud
