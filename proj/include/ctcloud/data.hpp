#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ctcloud/geometry.hpp"
#include "ctcloud/layers.hpp"
#include "ctcloud/networks.hpp"

namespace ctcloud {

/// A labelled collection of clouds with a train/test split.
///
/// Classification clouds carry their class in `category`. Part-segmentation
/// clouds carry their shape category there and global part ids in
/// `point_labels`; `category_parts` lists the part ids of each category.
struct Dataset {
  Task task = Task::Classification;
  std::vector<PointCloud> items;
  std::vector<std::string> class_names;
  std::vector<std::vector<int>> category_parts;
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;

  std::size_t num_parts() const;
  /// Labels in range, split indices valid and disjoint.
  void validate() const;
};

// Raw surface samplers, before any normalization.
Tensor sample_sphere(std::size_t n, Rng& rng);             // unit radius
Tensor sample_cube(std::size_t n, Rng& rng);               // side 1, faces at ±0.5
Tensor sample_torus(std::size_t n, double major, double minor, Rng& rng);

/// Translates by `center` (or the centroid when null) and scales so the
/// farthest point has norm 1.
Tensor normalize_unit_sphere(const Tensor& coords, const double* center = nullptr);

/// Sphere / cube / torus classification set, every item in the train split.
Dataset gen_shapes(std::size_t n_per_class, std::size_t n_points, std::uint64_t seed);

/// Two-part spheres (lower/upper hemisphere) and three-part cylinders
/// (bottom cap, barrel, top cap).
Dataset gen_part_shapes(std::size_t n_per_class, std::size_t n_points, std::uint64_t seed);

/// Picks `n_train` and `n_test` items with classes interleaved; the rest
/// are left out of both splits.
void assign_split(Dataset& ds, std::size_t n_train, std::size_t n_test, std::uint64_t seed);

/// Whitespace-separated `x y z [f1 ... fC]` per line.
PointCloud load_xyz(const std::filesystem::path& path);
void save_xyz(const std::filesystem::path& path, const PointCloud& cloud);
/// One integer per line; `expected_count` of 0 skips the count check.
std::vector<int> load_labels(const std::filesystem::path& path, std::size_t expected_count = 0);
void save_labels(const std::filesystem::path& path, std::span<const int> labels);

/// Writes one .xyz (+ .labels) file per item and a manifest.json index.
void save_dataset(const std::filesystem::path& dir, const Dataset& ds);
Dataset load_manifest(const std::filesystem::path& manifest_path);

}  // namespace ctcloud
