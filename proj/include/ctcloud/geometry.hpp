#pragma once

#include <optional>
#include <span>
#include <vector>

#include "ctcloud/tensor.hpp"

namespace ctcloud {

using Index = std::size_t;

/// N points with xyz coordinates, optional per-point features and labels.
struct PointCloud {
  Tensor coords;                 // [N×3]
  Tensor features;               // [N×C] or undefined
  std::vector<int> point_labels;  // empty or length N
  std::optional<int> category;   // class label (classification) or shape category

  std::size_t size() const { return coords.dim(0); }
  /// Throws DimensionError/NumericError when an invariant is violated.
  void validate() const;
};

/// Sampled centers and their k-NN groups, all indexing the source cloud.
struct NeighborIndex {
  std::vector<Index> centers;    // [N_out]
  std::vector<Index> neighbors;  // [N_out×S], row-major
  std::size_t group_size = 0;    // S

  std::size_t size() const { return centers.size(); }
  std::span<const Index> group(std::size_t i) const {
    return std::span<const Index>(neighbors).subspan(i * group_size, group_size);
  }
};

/// Greedy farthest point sampling.
///
/// The first pick is the point farthest from the centroid; every later pick
/// maximizes the distance to the already chosen set. Ties are resolved by
/// the lexicographically smallest (x, y, z) and then by the smaller index,
/// and the centroid is accumulated in that canonical order, so the selected
/// set of coordinates does not depend on the input order.
std::vector<Index> farthest_point_sample(const Tensor& coords, std::size_t n_out);

/// Indices of the k nearest source points for every query, row-major
/// [M×k], ascending by distance with ties broken by smaller index.
std::vector<Index> knn_group(const Tensor& coords_src, const Tensor& coords_query, std::size_t k);

/// FPS down to `n_out` centers followed by k-NN grouping with `group_size`.
NeighborIndex sample_and_group(const Tensor& coords, std::size_t n_out, std::size_t group_size);

/// Rows of a non-differentiable tensor, e.g. the coordinates of sampled centers.
Tensor select_rows(const Tensor& x, std::span<const Index> rows);

/// [N_out×S×(C+3)]: neighbor features concatenated with neighbor coordinates
/// relative to their center. Differentiable in `features`.
Tensor group_features(const Tensor& features, const Tensor& coords, const NeighborIndex& idx,
                      const Tensor& center_coords);

/// Inverse-distance weights over the k nearest sources of each destination.
struct InterpolationWeights {
  std::size_t k = 0;
  std::vector<Index> neighbors;  // [N_dst×k]
  std::vector<double> weights;   // [N_dst×k], each row sums to 1
};

InterpolationWeights interpolation_weights(const Tensor& coords_src, const Tensor& coords_dst,
                                           std::size_t k = 3, double p = 2.0, double eps = 1e-8);

/// Distance-weighted up-sampling of [N_src×C] features onto `coords_dst`.
Tensor interpolate_up(const Tensor& feat_src, const Tensor& coords_src, const Tensor& coords_dst,
                      std::size_t k = 3, double p = 2.0, double eps = 1e-8);
Tensor interpolate_up(const Tensor& feat_src, const InterpolationWeights& weights);

// Stacked batches: `batch` clouds of equal size concatenated along rows.
// Sampling, grouping and interpolation stay within each cloud and every
// returned index refers to a row of the stacked tensor.

/// Row range [b·rows, (b+1)·rows) of a non-differentiable tensor.
Tensor cloud_rows(const Tensor& stacked, std::size_t batch, std::size_t b);

NeighborIndex sample_and_group_batched(const Tensor& coords, std::size_t batch, std::size_t n_out,
                                       std::size_t group_size);
InterpolationWeights interpolation_weights_batched(const Tensor& coords_src, const Tensor& coords_dst,
                                                   std::size_t batch, std::size_t k = 3,
                                                   double p = 2.0, double eps = 1e-8);

/// Global features at the positions of the local points (a row gather).
Tensor downsample_select(const Tensor& feat_global, std::span<const Index> global_indices_of_local);

}  // namespace ctcloud
