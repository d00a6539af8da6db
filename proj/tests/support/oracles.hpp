#pragma once

// Independent reference computations used by the unit and acceptance tests.
// Everything here is written with plain loops over doubles so it shares no
// code path with the autodiff ops it checks.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ctcloud/attention.hpp"
#include "ctcloud/ct_block.hpp"
#include "ctcloud/geometry.hpp"
#include "ctcloud/layers.hpp"

namespace ctcloud::oracle {

/// Row-major dense matrix.
struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> v;

  Mat() = default;
  Mat(std::size_t r, std::size_t c) : rows(r), cols(c), v(r * c, 0.0) {}
  double& at(std::size_t r, std::size_t c) { return v[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return v[r * cols + c]; }
};

Mat to_mat(const Tensor& t);
double max_abs_diff(const Mat& a, const Tensor& t);
double max_abs_diff(const Tensor& a, const Tensor& b);

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0, bool requires_grad = false);
/// Uniform points in [-1, 1]^3; duplicates have probability zero.
Tensor random_cloud(std::size_t n, Rng& rng);
std::vector<std::size_t> random_permutation(std::size_t n, Rng& rng);
/// out[i] = t[perm[i]]
Tensor permute_rows(const Tensor& t, const std::vector<std::size_t>& perm);

/// Central difference of a scalar function of every element of `x`.
std::vector<double> numeric_gradient(const std::function<double()>& f, Tensor x, double h = 1e-6);

// Geometry.

double squared_distance(const Tensor& a, std::size_t i, const Tensor& b, std::size_t j);
/// Empty when `picks` is a valid greedy max-min sequence: the first pick is
/// the centroid-farthest point and each later pick maximizes the distance to
/// the points already chosen, found by scanning every remaining point.
/// Otherwise a description of the first violation.
std::string check_fps_sequence(const Tensor& coords, const std::vector<Index>& picks);
double min_pairwise_distance(const Tensor& coords, const std::vector<Index>& subset);
/// Largest min-pairwise distance over every k-subset, by enumeration.
double best_maxmin_distance(const Tensor& coords, std::size_t k);
/// Sorts all (distance, index) pairs for every query.
std::vector<Index> knn_by_sorting(const Tensor& src, const Tensor& query, std::size_t k);
/// Inverse-distance interpolation over the k nearest sources found by sorting.
Mat interpolate_by_sorting(const Tensor& feat, const Tensor& src, const Tensor& dst, std::size_t k = 3,
                           double p = 2.0, double eps = 1e-8);

// Layers.

Mat linear(const Mat& x, const Linear& l);
Mat batchnorm(const Mat& x, const BatchNorm& bn, Mode mode);
Mat relu(Mat x);
Mat mlp(const Mat& x, const MlpBlock& block, Mode mode);
/// LBR(A·V − F) + F with A column-softmaxed then row-normalized.
Mat offset_attention(const Mat& f, const OAWeights& w, Mode mode);
/// Set-abstraction layer: FPS centers, k-NN groups with relative
/// coordinates, two MLP blocks, max over each group.
Mat set_abstraction(const Tensor& features, const Tensor& coords, const CTBlockConfig& cfg,
                    const MlpBlock& conv1, const MlpBlock& conv2, Mode mode);

/// Zeroes weight, bias and beta of both transmission elements.
void zero_transmission(CTBlockWeights& w);

/// Random block input: a global cloud, its FPS subset as the local cloud,
/// and random features on both.
BranchState random_state(std::size_t n_global, std::size_t n_local, std::size_t c_in, std::size_t d_e,
                         Rng& rng);

struct DecouplingError {
  double local = 0.0;   // block local output vs set_abstraction
  double global = 0.0;  // block global output vs offset_attention on the input
};

/// Builds a block with random weights and running statistics, zeroes its
/// transmission elements and compares both branch outputs with the
/// standalone references.
DecouplingError decoupling_error(const CTBlockConfig& cfg, std::size_t n_global, std::uint64_t seed, Mode mode);

}  // namespace ctcloud::oracle
