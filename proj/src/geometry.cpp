#include "ctcloud/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ctcloud/errors.hpp"
#include "ctcloud/ops.hpp"

namespace ctcloud {

namespace {

void require_xyz(const Tensor& coords, const char* what) {
  if (coords.rank() != 2 || coords.dim(1) != 3) {
    throw DimensionError(std::string(what) + ": expected [N×3] coordinates, got " +
                         shape_str(coords.shape()));
  }
}

inline double sq_dist(const double* a, const double* b) {
  const double dx = a[0] - b[0];
  const double dy = a[1] - b[1];
  const double dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

}  // namespace

void PointCloud::validate() const {
  require_xyz(coords, "point cloud");
  for (double v : coords.data()) {
    if (!std::isfinite(v)) throw NumericError("point cloud has non-finite coordinates");
  }
  if (features.defined() && (features.rank() != 2 || features.dim(0) != size())) {
    throw DimensionError("point cloud features " + shape_str(features.shape()) +
                         " do not match " + std::to_string(size()) + " points");
  }
  if (!point_labels.empty() && point_labels.size() != size()) {
    throw DimensionError("point cloud has " + std::to_string(point_labels.size()) +
                         " labels for " + std::to_string(size()) + " points");
  }
}

std::vector<Index> farthest_point_sample(const Tensor& coords, std::size_t n_out) {
  require_xyz(coords, "farthest_point_sample");
  const std::size_t n = coords.dim(0);
  if (n_out < 1 || n_out > n) {
    throw DimensionError("farthest_point_sample: cannot select " + std::to_string(n_out) +
                         " of " + std::to_string(n) + " points");
  }
  const double* p = coords.data().data();

  std::vector<Index> canon(n);
  std::iota(canon.begin(), canon.end(), Index{0});
  std::sort(canon.begin(), canon.end(), [p](Index a, Index b) {
    const double* pa = p + 3 * a;
    const double* pb = p + 3 * b;
    if (pa[0] != pb[0]) return pa[0] < pb[0];
    if (pa[1] != pb[1]) return pa[1] < pb[1];
    if (pa[2] != pb[2]) return pa[2] < pb[2];
    return a < b;
  });

  double centroid[3] = {0.0, 0.0, 0.0};
  for (Index i : canon) {
    for (int d = 0; d < 3; ++d) centroid[d] += p[3 * i + d];
  }
  for (double& c : centroid) c /= static_cast<double>(n);

  // Scanning in canonical order with a strict comparison keeps the
  // lexicographically smallest point among equal maxima.
  Index seed = canon[0];
  double best = -1.0;
  for (Index i : canon) {
    const double d = sq_dist(p + 3 * i, centroid);
    if (d > best) {
      best = d;
      seed = i;
    }
  }

  std::vector<Index> selected{seed};
  selected.reserve(n_out);
  std::vector<char> taken(n, 0);
  taken[seed] = 1;
  std::vector<double> min_dist(n);
  for (Index i = 0; i < n; ++i) min_dist[i] = sq_dist(p + 3 * i, p + 3 * seed);

  while (selected.size() < n_out) {
    Index pick = n;
    best = -1.0;
    for (Index i : canon) {
      if (!taken[i] && min_dist[i] > best) {
        best = min_dist[i];
        pick = i;
      }
    }
    selected.push_back(pick);
    taken[pick] = 1;
    const double* pp = p + 3 * pick;
    for (Index i = 0; i < n; ++i) min_dist[i] = std::min(min_dist[i], sq_dist(p + 3 * i, pp));
  }
  return selected;
}

std::vector<Index> knn_group(const Tensor& coords_src, const Tensor& coords_query, std::size_t k) {
  require_xyz(coords_src, "knn_group");
  require_xyz(coords_query, "knn_group");
  const std::size_t n = coords_src.dim(0);
  const std::size_t m = coords_query.dim(0);
  if (k < 1 || k > n) {
    throw DimensionError("knn_group: k = " + std::to_string(k) + " but only " + std::to_string(n) +
                         " source points");
  }
  const double* src = coords_src.data().data();
  const double* qry = coords_query.data().data();

  std::vector<Index> out(m * k);
  std::vector<std::pair<double, Index>> cand(n);
  for (std::size_t q = 0; q < m; ++q) {
    for (Index i = 0; i < n; ++i) cand[i] = {sq_dist(src + 3 * i, qry + 3 * q), i};
    // pair ordering compares distance first, then index.
    if (k < n) std::nth_element(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k - 1), cand.end());
    std::sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k));
    for (std::size_t j = 0; j < k; ++j) out[q * k + j] = cand[j].second;
  }
  return out;
}

NeighborIndex sample_and_group(const Tensor& coords, std::size_t n_out, std::size_t group_size) {
  NeighborIndex idx;
  idx.centers = farthest_point_sample(coords, n_out);
  idx.group_size = group_size;
  idx.neighbors = knn_group(coords, select_rows(coords, idx.centers), group_size);
  return idx;
}

Tensor select_rows(const Tensor& x, std::span<const Index> rows) {
  NoGradGuard no_grad;
  return gather_rows(x, rows);
}

Tensor group_features(const Tensor& features, const Tensor& coords, const NeighborIndex& idx,
                      const Tensor& center_coords) {
  require_xyz(coords, "group_features");
  require_xyz(center_coords, "group_features");
  if (features.rank() != 2 || features.dim(0) != coords.dim(0)) {
    throw DimensionError("group_features: features " + shape_str(features.shape()) +
                         " do not match coordinates " + shape_str(coords.shape()));
  }
  if (center_coords.dim(0) != idx.size() || idx.neighbors.size() != idx.size() * idx.group_size) {
    throw DimensionError("group_features: neighbor index does not match " +
                         std::to_string(center_coords.dim(0)) + " centers");
  }
  const std::size_t m = idx.size();
  const std::size_t s = idx.group_size;
  const std::size_t c = features.dim(1);
  const double* p = coords.data().data();
  const double* ctr = center_coords.data().data();
  std::vector<double> rel(m * s * 3);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < s; ++j) {
      const Index nb = idx.neighbors[i * s + j];
      if (nb >= coords.dim(0)) throw DimensionError("group_features: neighbor index out of range");
      for (int d = 0; d < 3; ++d) rel[(i * s + j) * 3 + d] = p[3 * nb + d] - ctr[3 * i + d];
    }
  }
  Tensor gathered = gather_rows(features, idx.neighbors);
  Tensor grouped = concat({gathered, Tensor({m * s, 3}, std::move(rel))}, 1);
  return reshape(grouped, {m, s, c + 3});
}

InterpolationWeights interpolation_weights(const Tensor& coords_src, const Tensor& coords_dst,
                                           std::size_t k, double p, double eps) {
  require_xyz(coords_src, "interpolate_up");
  require_xyz(coords_dst, "interpolate_up");
  InterpolationWeights w;
  w.k = std::min(k, coords_src.dim(0));
  w.neighbors = knn_group(coords_src, coords_dst, w.k);
  w.weights.resize(w.neighbors.size());
  const double* src = coords_src.data().data();
  const double* dst = coords_dst.data().data();
  const std::size_t m = coords_dst.dim(0);
  for (std::size_t q = 0; q < m; ++q) {
    double total = 0.0;
    for (std::size_t j = 0; j < w.k; ++j) {
      const double d2 = sq_dist(src + 3 * w.neighbors[q * w.k + j], dst + 3 * q);
      const double dp = p == 2.0 ? d2 : std::pow(std::sqrt(d2), p);
      w.weights[q * w.k + j] = 1.0 / (dp + eps);
      total += w.weights[q * w.k + j];
    }
    for (std::size_t j = 0; j < w.k; ++j) w.weights[q * w.k + j] /= total;
  }
  return w;
}

Tensor interpolate_up(const Tensor& feat_src, const InterpolationWeights& w) {
  if (feat_src.rank() != 2) {
    throw DimensionError("interpolate_up: expected [N×C] features, got " + shape_str(feat_src.shape()));
  }
  const std::size_t c = feat_src.dim(1);
  const std::size_t k = w.k;
  const std::size_t m = w.neighbors.size() / k;
  const double* f = feat_src.data().data();
  std::vector<double> out(m * c, 0.0);
  for (std::size_t q = 0; q < m; ++q) {
    double* dst = out.data() + q * c;
    for (std::size_t j = 0; j < k; ++j) {
      const Index src = w.neighbors[q * k + j];
      if (src >= feat_src.dim(0)) throw DimensionError("interpolate_up: source index out of range");
      const double wt = w.weights[q * k + j];
      for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += wt * f[src * c + ch];
    }
  }
  return Tensor::from_op("interpolate_up", {m, c}, std::move(out), {feat_src},
                         [w, m, c, k](Node& o) {
                           auto g = o.input_grad(0);
                           if (g.empty()) return;
                           for (std::size_t q = 0; q < m; ++q) {
                             const double* go = o.grad.data() + q * c;
                             for (std::size_t j = 0; j < k; ++j) {
                               double* gs = g.data() + w.neighbors[q * k + j] * c;
                               const double wt = w.weights[q * k + j];
                               for (std::size_t ch = 0; ch < c; ++ch) gs[ch] += wt * go[ch];
                             }
                           }
                         });
}

Tensor interpolate_up(const Tensor& feat_src, const Tensor& coords_src, const Tensor& coords_dst,
                      std::size_t k, double p, double eps) {
  if (feat_src.rank() != 2 || feat_src.dim(0) != coords_src.dim(0)) {
    throw DimensionError("interpolate_up: features " + shape_str(feat_src.shape()) +
                         " do not match source coordinates " + shape_str(coords_src.shape()));
  }
  return interpolate_up(feat_src, interpolation_weights(coords_src, coords_dst, k, p, eps));
}

Tensor cloud_rows(const Tensor& stacked, std::size_t batch, std::size_t b) {
  if (batch == 0 || stacked.dim(0) % batch != 0 || b >= batch) {
    throw DimensionError("cloud_rows: " + shape_str(stacked.shape()) + " is not " + std::to_string(batch) +
                         " equal clouds");
  }
  const std::size_t rows = stacked.dim(0) / batch;
  const std::size_t width = stacked.numel() / stacked.dim(0);
  Shape shape = stacked.shape();
  shape[0] = rows;
  auto d = stacked.data().subspan(b * rows * width, rows * width);
  return Tensor(std::move(shape), std::vector<double>(d.begin(), d.end()));
}

NeighborIndex sample_and_group_batched(const Tensor& coords, std::size_t batch, std::size_t n_out,
                                       std::size_t group_size) {
  if (batch == 1) return sample_and_group(coords, n_out, group_size);
  const std::size_t n = coords.dim(0) / batch;
  NeighborIndex all;
  all.group_size = group_size;
  for (std::size_t b = 0; b < batch; ++b) {
    const NeighborIndex one = sample_and_group(cloud_rows(coords, batch, b), n_out, group_size);
    for (Index c : one.centers) all.centers.push_back(c + b * n);
    for (Index nb : one.neighbors) all.neighbors.push_back(nb + b * n);
  }
  return all;
}

InterpolationWeights interpolation_weights_batched(const Tensor& coords_src, const Tensor& coords_dst,
                                                   std::size_t batch, std::size_t k, double p,
                                                   double eps) {
  if (batch == 1) return interpolation_weights(coords_src, coords_dst, k, p, eps);
  const std::size_t n_src = coords_src.dim(0) / batch;
  InterpolationWeights all;
  for (std::size_t b = 0; b < batch; ++b) {
    const InterpolationWeights one = interpolation_weights(cloud_rows(coords_src, batch, b),
                                                           cloud_rows(coords_dst, batch, b), k, p, eps);
    all.k = one.k;
    for (Index nb : one.neighbors) all.neighbors.push_back(nb + b * n_src);
    all.weights.insert(all.weights.end(), one.weights.begin(), one.weights.end());
  }
  return all;
}

Tensor downsample_select(const Tensor& feat_global, std::span<const Index> global_indices_of_local) {
  return gather_rows(feat_global, global_indices_of_local);
}

}  // namespace ctcloud
