#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ctcloud/tensor.hpp"

namespace ctcloud {

enum class Mode { Train, Eval };

/// C = A·B for A [M×K], B [K×P].
Tensor matmul(const Tensor& a, const Tensor& b);
/// x·W + bias for x [N×K], W [K×P], bias [P] (bias may be undefined).
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// Elementwise sum. `b` may also be a rank-1 bias matching a's trailing axis.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor relu(const Tensor& x);

Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis);
Tensor reshape(const Tensor& x, Shape shape);
/// 2-D transpose.
Tensor transpose(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// Softmax over the first index of an [N×M] matrix: every column sums to 1.
Tensor softmax_cols(const Tensor& x);
/// Softmax over the last index of an [N×M] matrix: every row sums to 1.
Tensor softmax_rows(const Tensor& x);
/// Divides each row of a non-negative matrix by its sum (+eps).
Tensor l1_normalize_rows(const Tensor& x, double eps = 1e-12);

/// Max over `axis`; backward routes to the first maximal position.
Tensor max_pool_axis(const Tensor& x, std::size_t axis);

/// Selects rows along axis 0; repeated indices accumulate in backward.
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);
/// [N×C] -> [N×S×C], each row repeated S times.
Tensor expand_rows(const Tensor& x, std::size_t repeats);

/// Per-channel normalization statistics shared across forward calls.
struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;
  double eps = 1e-5;
};

/// Batch normalization of x [N×C] over its rows.
Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 BatchNormState& state, Mode mode);

/// Mean over rows of -log softmax(logits)[label].
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

/// Inverted dropout; identity in Eval mode or when p == 0.
Tensor dropout(const Tensor& x, double p, Mode mode, std::mt19937_64& rng);

/// Names of every differentiable operation, as recorded in Tensor::op().
const std::vector<std::string>& differentiable_op_names();

/// Records a fingerprint of the piecewise-linear branch choices (relu signs,
/// max-pool winners) taken by forwards run on this thread while alive.
/// Finite-difference checks use it to detect steps that cross a kink.
class ActivationPattern {
 public:
  ActivationPattern();
  ~ActivationPattern();
  ActivationPattern(const ActivationPattern&) = delete;
  ActivationPattern& operator=(const ActivationPattern&) = delete;

  std::uint64_t fingerprint() const { return hash_; }
  void mix(std::uint64_t value);

 private:
  std::uint64_t hash_;
  ActivationPattern* previous_;
};

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }

}  // namespace ctcloud
