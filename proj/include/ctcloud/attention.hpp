#pragma once

#include <string>

#include "ctcloud/layers.hpp"
#include "ctcloud/ops.hpp"

namespace ctcloud {

struct OAConfig {
  std::size_t d_e = 256;  // embedding / value width
  std::size_t d_a = 64;   // query / key width

  /// d_a defaults to a quarter of d_e (at least 1).
  static OAConfig with_embedding(std::size_t d_e, std::size_t d_a = 0);
  void validate() const;
};

/// Weights of one offset-attention layer. Q/K/V projections carry no bias.
struct OAWeights {
  Tensor w_q;  // [d_e×d_a]
  Tensor w_k;  // [d_e×d_a]
  Tensor w_v;  // [d_e×d_e]
  Linear lbr_linear;
  BatchNorm lbr_norm;

  static OAWeights create(ParameterSet& params, const std::string& name, const OAConfig& cfg, Rng& rng);
  std::size_t embedding() const { return w_v.dim(0); }
};

struct QKV {
  Tensor q;
  Tensor k;
  Tensor v;
};

QKV project_qkv(const Tensor& f_in, const OAWeights& w);

/// Q·Kᵀ, softmax over the first index (columns sum to 1), then every row
/// divided by its sum. Rows of the result are convex weights.
Tensor attention_matrix(const Tensor& q, const Tensor& k);

/// LBR(A·V − F_in) + F_in, LBR = linear -> batchnorm -> relu.
/// With batch > 1, `f_in` stacks that many equal-sized clouds; attention is
/// computed per cloud while the batchnorm sees every row.
Tensor offset_attention(const Tensor& f_in, OAWeights& w, Mode mode, std::size_t batch = 1);

}  // namespace ctcloud
