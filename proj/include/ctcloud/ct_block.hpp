#pragma once

#include <string>
#include <vector>

#include "ctcloud/attention.hpp"
#include "ctcloud/geometry.hpp"
#include "ctcloud/layers.hpp"

namespace ctcloud {

/// Which parts of the block are present. The reduced variants exist for
/// ablation runs.
enum class BlockVariant { Full, ConvOnly, TransformerOnly, NoTransmission };

BlockVariant parse_block_variant(const std::string& name);
std::string to_string(BlockVariant v);

struct CTBlockConfig {
  std::size_t n_in = 512;
  std::size_t n_out = 256;
  std::size_t c_in = 64;
  std::size_t c_mid = 128;
  std::size_t c_out = 128;
  std::size_t group_size = 32;  // S
  std::size_t d_e = 256;
  std::size_t d_a = 0;  // 0 -> d_e / 4
  std::vector<std::size_t> mlp1_widths;  // empty -> {c_mid, c_mid}
  std::vector<std::size_t> mlp2_widths;  // empty -> {c_out, c_out}
  BlockVariant variant = BlockVariant::Full;

  bool has_conv() const { return variant != BlockVariant::TransformerOnly; }
  bool has_transformer() const { return variant != BlockVariant::ConvOnly; }
  bool has_transmission() const { return variant == BlockVariant::Full; }
  std::vector<std::size_t> conv1_widths() const;
  std::vector<std::size_t> conv2_widths() const;
  OAConfig attention() const { return OAConfig::with_embedding(d_e, d_a); }
  /// Throws ConfigError naming the offending field.
  void validate() const;
};

/// Point-count and channel bridge between the branches: linear + batchnorm.
struct FeatureTransmission {
  Linear mlp;
  BatchNorm bn;

  static FeatureTransmission create(ParameterSet& params, const std::string& name,
                                    std::size_t from, std::size_t to, Rng& rng);
  Tensor operator()(const Tensor& x, Mode mode) { return bn(mlp(x), mode); }
};

struct CTBlockWeights {
  MlpBlock conv1;
  MlpBlock conv2;
  FeatureTransmission ft1;  // local -> global
  FeatureTransmission ft2;  // global -> local
  OAWeights trans;

  static CTBlockWeights create(ParameterSet& params, const std::string& name,
                               const CTBlockConfig& cfg, Rng& rng);
};

/// Features flowing between CT-blocks. With batch > 1 every tensor stacks
/// that many clouds along rows and the indices refer to stacked rows.
struct BranchState {
  std::size_t batch = 1;
  Tensor local_features;                // [N_l×C_l]
  Tensor local_coords;                  // [N_l×3]
  std::vector<Index> local_global_idx;  // row of each local point in the global cloud
  Tensor global_features;               // [N_g×d_e]
  Tensor global_coords;                 // [N_g×3]
};

/// One CT-block:
///   F_l' = conv2(conv1(SG(F_l)) + ft2(F_g'))
///   F_g' = trans(ft1(conv1(SG(F_l))) + F_g)
BranchState ct_block_forward(const BranchState& state, const CTBlockConfig& cfg,
                             CTBlockWeights& weights, Mode mode);

/// A chain of CT-blocks whose shapes are checked when it is built.
class CTStack {
 public:
  static CTStack create(ParameterSet& params, const std::string& name,
                        std::vector<CTBlockConfig> configs, Rng& rng);

  /// All intermediate states, one per block.
  std::vector<BranchState> forward(const BranchState& init, Mode mode);

  const std::vector<CTBlockConfig>& configs() const { return configs_; }
  std::vector<CTBlockWeights>& weights() { return weights_; }
  std::size_t size() const { return configs_.size(); }

 private:
  std::vector<CTBlockConfig> configs_;
  std::vector<CTBlockWeights> weights_;
};

}  // namespace ctcloud
