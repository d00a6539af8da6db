#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "ctcloud/ops.hpp"
#include "ctcloud/tensor.hpp"

namespace ctcloud {

using Rng = std::mt19937_64;

/// Named trainable parameters plus non-trainable buffers (running stats).
/// Both maps are ordered by name, which fixes enumeration order.
class ParameterSet {
 public:
  /// Registers `init` as a trainable parameter. Throws ConfigError on a
  /// duplicate name.
  Tensor add_parameter(const std::string& name, Tensor init);
  Tensor add_buffer(const std::string& name, Tensor init);

  const std::map<std::string, Tensor>& parameters() const { return params_; }
  const std::map<std::string, Tensor>& buffers() const { return buffers_; }
  Tensor parameter(const std::string& name) const;
  Tensor buffer(const std::string& name) const;

  /// Zero-fills every parameter grad (allocating where absent).
  void zero_grad();
  std::size_t scalar_count() const;

 private:
  void check_unique(const std::string& name) const;
  std::map<std::string, Tensor> params_;
  std::map<std::string, Tensor> buffers_;
};

/// y = x·W + b with W stored [in×out]. Kaiming-uniform init, zero bias.
struct Linear {
  Tensor weight;
  Tensor bias;

  static Linear create(ParameterSet& params, const std::string& name, std::size_t in,
                       std::size_t out, Rng& rng, bool with_bias = true);
  Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }
  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }
};

struct BatchNorm {
  Tensor gamma;
  Tensor beta;
  BatchNormState state;

  static BatchNorm create(ParameterSet& params, const std::string& name, std::size_t channels);
  Tensor operator()(const Tensor& x, Mode mode);
};

/// Stack of linear -> batchnorm -> relu layers applied row-wise to [R×C].
struct MlpBlock {
  std::vector<Linear> linears;
  std::vector<BatchNorm> norms;

  static MlpBlock create(ParameterSet& params, const std::string& name, std::size_t in,
                         const std::vector<std::size_t>& widths, Rng& rng);
  Tensor operator()(const Tensor& x, Mode mode);
  std::size_t out_features() const { return linears.back().out_features(); }
};

/// Linear -> relu -> dropout -> linear classifier head.
struct Classifier {
  Linear hidden;
  Linear out;
  double dropout = 0.5;

  static Classifier create(ParameterSet& params, const std::string& name, std::size_t in,
                           std::size_t hidden_width, std::size_t classes, double dropout, Rng& rng);
  Tensor operator()(const Tensor& x, Mode mode, Rng& dropout_rng) const;
};

}  // namespace ctcloud
