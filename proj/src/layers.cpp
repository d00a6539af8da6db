#include "ctcloud/layers.hpp"

#include <cmath>

#include "ctcloud/errors.hpp"

namespace ctcloud {

void ParameterSet::check_unique(const std::string& name) const {
  if (params_.count(name) || buffers_.count(name)) {
    throw ConfigError("duplicate parameter name '" + name + "'");
  }
}

Tensor ParameterSet::add_parameter(const std::string& name, Tensor init) {
  check_unique(name);
  init.set_requires_grad(true);
  params_.emplace(name, init);
  return init;
}

Tensor ParameterSet::add_buffer(const std::string& name, Tensor init) {
  check_unique(name);
  buffers_.emplace(name, init);
  return init;
}

Tensor ParameterSet::parameter(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return it->second;
}

Tensor ParameterSet::buffer(const std::string& name) const {
  auto it = buffers_.find(name);
  if (it == buffers_.end()) throw ConfigError("unknown buffer '" + name + "'");
  return it->second;
}

void ParameterSet::zero_grad() {
  for (auto& [name, t] : params_) {
    Tensor handle = t;
    handle.zero_grad();
  }
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : params_) n += t.numel();
  return n;
}

Linear Linear::create(ParameterSet& params, const std::string& name, std::size_t in,
                      std::size_t out, Rng& rng, bool with_bias) {
  const double bound = std::sqrt(6.0 / static_cast<double>(in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> w(in * out);
  for (double& v : w) v = dist(rng);
  Linear l;
  l.weight = params.add_parameter(name + ".weight", Tensor({in, out}, std::move(w)));
  if (with_bias) l.bias = params.add_parameter(name + ".bias", Tensor::zeros({out}));
  return l;
}

BatchNorm BatchNorm::create(ParameterSet& params, const std::string& name, std::size_t channels) {
  BatchNorm bn;
  bn.gamma = params.add_parameter(name + ".gamma", Tensor::full({channels}, 1.0));
  bn.beta = params.add_parameter(name + ".beta", Tensor::zeros({channels}));
  bn.state.running_mean = params.add_buffer(name + ".running_mean", Tensor::zeros({channels}));
  bn.state.running_var = params.add_buffer(name + ".running_var", Tensor::full({channels}, 1.0));
  return bn;
}

Tensor BatchNorm::operator()(const Tensor& x, Mode mode) {
  return batchnorm(x, gamma, beta, state, mode);
}

MlpBlock MlpBlock::create(ParameterSet& params, const std::string& name, std::size_t in,
                          const std::vector<std::size_t>& widths, Rng& rng) {
  if (widths.empty()) throw ConfigError(name + ": MLP block needs at least one layer");
  MlpBlock block;
  std::size_t prev = in;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    const std::string layer = name + ".mlp" + std::to_string(i);
    block.linears.push_back(Linear::create(params, layer, prev, widths[i], rng));
    block.norms.push_back(BatchNorm::create(params, layer + ".bn", widths[i]));
    prev = widths[i];
  }
  return block;
}

Tensor MlpBlock::operator()(const Tensor& x, Mode mode) {
  Tensor h = x;
  for (std::size_t i = 0; i < linears.size(); ++i) h = relu(norms[i](linears[i](h), mode));
  return h;
}

Classifier Classifier::create(ParameterSet& params, const std::string& name, std::size_t in,
                              std::size_t hidden_width, std::size_t classes, double dropout,
                              Rng& rng) {
  Classifier c;
  c.hidden = Linear::create(params, name + ".fc0", in, hidden_width, rng);
  c.out = Linear::create(params, name + ".fc1", hidden_width, classes, rng);
  c.dropout = dropout;
  return c;
}

Tensor Classifier::operator()(const Tensor& x, Mode mode, Rng& dropout_rng) const {
  return out(ctcloud::dropout(relu(hidden(x)), dropout, mode, dropout_rng));
}

}  // namespace ctcloud
