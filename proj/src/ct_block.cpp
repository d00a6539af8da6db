#include "ctcloud/ct_block.hpp"

#include "ctcloud/errors.hpp"

namespace ctcloud {

BlockVariant parse_block_variant(const std::string& name) {
  if (name == "full") return BlockVariant::Full;
  if (name == "conv_only") return BlockVariant::ConvOnly;
  if (name == "transformer_only") return BlockVariant::TransformerOnly;
  if (name == "no_transmission") return BlockVariant::NoTransmission;
  throw ConfigError("unknown model variant '" + name + "'");
}

std::string to_string(BlockVariant v) {
  switch (v) {
    case BlockVariant::Full: return "full";
    case BlockVariant::ConvOnly: return "conv_only";
    case BlockVariant::TransformerOnly: return "transformer_only";
    case BlockVariant::NoTransmission: return "no_transmission";
  }
  return "full";
}

std::vector<std::size_t> CTBlockConfig::conv1_widths() const {
  return mlp1_widths.empty() ? std::vector<std::size_t>{c_mid, c_mid} : mlp1_widths;
}

std::vector<std::size_t> CTBlockConfig::conv2_widths() const {
  return mlp2_widths.empty() ? std::vector<std::size_t>{c_out, c_out} : mlp2_widths;
}

void CTBlockConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("CT-block: " + msg); };
  if (n_in < 1 || n_out < 1 || c_in < 1 || c_mid < 1 || c_out < 1 || d_e < 1 || group_size < 1) {
    fail("sizes must be positive");
  }
  if (has_conv()) {
    if (n_out * 2 != n_in) fail("n_out must be n_in / 2");
    if (group_size > n_in) fail("group size S exceeds n_in");
    for (std::size_t w : conv1_widths()) {
      if (w < 1) fail("widths must be positive");
    }
    for (std::size_t w : conv2_widths()) {
      if (w < 1) fail("widths must be positive");
    }
    if (conv1_widths().back() != c_mid) fail("last conv1 width must equal c_mid");
    if (conv2_widths().back() != c_out) fail("last conv2 width must equal c_out");
  }
  if (has_transformer()) attention().validate();
}

FeatureTransmission FeatureTransmission::create(ParameterSet& params, const std::string& name,
                                                std::size_t from, std::size_t to, Rng& rng) {
  return {Linear::create(params, name + ".mlp", from, to, rng),
          BatchNorm::create(params, name + ".bn", to)};
}

CTBlockWeights CTBlockWeights::create(ParameterSet& params, const std::string& name,
                                      const CTBlockConfig& cfg, Rng& rng) {
  cfg.validate();
  CTBlockWeights w;
  if (cfg.has_conv()) {
    w.conv1 = MlpBlock::create(params, name + ".conv1", cfg.c_in + 3, cfg.conv1_widths(), rng);
    w.conv2 = MlpBlock::create(params, name + ".conv2", cfg.c_mid, cfg.conv2_widths(), rng);
  }
  if (cfg.has_transformer()) w.trans = OAWeights::create(params, name + ".trans", cfg.attention(), rng);
  if (cfg.has_transmission()) {
    w.ft1 = FeatureTransmission::create(params, name + ".ft1", cfg.c_mid, cfg.d_e, rng);
    w.ft2 = FeatureTransmission::create(params, name + ".ft2", cfg.d_e, cfg.c_mid, rng);
  }
  return w;
}

namespace {

void expect_shape(const Tensor& t, const Shape& shape, const std::string& stage) {
  if (!t.defined() || t.shape() != shape) {
    throw DimensionError("CT-block " + stage + ": expected " + shape_str(shape) + ", got " +
                         (t.defined() ? shape_str(t.shape()) : std::string("undefined")));
  }
}

}  // namespace

BranchState ct_block_forward(const BranchState& state, const CTBlockConfig& cfg,
                             CTBlockWeights& weights, Mode mode) {
  BranchState next = state;
  const std::size_t s = cfg.group_size;
  const std::size_t batch = state.batch;
  const std::size_t bn_in = batch * cfg.n_in;
  const std::size_t bn_out = batch * cfg.n_out;

  // Sampling + grouping and the first MLP block.
  NeighborIndex idx;
  Tensor centers, f2, f2_pool;
  if (cfg.has_conv()) {
    expect_shape(state.local_features, {bn_in, cfg.c_in}, "input local features");
    expect_shape(state.local_coords, {bn_in, 3}, "input local coordinates");
    if (state.local_global_idx.size() != bn_in) {
      throw DimensionError("CT-block input: local-to-global index has wrong length");
    }
    idx = sample_and_group_batched(state.local_coords, batch, cfg.n_out, s);
    centers = select_rows(state.local_coords, idx.centers);
    next.local_coords = centers;
    next.local_global_idx.resize(bn_out);
    for (std::size_t i = 0; i < bn_out; ++i) {
      next.local_global_idx[i] = state.local_global_idx[idx.centers[i]];
    }
    const Tensor grouped = group_features(state.local_features, state.local_coords, idx, centers);
    f2 = weights.conv1(reshape(grouped, {bn_out * s, cfg.c_in + 3}), mode);
    f2_pool = max_pool_axis(reshape(f2, {bn_out, s, cfg.c_mid}), 1);
  }

  // Transformer branch, fed by the up-sampled local features.
  if (cfg.has_transformer()) {
    expect_shape(state.global_features, {state.global_coords.dim(0), cfg.d_e}, "input global features");
    Tensor g_in = state.global_features;
    if (cfg.has_transmission()) {
      const Tensor up =
          interpolate_up(f2_pool, interpolation_weights_batched(centers, state.global_coords, batch));
      g_in = add(g_in, weights.ft1(up, mode));
    }
    next.global_features = offset_attention(g_in, weights.trans, mode, batch);
  }

  // Second MLP block on local features plus down-sampled global features.
  if (cfg.has_conv()) {
    Tensor f2_sum = f2;
    if (cfg.has_transmission()) {
      const Tensor down = weights.ft2(downsample_select(next.global_features, next.local_global_idx), mode);
      f2_sum = add(f2, reshape(expand_rows(down, s), {bn_out * s, cfg.c_mid}));
    }
    const Tensor f3 = weights.conv2(f2_sum, mode);
    next.local_features = max_pool_axis(reshape(f3, {bn_out, s, cfg.c_out}), 1);
  }
  return next;
}

CTStack CTStack::create(ParameterSet& params, const std::string& name,
                        std::vector<CTBlockConfig> configs, Rng& rng) {
  if (configs.empty()) throw ConfigError("CT stack needs at least one block");
  for (std::size_t i = 0; i < configs.size(); ++i) {
    configs[i].validate();
    if (i == 0) continue;
    const CTBlockConfig& prev = configs[i - 1];
    const CTBlockConfig& cur = configs[i];
    const std::string where = "CT stack block " + std::to_string(i + 1) + ": ";
    if (cur.has_conv() && (prev.c_out != cur.c_in || prev.n_out != cur.n_in)) {
      throw ConfigError(where + "local input does not match previous block output");
    }
    if (cur.has_transformer() && prev.d_e != cur.d_e) {
      throw ConfigError(where + "global width does not match previous block");
    }
  }
  CTStack stack;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    stack.weights_.push_back(
        CTBlockWeights::create(params, name + ".block" + std::to_string(i + 1), configs[i], rng));
  }
  stack.configs_ = std::move(configs);
  return stack;
}

std::vector<BranchState> CTStack::forward(const BranchState& init, Mode mode) {
  std::vector<BranchState> states;
  states.reserve(configs_.size());
  const BranchState* cur = &init;
  for (std::size_t i = 0; i < configs_.size(); ++i) {
    states.push_back(ct_block_forward(*cur, configs_[i], weights_[i], mode));
    cur = &states.back();
  }
  return states;
}

}  // namespace ctcloud
