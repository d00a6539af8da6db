#include "ctcloud/networks.hpp"

#include <cmath>

#include "ctcloud/errors.hpp"

namespace ctcloud {

Task parse_task(const std::string& name) {
  if (name == "classification") return Task::Classification;
  if (name == "segmentation") return Task::Segmentation;
  throw ConfigError("unknown task '" + name + "'");
}

std::string to_string(Task t) {
  return t == Task::Classification ? "classification" : "segmentation";
}

FusionMode parse_fusion(const std::string& name) {
  if (name == "logits") return FusionMode::LogitSum;
  if (name == "probabilities") return FusionMode::ProbabilitySum;
  throw ConfigError("unknown fusion mode '" + name + "'");
}

std::string to_string(FusionMode f) {
  return f == FusionMode::LogitSum ? "logits" : "probabilities";
}

NetworkConfig NetworkConfig::classification_default() { return NetworkConfig{}; }

NetworkConfig NetworkConfig::segmentation_default() {
  NetworkConfig cfg;
  cfg.task = Task::Segmentation;
  cfg.n_points = 2048;
  cfg.num_classes = 50;
  cfg.num_categories = 16;
  return cfg;
}

std::vector<CTBlockConfig> NetworkConfig::block_configs() const {
  std::vector<CTBlockConfig> out;
  std::size_t n_in = n_points / 2;
  std::size_t c_in = embed_width;
  for (std::size_t w : block_widths) {
    CTBlockConfig b;
    b.n_in = n_in;
    b.n_out = n_in / 2;
    b.c_in = c_in;
    b.c_mid = w;
    b.c_out = w;
    b.group_size = group_size;
    b.d_e = d_e;
    b.d_a = d_a;
    b.variant = variant;
    out.push_back(b);
    n_in /= 2;
    c_in = w;
  }
  return out;
}

std::vector<std::size_t> NetworkConfig::resolved_decoder_widths() const {
  if (!decoder_widths.empty()) return decoder_widths;
  // Mirror of the encoder: each stage lands on the width of its skip level.
  std::vector<std::size_t> widths;
  for (std::size_t i = block_widths.size(); i-- > 1;) widths.push_back(block_widths[i - 1]);
  widths.push_back(embed_width);
  widths.push_back(embed_width);
  return widths;
}

void NetworkConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("network: " + msg); };
  if (block_widths.empty()) fail("at least one CT-block is required");
  const std::size_t divisor = std::size_t{2} << block_widths.size();
  if (n_points < divisor || n_points % divisor != 0) {
    fail("n_points must be a multiple of " + std::to_string(divisor));
  }
  if (embed_width < 1 || d_e < 1 || head_hidden < 1 || num_classes < 1) fail("widths must be positive");
  if (dropout < 0.0 || dropout >= 1.0) fail("dropout must lie in [0, 1)");
  if (task == Task::Segmentation) {
    if (num_categories < 1 || category_width < 1) fail("segmentation needs categories");
    if (resolved_decoder_widths().size() != block_widths.size() + 1) {
      fail("decoder needs one width per block plus one");
    }
  }
  for (const CTBlockConfig& b : block_configs()) b.validate();
}

Encoder Encoder::create(ParameterSet& params, const NetworkConfig& cfg, Rng& rng) {
  cfg.validate();
  Encoder e;
  e.cfg_ = cfg;
  const auto blocks = cfg.block_configs();
  if (blocks.front().has_conv()) {
    e.local_embed_ = MlpBlock::create(params, "embed.local", 3, {cfg.embed_width, cfg.embed_width}, rng);
  }
  if (blocks.front().has_transformer()) {
    e.global_embed_ = MlpBlock::create(params, "embed.global", 3, {cfg.d_e, cfg.d_e}, rng);
  }
  e.stack_ = CTStack::create(params, "ct", blocks, rng);
  return e;
}

Encoder::Output Encoder::forward(const Tensor& coords, Mode mode, std::size_t batch) {
  const CTBlockConfig& first = stack_.configs().front();
  Output out;
  out.init.batch = batch;
  out.init.global_coords = coords;
  if (first.has_conv()) {
    const std::size_t n = cfg_.n_points;
    for (std::size_t b = 0; b < batch; ++b) {
      for (Index i : farthest_point_sample(cloud_rows(coords, batch, b), n / 2)) {
        out.init.local_global_idx.push_back(i + b * n);
      }
    }
    out.init.local_coords = select_rows(coords, out.init.local_global_idx);
    out.init.local_features = local_embed_(out.init.local_coords, mode);
  }
  if (first.has_transformer()) out.init.global_features = global_embed_(coords, mode);
  out.blocks = stack_.forward(out.init, mode);
  return out;
}

PointModel::PointModel(NetworkConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

Tensor PointModel::fuse(const Tensor& local, const Tensor& global) const {
  if (!local.defined()) return global;
  if (!global.defined()) return local;
  if (cfg_.fusion == FusionMode::LogitSum) return add(local, global);
  // Log of the mean head probability, so that softmax(fused) is that mean.
  const std::size_t k = local.shape().back();
  const std::size_t rows = local.numel() / k;
  const Tensor pl = softmax_rows(reshape(local.detach(), {rows, k}));
  const Tensor pg = softmax_rows(reshape(global.detach(), {rows, k}));
  std::vector<double> out(pl.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(0.5 * (pl[i] + pg[i]));
  return Tensor(local.shape(), std::move(out));
}

Tensor PointModel::fused_probabilities(const HeadOutputs& out) const {
  const std::size_t k = out.fused.shape().back();
  return softmax_rows(reshape(out.fused.detach(), {out.fused.numel() / k, k})).detach();
}

Tensor PointModel::predict_proba(const PointCloud& cloud) {
  NoGradGuard no_grad;
  return fused_probabilities(forward(cloud, Mode::Eval));
}

HeadOutputs PointModel::forward(const PointCloud& cloud, Mode mode) {
  HeadOutputs out = forward_batch(std::span<const PointCloud>(&cloud, 1), mode);
  if (task() == Task::Classification) {
    const Shape logits{cfg_.num_classes};
    for (Tensor* t : {&out.local, &out.global, &out.fused}) {
      if (t->defined()) *t = reshape(*t, logits);
    }
  }
  return out;
}

namespace {

void check_input(std::span<const PointCloud> clouds, const NetworkConfig& cfg) {
  if (clouds.empty()) throw ConfigError("empty batch");
  for (const PointCloud& cloud : clouds) {
    cloud.validate();
    if (cloud.size() != cfg.n_points) {
      throw ConfigError("model expects " + std::to_string(cfg.n_points) + " points, got " +
                        std::to_string(cloud.size()));
    }
    if (cloud.features.defined() && cloud.features.dim(1) != 3) {
      throw ConfigError("model consumes xyz only (C = 3), got " +
                        std::to_string(cloud.features.dim(1)) + " feature channels");
    }
  }
}

Tensor stacked_coords(std::span<const PointCloud> clouds) {
  if (clouds.size() == 1) return clouds[0].coords;
  std::vector<double> xyz;
  for (const PointCloud& c : clouds) xyz.insert(xyz.end(), c.coords.data().begin(), c.coords.data().end());
  const std::size_t rows = xyz.size() / 3;
  return Tensor({rows, 3}, std::move(xyz));
}

Tensor global_concat(const std::vector<BranchState>& blocks) {
  std::vector<Tensor> parts;
  for (const BranchState& b : blocks) parts.push_back(b.global_features);
  return parts.size() == 1 ? parts[0] : concat(parts, 1);
}

/// Per-cloud max over points: [B·N×C] -> [B×C].
Tensor pooled_rows(const Tensor& x, std::size_t batch) {
  return max_pool_axis(reshape(x, {batch, x.dim(0) / batch, x.dim(1)}), 1);
}

}  // namespace

ClassificationModel::ClassificationModel(NetworkConfig cfg, std::uint64_t init_seed)
    : PointModel(std::move(cfg)) {
  Rng rng(init_seed);
  encoder_ = Encoder::create(params_, cfg_, rng);
  const CTBlockConfig last = cfg_.block_configs().back();
  if (last.has_conv()) {
    local_head_ = Classifier::create(params_, "head.local", last.c_out, cfg_.head_hidden,
                                     cfg_.num_classes, cfg_.dropout, rng);
  }
  if (last.has_transformer()) {
    global_head_ = Classifier::create(params_, "head.global", cfg_.block_widths.size() * cfg_.d_e,
                                      cfg_.head_hidden, cfg_.num_classes, cfg_.dropout, rng);
  }
}

HeadOutputs ClassificationModel::forward_batch(std::span<const PointCloud> clouds, Mode mode) {
  check_input(clouds, cfg_);
  const std::size_t batch = clouds.size();
  const Encoder::Output enc = encoder_.forward(stacked_coords(clouds), mode, batch);
  const CTBlockConfig& last = encoder_.stack().configs().back();
  HeadOutputs out;
  if (last.has_conv()) {
    out.local = local_head_(pooled_rows(enc.blocks.back().local_features, batch), mode, dropout_rng_);
  }
  if (last.has_transformer()) {
    out.global = global_head_(pooled_rows(global_concat(enc.blocks), batch), mode, dropout_rng_);
  }
  out.fused = fuse(out.local, out.global);
  return out;
}

SegmentationModel::SegmentationModel(NetworkConfig cfg, std::uint64_t init_seed)
    : PointModel(std::move(cfg)) {
  if (cfg_.task != Task::Segmentation) throw ConfigError("segmentation model needs task = segmentation");
  Rng rng(init_seed);
  encoder_ = Encoder::create(params_, cfg_, rng);
  const auto blocks = cfg_.block_configs();
  if (blocks.back().has_conv()) {
    const auto widths = cfg_.resolved_decoder_widths();
    std::size_t in = blocks.back().c_out;
    for (std::size_t stage = 0; stage < widths.size(); ++stage) {
      // Skip features: the matching encoder level, and raw xyz at full resolution.
      const std::size_t level = blocks.size() - 1 - stage;
      std::size_t skip = 3;
      if (stage + 1 < widths.size()) skip = level == 0 ? cfg_.embed_width : blocks[level - 1].c_out;
      decoder_.push_back(MlpBlock::create(params_, "decoder.up" + std::to_string(stage + 1),
                                          in + skip, {widths[stage]}, rng));
      in = widths[stage];
    }
    local_head_ = Classifier::create(params_, "head.local", in, cfg_.head_hidden, cfg_.num_classes,
                                     cfg_.dropout, rng);
  }
  if (blocks.back().has_transformer()) {
    category_embed_ = Linear::create(params_, "head.category", cfg_.num_categories,
                                     cfg_.category_width, rng);
    global_head_ = Classifier::create(params_, "head.global",
                                      blocks.size() * cfg_.d_e + cfg_.category_width,
                                      cfg_.head_hidden, cfg_.num_classes, cfg_.dropout, rng);
  }
}

HeadOutputs SegmentationModel::forward(const PointCloud& cloud, int category, Mode mode) {
  PointCloud tagged = cloud;
  tagged.category = category;
  return forward(tagged, mode);
}

HeadOutputs SegmentationModel::forward_batch(std::span<const PointCloud> clouds, Mode mode) {
  check_input(clouds, cfg_);
  for (const PointCloud& cloud : clouds) {
    if (!cloud.category) throw DataError("segmentation needs the shape category of the cloud");
    if (*cloud.category < 0 || static_cast<std::size_t>(*cloud.category) >= cfg_.num_categories) {
      throw DataError("category " + std::to_string(*cloud.category) + " outside [0, " +
                      std::to_string(cfg_.num_categories) + ")");
    }
  }
  const std::size_t batch = clouds.size();
  const Tensor coords = stacked_coords(clouds);
  const Encoder::Output enc = encoder_.forward(coords, mode, batch);
  const std::size_t n = cfg_.n_points;
  HeadOutputs out;
  if (!decoder_.empty()) {
    // Transition-up: interpolate onto the next finer level, concatenate its
    // skip features, then a unit MLP.
    Tensor feat = enc.blocks.back().local_features;
    Tensor level_coords = enc.blocks.back().local_coords;
    for (std::size_t stage = 0; stage < decoder_.size(); ++stage) {
      const bool last_stage = stage + 1 == decoder_.size();
      const std::size_t level = enc.blocks.size() - 1 - stage;
      const BranchState* skip_state =
          last_stage ? nullptr : (level == 0 ? &enc.init : &enc.blocks[level - 1]);
      const Tensor target_coords = last_stage ? coords : skip_state->local_coords;
      const Tensor skip = last_stage ? coords : skip_state->local_features;
      const Tensor up = interpolate_up(feat, interpolation_weights_batched(level_coords, target_coords, batch));
      feat = decoder_[stage](concat({up, skip}, 1), mode);
      level_coords = target_coords;
    }
    out.local = local_head_(feat, mode, dropout_rng_);
  }
  if (global_head_.out.weight.defined()) {
    std::vector<double> one_hot(batch * cfg_.num_categories, 0.0);
    for (std::size_t b = 0; b < batch; ++b) {
      one_hot[b * cfg_.num_categories + static_cast<std::size_t>(*clouds[b].category)] = 1.0;
    }
    const Tensor cat_vec = category_embed_(Tensor({batch, cfg_.num_categories}, std::move(one_hot)));
    const Tensor cat_rows = reshape(expand_rows(cat_vec, n), {batch * n, cfg_.category_width});
    out.global = global_head_(concat({global_concat(enc.blocks), cat_rows}, 1), mode, dropout_rng_);
  }
  out.fused = fuse(out.local, out.global);
  return out;
}

std::unique_ptr<PointModel> make_model(const NetworkConfig& cfg, std::uint64_t init_seed) {
  if (cfg.task == Task::Classification) return std::make_unique<ClassificationModel>(cfg, init_seed);
  return std::make_unique<SegmentationModel>(cfg, init_seed);
}

HeadOutputs classify(ClassificationModel& model, const PointCloud& cloud, Mode mode) {
  return model.forward(cloud, mode);
}

HeadOutputs segment(SegmentationModel& model, const PointCloud& cloud, int category, Mode mode) {
  return model.forward(cloud, category, mode);
}

Tensor multi_scale_predict(PointModel& model, const PointCloud& cloud, const MultiScaleOptions& opts) {
  if (opts.scales.empty()) throw ConfigError("multi-scale prediction needs at least one scale");
  Rng rng(opts.seed);
  std::uniform_real_distribution<double> axis_scale(0.8, 1.25);
  Tensor total;
  std::vector<double> acc;
  for (double s : opts.scales) {
    double factors[3] = {s, s, s};
    if (opts.anisotropic) {
      for (double& f : factors) f = axis_scale(rng);
    }
    PointCloud scaled = cloud;
    std::vector<double> xyz(cloud.coords.data().begin(), cloud.coords.data().end());
    for (std::size_t i = 0; i < xyz.size(); ++i) xyz[i] *= factors[i % 3];
    scaled.coords = Tensor(cloud.coords.shape(), std::move(xyz));
    const Tensor p = model.predict_proba(scaled);
    if (acc.empty()) {
      acc.assign(p.data().begin(), p.data().end());
      total = p;
    } else {
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += p.data()[i];
    }
  }
  for (double& v : acc) v /= static_cast<double>(opts.scales.size());
  return Tensor(total.shape(), std::move(acc));
}

}  // namespace ctcloud
