#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ctcloud/ct_block.hpp"
#include "ctcloud/geometry.hpp"
#include "ctcloud/layers.hpp"

namespace ctcloud {

enum class Task { Classification, Segmentation };
Task parse_task(const std::string& name);
std::string to_string(Task t);

/// How the two head outputs are combined into one prediction.
enum class FusionMode { LogitSum, ProbabilitySum };
FusionMode parse_fusion(const std::string& name);
std::string to_string(FusionMode f);

/// Full architecture description. Widths are per CT-block; each block halves
/// the local point count.
struct NetworkConfig {
  Task task = Task::Classification;
  std::size_t n_points = 1024;
  std::size_t embed_width = 64;
  std::vector<std::size_t> block_widths = {128, 256, 512};
  std::size_t group_size = 32;
  std::size_t d_e = 256;
  std::size_t d_a = 0;  // 0 -> d_e / 4
  std::size_t head_hidden = 256;
  double dropout = 0.5;
  std::size_t num_classes = 40;     // N_c, or N_s for segmentation
  std::size_t num_categories = 16;  // segmentation: known shape categories
  std::size_t category_width = 64;
  std::vector<std::size_t> decoder_widths;  // empty -> mirror of the encoder
  BlockVariant variant = BlockVariant::Full;
  FusionMode fusion = FusionMode::LogitSum;

  static NetworkConfig classification_default();
  static NetworkConfig segmentation_default();

  std::vector<CTBlockConfig> block_configs() const;
  std::vector<std::size_t> resolved_decoder_widths() const;
  void validate() const;
};

/// Embedding blocks followed by the CT-block stack.
class Encoder {
 public:
  struct Output {
    BranchState init;
    std::vector<BranchState> blocks;
  };

  static Encoder create(ParameterSet& params, const NetworkConfig& cfg, Rng& rng);
  /// `coords` stacks `batch` clouds of n_points rows each.
  Output forward(const Tensor& coords, Mode mode, std::size_t batch = 1);
  CTStack& stack() { return stack_; }

 private:
  NetworkConfig cfg_;
  MlpBlock local_embed_;
  MlpBlock global_embed_;
  CTStack stack_;
};

/// Per-head logits and their fusion. For one classification cloud each is
/// [N_c] and for a batch [B×N_c]; for segmentation each is [B·N×N_s]. A head
/// absent from the variant stays undefined.
struct HeadOutputs {
  Tensor local;
  Tensor global;
  Tensor fused;
};

class PointModel {
 public:
  virtual ~PointModel() = default;
  PointModel(const PointModel&) = delete;
  PointModel& operator=(const PointModel&) = delete;

  virtual Task task() const = 0;
  /// Head logits for the cloud; segmentation reads the category from the cloud.
  HeadOutputs forward(const PointCloud& cloud, Mode mode);
  /// Joint forward of equal-sized clouds; batchnorm statistics span them all.
  virtual HeadOutputs forward_batch(std::span<const PointCloud> clouds, Mode mode) = 0;

  /// Fused probabilities, [1×N_c] or [N×N_s], without recording a graph.
  Tensor predict_proba(const PointCloud& cloud);
  /// Row-wise class probabilities of fused head outputs.
  Tensor fused_probabilities(const HeadOutputs& out) const;

  const NetworkConfig& config() const { return cfg_; }
  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }
  void reseed_dropout(std::uint64_t seed) { dropout_rng_.seed(seed); }

 protected:
  explicit PointModel(NetworkConfig cfg);
  Tensor fuse(const Tensor& local, const Tensor& global) const;

  NetworkConfig cfg_;
  ParameterSet params_;
  Rng dropout_rng_;
};

class ClassificationModel final : public PointModel {
 public:
  ClassificationModel(NetworkConfig cfg, std::uint64_t init_seed);

  Task task() const override { return Task::Classification; }
  HeadOutputs forward_batch(std::span<const PointCloud> clouds, Mode mode) override;

 private:
  Encoder encoder_;
  Classifier local_head_;
  Classifier global_head_;
};

class SegmentationModel final : public PointModel {
 public:
  SegmentationModel(NetworkConfig cfg, std::uint64_t init_seed);

  Task task() const override { return Task::Segmentation; }
  HeadOutputs forward_batch(std::span<const PointCloud> clouds, Mode mode) override;
  using PointModel::forward;
  HeadOutputs forward(const PointCloud& cloud, int category, Mode mode);

 private:
  Encoder encoder_;
  std::vector<MlpBlock> decoder_;
  Linear category_embed_;
  Classifier local_head_;
  Classifier global_head_;
};

std::unique_ptr<PointModel> make_model(const NetworkConfig& cfg, std::uint64_t init_seed);

/// Same-size classification convenience wrapper around forward().
HeadOutputs classify(ClassificationModel& model, const PointCloud& cloud, Mode mode);
/// Segmentation of a cloud of a known shape category.
HeadOutputs segment(SegmentationModel& model, const PointCloud& cloud, int category, Mode mode);

struct MultiScaleOptions {
  std::vector<double> scales = {0.8, 0.9, 1.0, 1.1, 1.2};
  bool anisotropic = false;  // independent per-axis factors drawn from [0.8, 1.25]
  std::uint64_t seed = 0;
};

/// Fused probabilities averaged over rescaled copies of the cloud.
Tensor multi_scale_predict(PointModel& model, const PointCloud& cloud,
                           const MultiScaleOptions& opts = {});

}  // namespace ctcloud
