#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ctcloud/data.hpp"
#include "ctcloud/layers.hpp"
#include "ctcloud/networks.hpp"
#include "ctcloud/random.hpp"

namespace ctcloud {

/// Data augmentation switches. The two presets mirror the classification
/// and segmentation training recipes.
struct AugmentConfig {
  bool z_rotation = false;
  double jitter_sigma = 0.0;
  double jitter_clip = 0.05;
  bool aniso_scale = false;
  double scale_low = 0.8;
  double scale_high = 1.25;

  static AugmentConfig classification();
  static AugmentConfig segmentation();
  static AugmentConfig none() { return {}; }
  void validate() const;
};

struct TrainConfig {
  double lr0 = 0.001;
  double momentum = 0.9;
  double min_lr = 0.0;
  std::size_t epochs = 100;
  std::size_t batch_size = 16;
  std::uint64_t seed = 1;
  AugmentConfig augment = AugmentConfig::classification();
  std::size_t eval_every = 1;  // 0 disables per-epoch evaluation

  void validate() const;
};

/// One heavy-ball update, in place: v <- momentum·v + g; p <- p - lr·v.
void sgd_momentum_step(std::span<double> params, std::span<const double> grads,
                       std::span<double> velocity, double lr, double momentum);

/// SGD with momentum over a whole parameter set; parameters without a grad
/// are treated as having a zero gradient.
class SgdMomentum {
 public:
  explicit SgdMomentum(double momentum) : momentum_(momentum) {}
  void step(ParameterSet& params, double lr);
  std::map<std::string, Tensor>& velocity() { return velocity_; }
  const std::map<std::string, Tensor>& velocity() const { return velocity_; }

 private:
  double momentum_;
  std::map<std::string, Tensor> velocity_;
};

/// lr0·(1 + cos(π·epoch/total))/2, floored at min_lr.
double cosine_lr(std::size_t epoch, std::size_t total_epochs, double lr0, double min_lr = 0.0);

PointCloud augment(const PointCloud& cloud, const AugmentConfig& cfg, Rng& rng);

/// CE(local) + CE(global) with unit weights. Rank-1 logits are one row.
/// Either head may be undefined (ablation variants), leaving one term.
Tensor two_head_loss(const Tensor& logits_local, const Tensor& logits_global,
                     std::span<const int> labels);

struct StepResult {
  Tensor loss;
  Tensor probabilities;  // [B×N_c] or [B·N×N_s]
};

/// Training-mode forward of a mini-batch and its two-head loss, averaged
/// over clouds (classification) or points (segmentation).
StepResult training_step(PointModel& model, std::span<const PointCloud> clouds);

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based
  double lr = 0.0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  std::optional<double> eval_acc;
  std::optional<double> eval_piou;
};

struct TrainOptions {
  std::filesystem::path out_dir;              // empty: nothing written
  std::optional<std::filesystem::path> resume;  // checkpoint to continue from
  std::optional<std::size_t> stop_after;      // last epoch to run in this call
};

struct TrainResult {
  std::vector<EpochMetrics> history;
  std::size_t next_epoch = 0;
};

/// Mini-batch SGD; each batch runs as one joint forward. Every random
/// draw is derived from (seed, epoch, item), so runs are reproducible and
/// resuming from a checkpoint continues bit-identically.
///
/// With an output directory it writes metrics.csv, checkpoint_last.ckpt,
/// checkpoint_best.ckpt and checkpoint_init.ckpt.
TrainResult train_loop(PointModel& model, const Dataset& dataset, const TrainConfig& cfg,
                       const TrainOptions& opts = {});

std::string metrics_csv_header(Task task);
std::string metrics_csv_row(Task task, const EpochMetrics& m);

/// Saves parameters, buffers, optimizer velocity and the next epoch index.
void save_training_checkpoint(const std::filesystem::path& path, const PointModel& model,
                              const SgdMomentum& opt, std::size_t next_epoch);

}  // namespace ctcloud
