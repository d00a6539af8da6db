#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ctcloud/data.hpp"
#include "ctcloud/networks.hpp"
#include "ctcloud/training.hpp"

namespace ctcloud {

struct SynthConfig {
  std::size_t n_per_class = 100;
  std::size_t n_points = 256;
  std::size_t n_train = 0;  // 0 -> every item not in the test split
  std::size_t n_test = 0;
  std::optional<std::uint64_t> seed;  // defaults to the run seed
};

struct EvalConfig {
  std::filesystem::path checkpoint;  // empty -> <out>/checkpoint_best.ckpt
  std::string split = "test";        // test | train | all
  bool multi_scale = false;
  std::vector<double> scales = {0.8, 0.9, 1.0, 1.1, 1.2};
  bool anisotropic = false;
};

struct GradcheckConfig {
  std::size_t seeds = 5;
  std::string filter;
};

/// Everything one command needs. Loaded from `key = value` lines with dotted
/// keys; `#` starts a comment. Unknown keys are rejected.
struct RunConfig {
  RunConfig();

  Task task = Task::Classification;
  std::uint64_t seed = 1;
  std::filesystem::path manifest;  // data.manifest
  SynthConfig synth;
  NetworkConfig model;             // num_classes / num_categories of 0 come from the data
  TrainConfig train;               // train.seed is ignored; the run seed is used
  std::string augment = "auto";    // auto | classification | segmentation | none
  std::optional<bool> z_rotation;
  std::optional<double> jitter_sigma;
  std::optional<double> jitter_clip;
  std::optional<bool> aniso_scale;
  std::optional<double> scale_low;
  std::optional<double> scale_high;
  std::optional<std::size_t> stop_after;
  std::optional<std::filesystem::path> resume;
  EvalConfig eval;
  GradcheckConfig gradcheck;

  /// Training settings with the augmentation preset resolved for `task`.
  TrainConfig train_config() const;
  /// Effective configuration in the same `key = value` syntax, one key per line.
  std::string dump() const;
};

/// Every accepted key, in dump order.
const std::vector<std::string>& config_keys();

/// Applies one `key = value` assignment. Throws ConfigError for an unknown
/// key or a malformed value.
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value);

/// Parses config text. Errors carry the 1-based line number.
RunConfig parse_config(const std::string& text, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});

/// Config file (optional), then `key=value` overrides in order. The seed
/// falls back to CTCLOUD_SEED when neither sets it.
RunConfig resolve_config(const std::optional<std::filesystem::path>& path,
                         const std::vector<std::string>& overrides);

/// Fills num_classes / num_categories left at 0 from the dataset and checks
/// they agree with it.
NetworkConfig model_config_for(const RunConfig& cfg, const Dataset& ds);

}  // namespace ctcloud
