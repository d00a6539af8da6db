#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ctcloud/data.hpp"
#include "ctcloud/networks.hpp"

namespace ctcloud {

struct ClassificationMetrics {
  double overall_accuracy = 0.0;
  double mean_class_accuracy = 0.0;  // over classes present in the targets
  std::vector<std::optional<double>> per_class_accuracy;
};

ClassificationMetrics classification_metrics(std::span<const int> predicted,
                                             std::span<const int> target, std::size_t num_classes);

/// Index of the largest entry among `allowed` columns of row `row` of an
/// [N×K] probability matrix.
int restricted_argmax(const Tensor& probs, std::size_t row, std::span<const int> allowed);

/// Mean IoU over `parts` for one shape. A part absent from both prediction
/// and target scores 1.
double shape_part_iou(std::span<const int> predicted, std::span<const int> target,
                      std::span<const int> parts);

struct SegmentationMetrics {
  double point_accuracy = 0.0;
  double instance_piou = 0.0;  // averaged over shapes
  double class_piou = 0.0;     // averaged over categories present
  std::vector<std::optional<double>> per_category_iou;
};

struct EvalOptions {
  std::optional<MultiScaleOptions> multi_scale;
};

struct EvalReport {
  Task task = Task::Classification;
  std::size_t num_items = 0;
  ClassificationMetrics classification;
  SegmentationMetrics segmentation;

  /// OA for classification, point accuracy for segmentation.
  double accuracy() const;
  std::string to_json(const Dataset& ds) const;
};

/// Evaluates the model on the listed dataset items in eval mode.
EvalReport evaluate(PointModel& model, const Dataset& ds, std::span<const std::size_t> items,
                    const EvalOptions& opts = {});

/// Per-point predictions restricted to the parts of the cloud's category.
std::vector<int> predict_parts(const Tensor& probs, std::span<const int> parts);

}  // namespace ctcloud
