#include "ctcloud/metrics.hpp"

#include <algorithm>
#include <json.hpp>

#include "ctcloud/errors.hpp"

namespace ctcloud {

ClassificationMetrics classification_metrics(std::span<const int> predicted,
                                             std::span<const int> target, std::size_t num_classes) {
  if (predicted.size() != target.size()) throw DimensionError("prediction/target count mismatch");
  if (target.empty()) throw DataError("no targets to score");
  std::vector<std::size_t> hits(num_classes, 0), totals(num_classes, 0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    const int t = target[i];
    if (t < 0 || static_cast<std::size_t>(t) >= num_classes) {
      throw DataError("target label " + std::to_string(t) + " out of range");
    }
    ++totals[static_cast<std::size_t>(t)];
    if (predicted[i] == t) {
      ++correct;
      ++hits[static_cast<std::size_t>(t)];
    }
  }
  ClassificationMetrics m;
  m.overall_accuracy = static_cast<double>(correct) / static_cast<double>(target.size());
  m.per_class_accuracy.resize(num_classes);
  double acc_sum = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (totals[c] == 0) continue;
    const double a = static_cast<double>(hits[c]) / static_cast<double>(totals[c]);
    m.per_class_accuracy[c] = a;
    acc_sum += a;
    ++present;
  }
  m.mean_class_accuracy = acc_sum / static_cast<double>(present);
  return m;
}

int restricted_argmax(const Tensor& probs, std::size_t row, std::span<const int> allowed) {
  if (allowed.empty()) throw ConfigError("restricted_argmax: no allowed classes");
  const std::size_t k = probs.shape().back();
  auto p = probs.data().subspan(row * k, k);
  int best = allowed[0];
  for (int c : allowed) {
    if (c < 0 || static_cast<std::size_t>(c) >= k) {
      throw DataError("part id " + std::to_string(c) + " outside the " + std::to_string(k) + " model outputs");
    }
    if (p[static_cast<std::size_t>(c)] > p[static_cast<std::size_t>(best)]) best = c;
  }
  return best;
}

std::vector<int> predict_parts(const Tensor& probs, std::span<const int> parts) {
  const std::size_t rows = probs.numel() / probs.shape().back();
  std::vector<int> out(rows);
  for (std::size_t i = 0; i < rows; ++i) out[i] = restricted_argmax(probs, i, parts);
  return out;
}

double shape_part_iou(std::span<const int> predicted, std::span<const int> target,
                      std::span<const int> parts) {
  if (predicted.size() != target.size()) throw DimensionError("prediction/target count mismatch");
  if (parts.empty()) throw ConfigError("shape_part_iou: empty part list");
  double total = 0.0;
  for (int part : parts) {
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < target.size(); ++i) {
      const bool p = predicted[i] == part;
      const bool t = target[i] == part;
      inter += p && t;
      uni += p || t;
    }
    total += uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
  }
  return total / static_cast<double>(parts.size());
}

double EvalReport::accuracy() const {
  return task == Task::Classification ? classification.overall_accuracy : segmentation.point_accuracy;
}

namespace {

nlohmann::ordered_json optional_array(const std::vector<std::optional<double>>& values,
                                      const std::vector<std::string>& names) {
  nlohmann::ordered_json out = nlohmann::ordered_json::object();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::string key = i < names.size() ? names[i] : std::to_string(i);
    out[key] = values[i] ? nlohmann::ordered_json(*values[i]) : nlohmann::ordered_json(nullptr);
  }
  return out;
}

}  // namespace

std::string EvalReport::to_json(const Dataset& ds) const {
  nlohmann::ordered_json j;
  j["task"] = to_string(task);
  j["num_items"] = num_items;
  if (task == Task::Classification) {
    j["overall_accuracy"] = classification.overall_accuracy;
    j["mean_class_accuracy"] = classification.mean_class_accuracy;
    j["per_class_accuracy"] = optional_array(classification.per_class_accuracy, ds.class_names);
  } else {
    j["point_accuracy"] = segmentation.point_accuracy;
    j["instance_piou"] = segmentation.instance_piou;
    j["class_piou"] = segmentation.class_piou;
    j["per_category_iou"] = optional_array(segmentation.per_category_iou, ds.class_names);
  }
  return j.dump(2);
}

EvalReport evaluate(PointModel& model, const Dataset& ds, std::span<const std::size_t> items,
                    const EvalOptions& opts) {
  if (items.empty()) throw DataError("nothing to evaluate: empty split");
  if (model.task() != ds.task) throw ConfigError("model task does not match the dataset task");
  EvalReport report;
  report.task = ds.task;
  report.num_items = items.size();

  auto probabilities = [&](const PointCloud& cloud) {
    return opts.multi_scale ? multi_scale_predict(model, cloud, *opts.multi_scale)
                            : model.predict_proba(cloud);
  };

  if (ds.task == Task::Classification) {
    std::vector<int> predicted, target;
    for (std::size_t idx : items) {
      const PointCloud& cloud = ds.items.at(idx);
      const Tensor p = probabilities(cloud);
      auto d = p.data();
      predicted.push_back(static_cast<int>(std::max_element(d.begin(), d.end()) - d.begin()));
      target.push_back(cloud.category.value());
    }
    report.classification = classification_metrics(predicted, target, ds.class_names.size());
    return report;
  }

  const std::size_t n_cat = ds.class_names.size();
  std::vector<double> cat_sum(n_cat, 0.0);
  std::vector<std::size_t> cat_count(n_cat, 0);
  std::size_t correct = 0, points = 0;
  double piou_sum = 0.0;
  for (std::size_t idx : items) {
    const PointCloud& cloud = ds.items.at(idx);
    const auto cat = static_cast<std::size_t>(cloud.category.value());
    const auto& parts = ds.category_parts.at(cat);
    const std::vector<int> pred = predict_parts(probabilities(cloud), parts);
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == cloud.point_labels[i];
    points += pred.size();
    const double iou = shape_part_iou(pred, cloud.point_labels, parts);
    piou_sum += iou;
    cat_sum[cat] += iou;
    ++cat_count[cat];
  }
  SegmentationMetrics& m = report.segmentation;
  m.point_accuracy = static_cast<double>(correct) / static_cast<double>(points);
  m.instance_piou = piou_sum / static_cast<double>(items.size());
  m.per_category_iou.resize(n_cat);
  double class_sum = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < n_cat; ++c) {
    if (cat_count[c] == 0) continue;
    m.per_category_iou[c] = cat_sum[c] / static_cast<double>(cat_count[c]);
    class_sum += *m.per_category_iou[c];
    ++present;
  }
  m.class_piou = class_sum / static_cast<double>(present);
  return report;
}

}  // namespace ctcloud
