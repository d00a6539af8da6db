#include "ctcloud/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "ctcloud/checkpoint.hpp"
#include "ctcloud/errors.hpp"
#include "ctcloud/metrics.hpp"

namespace ctcloud {

namespace fs = std::filesystem;

AugmentConfig AugmentConfig::classification() {
  AugmentConfig c;
  c.z_rotation = true;
  c.jitter_sigma = 0.02;
  return c;
}

AugmentConfig AugmentConfig::segmentation() {
  AugmentConfig c;
  c.aniso_scale = true;
  return c;
}

void AugmentConfig::validate() const {
  if (jitter_sigma < 0.0 || jitter_clip < 0.0) throw ConfigError("jitter parameters must be non-negative");
  if (!(scale_low > 0.0 && scale_low < scale_high)) {
    throw ConfigError("scale range needs 0 < low < high");
  }
}

void TrainConfig::validate() const {
  if (!(lr0 >= 0.0)) throw ConfigError("lr0 must be non-negative");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (min_lr < 0.0 || min_lr > std::max(lr0, 0.0)) throw ConfigError("min_lr must lie in [0, lr0]");
  if (epochs < 1) throw ConfigError("epochs must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  augment.validate();
}

void sgd_momentum_step(std::span<double> params, std::span<const double> grads,
                       std::span<double> velocity, double lr, double momentum) {
  if (params.size() != grads.size() || params.size() != velocity.size()) {
    throw DimensionError("sgd_momentum_step: parameter/grad/velocity sizes differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    velocity[i] = momentum * velocity[i] + grads[i];
    params[i] -= lr * velocity[i];
  }
}

void SgdMomentum::step(ParameterSet& params, double lr) {
  for (const auto& [name, p] : params.parameters()) {
    auto it = velocity_.find(name);
    if (it == velocity_.end()) it = velocity_.emplace(name, Tensor::zeros(p.shape())).first;
    Tensor param = p;
    if (param.has_grad()) {
      sgd_momentum_step(param.mutable_data(), param.grad(), it->second.mutable_data(), lr, momentum_);
    } else {
      const std::vector<double> zero(param.numel(), 0.0);
      sgd_momentum_step(param.mutable_data(), zero, it->second.mutable_data(), lr, momentum_);
    }
  }
}

double cosine_lr(std::size_t epoch, std::size_t total_epochs, double lr0, double min_lr) {
  if (total_epochs == 0 || epoch >= total_epochs) {
    throw ConfigError("cosine_lr: epoch " + std::to_string(epoch) + " outside [0, " +
                      std::to_string(total_epochs) + ")");
  }
  const double t = static_cast<double>(epoch) / static_cast<double>(total_epochs);
  return std::max(min_lr, lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * t)));
}

PointCloud augment(const PointCloud& cloud, const AugmentConfig& cfg, Rng& rng) {
  PointCloud out = cloud;
  std::vector<double> xyz(cloud.coords.data().begin(), cloud.coords.data().end());
  const std::size_t n = cloud.size();
  if (cfg.z_rotation) {
    std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
    const double theta = angle(rng);
    const double c = std::cos(theta), s = std::sin(theta);
    for (std::size_t i = 0; i < n; ++i) {
      const double x = xyz[3 * i], y = xyz[3 * i + 1];
      xyz[3 * i] = c * x - s * y;
      xyz[3 * i + 1] = s * x + c * y;
    }
  }
  if (cfg.aniso_scale) {
    std::uniform_real_distribution<double> factor(cfg.scale_low, cfg.scale_high);
    const double f[3] = {factor(rng), factor(rng), factor(rng)};
    for (std::size_t i = 0; i < n; ++i) {
      for (int d = 0; d < 3; ++d) xyz[3 * i + d] *= f[d];
    }
  }
  if (cfg.jitter_sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, cfg.jitter_sigma);
    for (double& v : xyz) v += std::clamp(noise(rng), -cfg.jitter_clip, cfg.jitter_clip);
  }
  out.coords = Tensor(cloud.coords.shape(), std::move(xyz));
  return out;
}

namespace {

Tensor as_rows(const Tensor& logits) {
  return logits.rank() == 1 ? reshape(logits, {1, logits.dim(0)}) : logits;
}

}  // namespace

Tensor two_head_loss(const Tensor& logits_local, const Tensor& logits_global,
                     std::span<const int> labels) {
  if (!logits_local.defined() && !logits_global.defined()) {
    throw ConfigError("two_head_loss: both heads are missing");
  }
  if (!logits_local.defined()) return cross_entropy(as_rows(logits_global), labels);
  if (!logits_global.defined()) return cross_entropy(as_rows(logits_local), labels);
  return add(cross_entropy(as_rows(logits_local), labels),
             cross_entropy(as_rows(logits_global), labels));
}

StepResult training_step(PointModel& model, std::span<const PointCloud> clouds) {
  const HeadOutputs out = model.forward_batch(clouds, Mode::Train);
  std::vector<int> labels;
  for (const PointCloud& cloud : clouds) {
    if (model.task() == Task::Classification) {
      labels.push_back(cloud.category.value());
    } else {
      labels.insert(labels.end(), cloud.point_labels.begin(), cloud.point_labels.end());
    }
  }
  StepResult r;
  r.loss = two_head_loss(out.local, out.global, labels);
  r.probabilities = model.fused_probabilities(out);
  return r;
}

std::string metrics_csv_header(Task task) {
  return task == Task::Classification ? "epoch,lr,train_loss,train_acc,eval_acc"
                                      : "epoch,lr,train_loss,train_acc,eval_acc,eval_piou";
}

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

constexpr const char* kVelocityPrefix = "velocity:";

}  // namespace

std::string metrics_csv_row(Task task, const EpochMetrics& m) {
  std::string row = std::to_string(m.epoch) + "," + fmt(m.lr) + "," + fmt(m.train_loss) + "," +
                    fmt(m.train_acc) + "," + fmt(m.eval_acc);
  if (task == Task::Segmentation) row += "," + fmt(m.eval_piou);
  return row;
}

namespace {

Checkpoint training_checkpoint(const PointModel& model, const SgdMomentum& opt,
                               std::size_t next_epoch) {
  Checkpoint ckpt;
  store_parameters(model.parameters(), ckpt);
  for (const auto& [name, v] : opt.velocity()) ckpt.tensors[kVelocityPrefix + name] = v.detach();
  ckpt.meta["task"] = to_string(model.task());
  ckpt.meta["next_epoch"] = std::to_string(next_epoch);
  return ckpt;
}

}  // namespace

void save_training_checkpoint(const fs::path& path, const PointModel& model, const SgdMomentum& opt,
                              std::size_t next_epoch) {
  save_checkpoint(path, training_checkpoint(model, opt, next_epoch));
}

TrainResult train_loop(PointModel& model, const Dataset& dataset, const TrainConfig& cfg,
                       const TrainOptions& opts) {
  cfg.validate();
  if (dataset.train.empty()) throw ConfigError("training split is empty");
  if (model.task() != dataset.task) throw ConfigError("model task does not match the dataset task");

  SgdMomentum opt(cfg.momentum);
  std::size_t start = 0;
  double best_score = -1.0;
  if (opts.resume) {
    const Checkpoint ckpt = load_checkpoint(*opts.resume);
    restore_parameters(model.parameters(), ckpt);
    for (const auto& [name, t] : ckpt.tensors) {
      if (name.rfind(kVelocityPrefix, 0) == 0) {
        opt.velocity()[name.substr(std::string(kVelocityPrefix).size())] = t.detach();
      }
    }
    auto it = ckpt.meta.find("next_epoch");
    if (it == ckpt.meta.end()) throw DataError("checkpoint lacks next_epoch; not a training checkpoint");
    start = std::stoul(it->second);
    if (auto b = ckpt.meta.find("best_score"); b != ckpt.meta.end()) best_score = std::stod(b->second);
  }
  const std::size_t end = std::min(cfg.epochs, opts.stop_after.value_or(cfg.epochs));

  const bool writing = !opts.out_dir.empty();
  std::ofstream csv;
  if (writing) {
    fs::create_directories(opts.out_dir);
    const fs::path csv_path = opts.out_dir / "metrics.csv";
    if (start == 0) {
      save_training_checkpoint(opts.out_dir / "checkpoint_init.ckpt", model, opt, 0);
      csv.open(csv_path, std::ios::trunc);
      csv << metrics_csv_header(dataset.task) << '\n';
    } else {
      // Keep rows of epochs already run, drop anything past the resume point.
      std::vector<std::string> kept;
      std::ifstream old(csv_path);
      std::string line;
      while (std::getline(old, line)) {
        if (kept.size() <= start) kept.push_back(line);
      }
      if (kept.empty()) kept.push_back(metrics_csv_header(dataset.task));
      csv.open(csv_path, std::ios::trunc);
      for (const auto& l : kept) csv << l << '\n';
    }
    if (!csv) throw DataError("cannot write " + csv_path.string());
  }

  const std::uint64_t order_stream = derive_seed(cfg.seed, 1);
  const std::uint64_t augment_stream = derive_seed(cfg.seed, 2);
  const std::uint64_t dropout_stream = derive_seed(cfg.seed, 3);

  TrainResult result;
  for (std::size_t epoch = start; epoch < end; ++epoch) {
    const double lr = cosine_lr(epoch, cfg.epochs, cfg.lr0, cfg.min_lr);
    std::vector<std::size_t> order = dataset.train;
    Rng order_rng(derive_seed(order_stream, epoch));
    std::shuffle(order.begin(), order.end(), order_rng);

    double loss_sum = 0.0;
    std::size_t hits = 0, seen = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch_size) {
      const std::size_t b1 = std::min(order.size(), b0 + cfg.batch_size);
      std::vector<PointCloud> batch;
      for (std::size_t j = b0; j < b1; ++j) {
        Rng aug_rng(derive_seed(augment_stream, epoch, order[j]));
        batch.push_back(augment(dataset.items[order[j]], cfg.augment, aug_rng));
      }
      model.parameters().zero_grad();
      model.reseed_dropout(derive_seed(dropout_stream, epoch, b0));
      const StepResult step = training_step(model, batch);
      backward(step.loss);
      opt.step(model.parameters(), lr);

      loss_sum += step.loss.item() * static_cast<double>(batch.size());
      const std::size_t k = step.probabilities.dim(1);
      const std::size_t rows_per_cloud = step.probabilities.dim(0) / batch.size();
      for (std::size_t c = 0; c < batch.size(); ++c) {
        const PointCloud& cloud = batch[c];
        if (dataset.task == Task::Classification) {
          auto p = step.probabilities.data().subspan(c * k, k);
          hits += static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin()) == *cloud.category;
          ++seen;
        } else {
          const auto& parts = dataset.category_parts.at(static_cast<std::size_t>(*cloud.category));
          for (std::size_t i = 0; i < rows_per_cloud; ++i) {
            hits += restricted_argmax(step.probabilities, c * rows_per_cloud + i, parts) == cloud.point_labels[i];
          }
          seen += rows_per_cloud;
        }
      }
    }

    EpochMetrics m;
    m.epoch = epoch + 1;
    m.lr = lr;
    m.train_loss = loss_sum / static_cast<double>(order.size());
    m.train_acc = static_cast<double>(hits) / static_cast<double>(seen);
    const bool last = epoch + 1 == cfg.epochs;
    if (!dataset.test.empty() && cfg.eval_every > 0 && ((epoch + 1) % cfg.eval_every == 0 || last)) {
      const EvalReport rep = evaluate(model, dataset, dataset.test);
      m.eval_acc = rep.accuracy();
      if (dataset.task == Task::Segmentation) m.eval_piou = rep.segmentation.instance_piou;
    }
    result.history.push_back(m);

    if (writing) {
      csv << metrics_csv_row(dataset.task, m) << '\n';
      csv.flush();
      const double score = dataset.task == Task::Segmentation && m.eval_piou ? *m.eval_piou
                           : m.eval_acc                                      ? *m.eval_acc
                                                                             : m.train_acc;
      Checkpoint ckpt = training_checkpoint(model, opt, epoch + 1);
      if (score > best_score) {
        best_score = score;
        ckpt.meta["best_score"] = fmt(best_score);
        save_checkpoint(opts.out_dir / "checkpoint_best.ckpt", ckpt);
      }
      ckpt.meta["best_score"] = fmt(best_score);
      save_checkpoint(opts.out_dir / "checkpoint_last.ckpt", ckpt);
    }
  }
  result.next_epoch = std::max(start, end);
  return result;
}

}  // namespace ctcloud
