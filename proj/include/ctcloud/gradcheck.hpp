#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ctcloud/tensor.hpp"

namespace ctcloud {

inline constexpr double kOpTolerance = 1e-5;
inline constexpr double kCompositeTolerance = 1e-4;

struct GradcheckOptions {
  double step = 1e-4;
  /// Denominator floor as a fraction of the largest gradient magnitude, so
  /// near-zero entries are judged against the scale of the whole gradient.
  double floor_fraction = 1e-3;
};

struct GradcheckResult {
  std::string name;
  std::uint64_t seed = 0;
  double tolerance = 0.0;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // both one-sided steps crossed a kink

  bool passed() const { return checked > 0 && max_rel_error < tolerance; }
};

/// Compares reverse-mode gradients of sum(f() ⊙ R), R a fixed random
/// projection, with central differences over every element of `inputs`.
/// Differences at h, h/2 and h/4 are Richardson-extrapolated, which keeps
/// the truncation error small near sharply curved batchnorm regions.
///
/// When a step changes the relu/max-pool pattern the step is shrunk, then a
/// second-order one-sided difference from the unaffected side is used.
GradcheckResult check_gradients(const std::string& name, const std::function<Tensor()>& f,
                                const std::vector<Tensor>& inputs, double tolerance,
                                std::uint64_t seed, const GradcheckOptions& opts = {});

struct GradcheckCase {
  std::string name;
  std::vector<std::string> ops;  // differentiable ops this case exercises
  bool composite = false;
  std::function<GradcheckResult(std::uint64_t seed)> run;
};

/// One case per differentiable op plus the attention, CT-block and
/// full-model composites.
const std::vector<GradcheckCase>& gradcheck_cases();

struct GradcheckReport {
  std::vector<GradcheckResult> results;
  std::vector<std::string> uncovered_ops;

  bool passed() const;
  /// Per case: worst relative error over seeds, tolerance, verdict.
  std::string table() const;
};

GradcheckReport run_gradcheck_suite(std::span<const std::uint64_t> seeds,
                                    const std::string& filter = "");

}  // namespace ctcloud
