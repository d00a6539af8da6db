#include <gtest/gtest.h>

#include <set>

#include "ctcloud/gradcheck.hpp"
#include "ctcloud/ops.hpp"
#include "oracles.hpp"

namespace ctcloud {
namespace {

/// relu with a backward rule that passes half the gradient: the negative
/// control the checker must catch.
Tensor broken_relu(const Tensor& x) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (double& v : out) v = std::max(v, 0.0);
  return Tensor::from_op("broken_relu", x.shape(), std::move(out), {x}, [](Node& o) {
    auto g = o.input_grad(0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.inputs[0]->data[i] > 0 ? 0.5 * o.grad[i] : 0.0;
  });
}

TEST(Gradcheck, CorruptedBackwardFails) {
  Rng rng(1);
  Tensor x = oracle::random_tensor({4, 3}, rng, -1, 1, true);
  const GradcheckResult bad = check_gradients("broken_relu", [x] { return broken_relu(x); }, {x}, kOpTolerance, 1);
  EXPECT_FALSE(bad.passed());
  EXPECT_GT(bad.max_rel_error, 0.1);
  const GradcheckResult good = check_gradients("relu", [x] { return relu(x); }, {x}, kOpTolerance, 1);
  EXPECT_TRUE(good.passed()) << good.max_rel_error;
}

TEST(Gradcheck, SubtlyWrongGradientFails) {
  // An error of 1e-3 relative must be visible at the op tolerance.
  Rng rng(2);
  Tensor x = oracle::random_tensor({5}, rng, 0.5, 1.5, true);
  auto f = [x] {
    std::vector<double> out(x.data().begin(), x.data().end());
    for (double& v : out) v = v * v;
    return Tensor::from_op("square", x.shape(), std::move(out), {x}, [](Node& o) {
      auto g = o.input_grad(0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += 2.002 * o.inputs[0]->data[i] * o.grad[i];
    });
  };
  EXPECT_FALSE(check_gradients("square", f, {x}, kOpTolerance, 2).passed());
}

TEST(Gradcheck, KinkCrossingStepsAreHandled) {
  // Inputs sitting within the step size of relu's kink.
  Tensor x({4}, {1e-5, -2e-5, 0.3, -0.4}, true);
  const GradcheckResult r = check_gradients("relu", [x] { return relu(x); }, {x}, kOpTolerance, 3);
  EXPECT_TRUE(r.passed()) << r.max_rel_error;
  EXPECT_EQ(r.checked + r.skipped, 4u);
}

TEST(Gradcheck, RegistryCoversEveryDifferentiableOp) {
  std::set<std::string> covered;
  bool has_block = false, has_model = false;
  for (const GradcheckCase& c : gradcheck_cases()) {
    covered.insert(c.ops.begin(), c.ops.end());
    has_block = has_block || c.name == "ct_block";
    has_model = has_model || c.name == "classification_model";
  }
  for (const auto& op : differentiable_op_names()) EXPECT_TRUE(covered.count(op)) << op;
  EXPECT_TRUE(has_block);
  EXPECT_TRUE(has_model);
}

TEST(Gradcheck, SuiteReportsEveryCase) {
  const std::vector<std::uint64_t> seeds = {1};
  const GradcheckReport report = run_gradcheck_suite(seeds, "soft");
  ASSERT_EQ(report.results.size(), 2u);
  EXPECT_TRUE(report.passed());
  const std::string table = report.table();
  EXPECT_NE(table.find("softmax_cols"), std::string::npos);
  EXPECT_NE(table.find("PASS"), std::string::npos);
}

}  // namespace
}  // namespace ctcloud
