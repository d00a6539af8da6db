#include "ctcloud/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <random>
#include <set>

#include "ctcloud/attention.hpp"
#include "ctcloud/ct_block.hpp"
#include "ctcloud/errors.hpp"
#include "ctcloud/geometry.hpp"
#include "ctcloud/layers.hpp"
#include "ctcloud/networks.hpp"
#include "ctcloud/ops.hpp"
#include "ctcloud/random.hpp"

namespace ctcloud {

namespace {

struct Probe {
  double loss;
  std::uint64_t pattern;
};

Probe probe(const std::function<Tensor()>& f, const std::vector<double>& projection) {
  NoGradGuard no_grad;
  ActivationPattern pattern;
  const Tensor y = f();
  if (y.numel() != projection.size()) throw DimensionError("gradcheck: output size changed between calls");
  double loss = 0.0;
  auto d = y.data();
  for (std::size_t i = 0; i < d.size(); ++i) loss += d[i] * projection[i];
  return {loss, pattern.fingerprint()};
}

}  // namespace

GradcheckResult check_gradients(const std::string& name, const std::function<Tensor()>& f,
                                const std::vector<Tensor>& inputs, double tolerance,
                                std::uint64_t seed, const GradcheckOptions& opts) {
  GradcheckResult result;
  result.name = name;
  result.seed = seed;
  result.tolerance = tolerance;

  // Analytic pass.
  std::vector<double> projection;
  {
    const Tensor y = f();
    Rng rng(derive_seed(seed, 0x9c));
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    projection.resize(y.numel());
    for (double& r : projection) r = u(rng);
    for (const Tensor& t : inputs) {
      Tensor in = t;
      in.zero_grad();
    }
    const Tensor loss = sum(mul(y, Tensor(y.shape(), projection)));
    backward(loss);
  }
  std::vector<std::vector<double>> analytic;
  double grad_scale = 0.0;
  for (const Tensor& t : inputs) {
    analytic.emplace_back(t.grad().begin(), t.grad().end());
    for (double g : analytic.back()) grad_scale = std::max(grad_scale, std::abs(g));
  }
  const double floor = std::max(opts.floor_fraction * grad_scale, 1e-10);

  const Probe base = probe(f, projection);
  for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
    Tensor in = inputs[ti];
    auto data = in.mutable_data();
    for (std::size_t e = 0; e < data.size(); ++e) {
      const double x0 = data[e];
      auto at = [&](double offset) {
        data[e] = x0 + offset;
        const Probe p = probe(f, projection);
        data[e] = x0;
        return p;
      };
      std::optional<double> numeric;
      double h = opts.step;
      for (int attempt = 0; attempt < 3 && !numeric; ++attempt, h *= 1e-2) {
        // Central differences at h, h/2, h/4 combined by two Richardson levels.
        double central[3];
        bool stable = true;
        std::optional<double> one_sided;
        for (int level = 0; level < 3 && stable; ++level) {
          const double step = h / static_cast<double>(1 << level);
          const Probe plus = at(step);
          const Probe minus = at(-step);
          const bool plus_ok = plus.pattern == base.pattern;
          const bool minus_ok = minus.pattern == base.pattern;
          stable = plus_ok && minus_ok;
          central[level] = (plus.loss - minus.loss) / (2.0 * step);
          if (!stable && attempt == 2 && (plus_ok || minus_ok)) {
            const double dir = plus_ok ? 1.0 : -1.0;
            const Probe one = plus_ok ? plus : minus;
            const Probe two = at(2.0 * dir * step);
            if (two.pattern == base.pattern) {
              one_sided = dir * (-3.0 * base.loss + 4.0 * one.loss - two.loss) / (2.0 * step);
            }
          }
        }
        if (stable) {
          const double r0 = (4.0 * central[1] - central[0]) / 3.0;
          const double r1 = (4.0 * central[2] - central[1]) / 3.0;
          numeric = (16.0 * r1 - r0) / 15.0;
        } else if (one_sided) {
          numeric = one_sided;
        }
      }
      if (!numeric) {
        ++result.skipped;
        continue;
      }
      const double a = analytic[ti][e];
      const double denom = std::max({std::abs(a), std::abs(*numeric), floor});
      result.max_rel_error = std::max(result.max_rel_error, std::abs(a - *numeric) / denom);
      ++result.checked;
    }
  }
  return result;
}

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = u(rng);
  return Tensor(std::move(shape), std::move(v), true);
}

Tensor random_coords(std::size_t n, Rng& rng) {
  Tensor t = random_tensor({n, 3}, rng);
  t.set_requires_grad(false);
  return t;
}

std::vector<Tensor> parameter_list(const ParameterSet& params) {
  std::vector<Tensor> out;
  for (const auto& [name, p] : params.parameters()) out.push_back(p);
  return out;
}

using Builder = std::function<GradcheckResult(std::uint64_t)>;

GradcheckCase op_case(const std::string& name, std::vector<std::string> ops, Builder run) {
  return GradcheckCase{name, std::move(ops), false, std::move(run)};
}

std::vector<GradcheckCase> build_cases() {
  std::vector<GradcheckCase> cases;
  const double tol = kOpTolerance;

  cases.push_back(op_case("matmul", {"matmul"}, [tol](std::uint64_t s) {
    Rng rng(s);
    Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng);
    return check_gradients("matmul", [=] { return matmul(a, b); }, {a, b}, tol, s);
  }));
  cases.push_back(op_case("linear", {"linear"}, [tol](std::uint64_t s) {
    Rng rng(s);
    Tensor x = random_tensor({5, 3}, rng), w = random_tensor({3, 4}, rng), b = random_tensor({4}, rng);
    return check_gradients("linear", [=] { return linear(x, w, b); }, {x, w, b}, tol, s);
  }));
  cases.push_back(op_case("add", {"add"}, [tol](std::uint64_t s) {
    Rng rng(s);
    Tensor a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng), bias = random_tensor({4}, rng);
    return check_gradients("add", [=] { return add(add(a, b), bias); }, {a, b, bias}, tol, s);
  }));
  cases.push_back(op_case("sub", {"sub"}, [tol](std::uint64_t s) {
    Rng rng(s);
    Tensor a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng);
    return check_gradients("sub", [=] { return sub(a, b); }, {a, b}, tol, s);
  }));
  cases.push_back(op_case("mul", {"mul"}, [tol](std::uint64_t s) {
    Rng rng(s);
    Tensor a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng);
    return check_gradients("mul", [=] { return mul(a, b); }, {a, b}, tol, s);
  }));
  cases.push_back(op_case("scale", {"scale"}, [tol](std::uint64_t s) {
    Rng rng(s);
    Tensor a = random_tensor({3, 4}, rng);
    return check_gradients("scale", [=] { return scale(a, -1.7); }, {a}, tol, s);
  }));
  cases.push_back(op_case("relu", {"relu"}, [tol](std::uint64_t s) {
    Rng rng(s);
    Tensor a = random_tensor({4, 5}, rng);
    return check_gradients("relu", [=] { return relu(a); }, {a}, tol, s);
  }));
  cases.push_back(op_case("concat", {"concat"}, [tol](std::uint64_t s) {
    Rng rng(s);
    Tensor a = random_tensor({2, 3}, rng), b = random_tensor({4, 3}, rng), c = random_tensor({6, 2}, rng);
    return check_gradients("concat", [=] { return concat({concat({a, b}, 0), c}, 1); }, {a, b, c}, tol, s);
  }));
  cases.push_back(op_case("reshape", {"reshape"}, [tol](std::uint64_t s) {
    Rng rng(s);
    Tensor a = random_tensor({2, 6}, rng), w = random_tensor({3, 4}, rng);
    return check_gradients("reshape", [=] { return mul(reshape(a, {3, 4}), w); }, {a, w}, tol, s);
  }));
  cases.push_back(op_case("transpose", {"transpose"}, [tol](std::uint64_t s) {
    Rng rng(s);
    Tensor a = random_tensor({3, 5}, rng);
    return check_gradients("transpose", [=] { return transpose(a); }, {a}, tol, s);
  }));
  cases.push_back(op_case("sum", {"sum"}, [tol](std::uint64_t s) {
    Rng rng(s);
    Tensor a = random_tensor({3, 4}, rng);
    return check_gradients("sum", [=] { return sum(mul(a, a)); }, {a}, tol, s);
  }));
  cases.push_back(op_case("mean", {"mean"}, [tol](std::uint64_t s) {
    Rng rng(s);
    Tensor a = random_tensor({3, 4}, rng);
    return check_gradients("mean", [=] { return mean(mul(a, a)); }, {a}, tol, s);
  }));
  cases.push_back(op_case("softmax_cols", {"softmax_cols"}, [tol](std::uint64_t s) {
    Rng rng(s);
    Tensor a = random_tensor({4, 3}, rng, -2.0, 2.0);
    return check_gradients("softmax_cols", [=] { return softmax_cols(a); }, {a}, tol, s);
  }));
  cases.push_back(op_case("softmax_rows", {"softmax_rows"}, [tol](std::uint64_t s) {
    Rng rng(s);
    Tensor a = random_tensor({4, 3}, rng, -2.0, 2.0);
    return check_gradients("softmax_rows", [=] { return softmax_rows(a); }, {a}, tol, s);
  }));
  cases.push_back(op_case("l1_normalize_rows", {"l1_normalize_rows"}, [tol](std::uint64_t s) {
    Rng rng(s);
    Tensor a = random_tensor({4, 3}, rng, 0.1, 1.0);
    return check_gradients("l1_normalize_rows", [=] { return l1_normalize_rows(a); }, {a}, tol, s);
  }));
  cases.push_back(op_case("max_pool_axis", {"max_pool_axis"}, [tol](std::uint64_t s) {
    Rng rng(s);
    Tensor a = random_tensor({3, 4, 2}, rng), b = random_tensor({5, 3}, rng);
    return check_gradients(
        "max_pool_axis",
        [=] { return concat({reshape(max_pool_axis(a, 1), {6}), reshape(max_pool_axis(b, 0), {3})}, 0); },
        {a, b}, tol, s);
  }));
  cases.push_back(op_case("gather_rows", {"gather_rows"}, [tol](std::uint64_t s) {
    Rng rng(s);
    Tensor a = random_tensor({4, 3}, rng);
    const std::vector<std::size_t> rows = {2, 0, 2, 3, 2};
    return check_gradients("gather_rows", [=] { return gather_rows(a, rows); }, {a}, tol, s);
  }));
  cases.push_back(op_case("expand_rows", {"expand_rows"}, [tol](std::uint64_t s) {
    Rng rng(s);
    Tensor a = random_tensor({3, 2}, rng);
    return check_gradients("expand_rows", [=] { return expand_rows(a, 4); }, {a}, tol, s);
  }));
  cases.push_back(op_case("batchnorm", {"batchnorm"}, [tol](std::uint64_t s) {
    Rng rng(s);
    Tensor x = random_tensor({6, 3}, rng), g = random_tensor({3}, rng, 0.5, 1.5), b = random_tensor({3}, rng);
    auto state = std::make_shared<BatchNormState>();
    state->running_mean = Tensor::zeros({3});
    state->running_var = Tensor::full({3}, 1.0);
    auto r = check_gradients("batchnorm", [=] { return batchnorm(x, g, b, *state, Mode::Train); },
                             {x, g, b}, tol, s);
    // Eval mode is an affine map with the running statistics.
    const auto e = check_gradients("batchnorm", [=] { return batchnorm(x, g, b, *state, Mode::Eval); },
                                   {x, g, b}, tol, s);
    r.max_rel_error = std::max(r.max_rel_error, e.max_rel_error);
    r.checked += e.checked;
    r.skipped += e.skipped;
    return r;
  }));
  cases.push_back(op_case("cross_entropy", {"cross_entropy"}, [tol](std::uint64_t s) {
    Rng rng(s);
    Tensor logits = random_tensor({4, 5}, rng, -2.0, 2.0);
    const std::vector<int> labels = {0, 3, 4, 3};
    return check_gradients("cross_entropy", [=] { return cross_entropy(logits, labels); }, {logits}, tol, s);
  }));
  cases.push_back(op_case("dropout", {"dropout"}, [tol](std::uint64_t s) {
    Rng rng(s);
    Tensor a = random_tensor({4, 5}, rng);
    return check_gradients(
        "dropout",
        [=] {
          Rng mask(derive_seed(s, 0xd0));
          return dropout(a, 0.4, Mode::Train, mask);
        },
        {a}, tol, s);
  }));
  cases.push_back(op_case("interpolate_up", {"interpolate_up"}, [tol](std::uint64_t s) {
    Rng rng(s);
    Tensor feats = random_tensor({5, 3}, rng);
    const Tensor src = random_coords(5, rng), dst = random_coords(9, rng);
    return check_gradients("interpolate_up", [=] { return interpolate_up(feats, src, dst); }, {feats}, tol, s);
  }));

  cases.push_back(GradcheckCase{
      "offset_attention", {"matmul", "transpose", "softmax_cols", "l1_normalize_rows", "sub", "linear",
                           "batchnorm", "relu", "add"},
      true, [](std::uint64_t s) {
        Rng rng(s);
        auto params = std::make_shared<ParameterSet>();
        auto w = std::make_shared<OAWeights>(OAWeights::create(*params, "oa", OAConfig::with_embedding(8), rng));
        Tensor f = random_tensor({10, 8}, rng);
        std::vector<Tensor> inputs = parameter_list(*params);
        inputs.push_back(f);
        return check_gradients("offset_attention", [=] { return offset_attention(f, *w, Mode::Train); },
                               inputs, kCompositeTolerance, s);
      }});

  cases.push_back(GradcheckCase{
      "ct_block", {"gather_rows", "concat", "reshape", "max_pool_axis", "interpolate_up", "expand_rows"},
      true, [](std::uint64_t s) {
        Rng rng(s);
        CTBlockConfig cfg;
        cfg.n_in = 16;
        cfg.n_out = 8;
        cfg.c_in = 4;
        cfg.c_mid = 4;
        cfg.c_out = 6;
        cfg.group_size = 4;
        cfg.d_e = 8;
        auto params = std::make_shared<ParameterSet>();
        auto w = std::make_shared<CTBlockWeights>(CTBlockWeights::create(*params, "ct", cfg, rng));
        BranchState state;
        state.global_coords = random_coords(32, rng);
        state.local_global_idx = farthest_point_sample(state.global_coords, 16);
        state.local_coords = select_rows(state.global_coords, state.local_global_idx);
        state.local_features = random_tensor({16, 4}, rng);
        state.global_features = random_tensor({32, 8}, rng);
        std::vector<Tensor> inputs = parameter_list(*params);
        inputs.push_back(state.local_features);
        inputs.push_back(state.global_features);
        return check_gradients(
            "ct_block",
            [=] {
              const BranchState out = ct_block_forward(state, cfg, *w, Mode::Train);
              return concat({reshape(out.local_features, {out.local_features.numel()}),
                             reshape(out.global_features, {out.global_features.numel()})},
                            0);
            },
            inputs, kCompositeTolerance, s);
      }});

  cases.push_back(GradcheckCase{
      "classification_model", {"cross_entropy", "dropout"}, true, [](std::uint64_t s) {
        NetworkConfig cfg;
        cfg.n_points = 32;
        cfg.embed_width = 4;
        cfg.block_widths = {4, 6, 8};
        cfg.group_size = 4;
        cfg.d_e = 8;
        cfg.head_hidden = 8;
        cfg.dropout = 0.3;
        cfg.num_classes = 2;
        auto model = std::make_shared<ClassificationModel>(cfg, s);
        Rng rng(derive_seed(s, 0xc1));
        PointCloud cloud;
        cloud.coords = random_coords(32, rng);
        cloud.category = static_cast<int>(s % 2);
        const std::vector<int> label = {*cloud.category};
        return check_gradients(
            "classification_model",
            [=] {
              model->reseed_dropout(derive_seed(s, 0xd1));
              const HeadOutputs out = model->forward(cloud, Mode::Train);
              const Tensor loss = add(cross_entropy(reshape(out.local, {1, 2}), label),
                                      cross_entropy(reshape(out.global, {1, 2}), label));
              return concat({out.fused, loss}, 0);
            },
            parameter_list(model->parameters()), kCompositeTolerance, s);
      }});

  return cases;
}

}  // namespace

const std::vector<GradcheckCase>& gradcheck_cases() {
  static const std::vector<GradcheckCase> cases = build_cases();
  return cases;
}

bool GradcheckReport::passed() const {
  if (results.empty() || !uncovered_ops.empty()) return false;
  return std::all_of(results.begin(), results.end(), [](const GradcheckResult& r) { return r.passed(); });
}

std::string GradcheckReport::table() const {
  struct Row {
    double worst = 0.0;
    double tol = 0.0;
    std::size_t checked = 0, skipped = 0, seeds = 0;
    bool ok = true;
  };
  std::vector<std::string> order;
  std::map<std::string, Row> rows;
  for (const auto& r : results) {
    if (!rows.count(r.name)) order.push_back(r.name);
    Row& row = rows[r.name];
    row.worst = std::max(row.worst, r.max_rel_error);
    row.tol = r.tolerance;
    row.checked += r.checked;
    row.skipped += r.skipped;
    ++row.seeds;
    row.ok = row.ok && r.passed();
  }
  std::string out;
  char line[160];
  std::snprintf(line, sizeof(line), "%-22s %12s %9s %8s %7s %5s  %s\n", "case", "max_rel_err", "tol",
                "checked", "skipped", "seeds", "result");
  out += line;
  for (const auto& name : order) {
    const Row& r = rows[name];
    std::snprintf(line, sizeof(line), "%-22s %12.3e %9.0e %8zu %7zu %5zu  %s\n", name.c_str(), r.worst,
                  r.tol, r.checked, r.skipped, r.seeds, r.ok ? "PASS" : "FAIL");
    out += line;
  }
  for (const auto& op : uncovered_ops) out += "uncovered op: " + op + "\n";
  return out;
}

GradcheckReport run_gradcheck_suite(std::span<const std::uint64_t> seeds, const std::string& filter) {
  GradcheckReport report;
  std::set<std::string> covered;
  for (const GradcheckCase& c : gradcheck_cases()) {
    if (!filter.empty() && c.name.find(filter) == std::string::npos) continue;
    covered.insert(c.ops.begin(), c.ops.end());
    for (std::uint64_t s : seeds) report.results.push_back(c.run(s));
  }
  if (filter.empty()) {
    for (const auto& op : differentiable_op_names()) {
      if (!covered.count(op)) report.uncovered_ops.push_back(op);
    }
  }
  return report;
}

}  // namespace ctcloud
