#include "ctcloud/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "ctcloud/errors.hpp"

namespace ctcloud {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

thread_local ActivationPattern* g_pattern = nullptr;

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got " + shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

void require_finite(std::span<const double> v, const char* op) {
  for (double x : v) {
    if (!std::isfinite(x)) throw NumericError(std::string(op) + ": non-finite input");
  }
}

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Splits a shape around `axis` into (outer, extent, inner).
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace

ActivationPattern::ActivationPattern() : hash_(0x243f6a8885a308d3ULL), previous_(g_pattern) {
  g_pattern = this;
}

ActivationPattern::~ActivationPattern() { g_pattern = previous_; }

void ActivationPattern::mix(std::uint64_t value) { hash_ = splitmix(hash_ ^ value); }

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), p = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " · " +
                         shape_str(b.shape()));
  }
  std::vector<double> out(m * p);
  MutMap(out.data(), m, p).noalias() = ConstMap(a.data().data(), m, k) * ConstMap(b.data().data(), k, p);
  return Tensor::from_op("matmul", {m, p}, std::move(out), {a, b}, [m, k, p](Node& o) {
    ConstMap gc(o.grad.data(), m, p);
    if (auto ga = o.input_grad(0); !ga.empty()) {
      MutMap(ga.data(), m, k).noalias() += gc * ConstMap(o.inputs[1]->data.data(), k, p).transpose();
    }
    if (auto gb = o.input_grad(1); !gb.empty()) {
      MutMap(gb.data(), k, p).noalias() += ConstMap(o.inputs[0]->data.data(), m, k).transpose() * gc;
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank(x, 2, "linear");
  require_rank(weight, 2, "linear");
  const std::size_t n = x.dim(0), k = x.dim(1), p = weight.dim(1);
  if (weight.dim(0) != k) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " does not match weight " +
                         shape_str(weight.shape()));
  }
  const bool has_bias = bias.defined();
  if (has_bias && bias.shape() != Shape{p}) {
    throw DimensionError("linear: bias " + shape_str(bias.shape()) + " does not match weight " +
                         shape_str(weight.shape()));
  }
  std::vector<double> out(n * p);
  MutMap y(out.data(), n, p);
  y.noalias() = ConstMap(x.data().data(), n, k) * ConstMap(weight.data().data(), k, p);
  if (has_bias) {
    y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.data().data(), p);
  }
  std::vector<Tensor> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return Tensor::from_op("linear", {n, p}, std::move(out), inputs, [n, k, p, has_bias](Node& o) {
    ConstMap gy(o.grad.data(), n, p);
    if (auto gx = o.input_grad(0); !gx.empty()) {
      MutMap(gx.data(), n, k).noalias() += gy * ConstMap(o.inputs[1]->data.data(), k, p).transpose();
    }
    if (auto gw = o.input_grad(1); !gw.empty()) {
      MutMap(gw.data(), k, p).noalias() += ConstMap(o.inputs[0]->data.data(), n, k).transpose() * gy;
    }
    if (has_bias) {
      if (auto gb = o.input_grad(2); !gb.empty()) {
        // Plain loop: Eigen's column reduction changes order with buffer alignment.
        const double* g = o.grad.data();
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < p; ++j) gb[j] += g[i * p + j];
        }
      }
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) {
    std::vector<double> out(a.data().begin(), a.data().end());
    auto bd = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
    return Tensor::from_op("add", a.shape(), std::move(out), {a, b}, [](Node& o) {
      for (std::size_t s = 0; s < 2; ++s) {
        if (auto g = o.input_grad(s); !g.empty()) {
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
        }
      }
    });
  }
  if (b.rank() == 1 && a.rank() >= 1 && a.shape().back() == b.dim(0)) {
    const std::size_t c = b.dim(0);
    std::vector<double> out(a.data().begin(), a.data().end());
    auto bd = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bd[i % c];
    return Tensor::from_op("add", a.shape(), std::move(out), {a, b}, [c](Node& o) {
      if (auto ga = o.input_grad(0); !ga.empty()) {
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += o.grad[i];
      }
      if (auto gb = o.input_grad(1); !gb.empty()) {
        for (std::size_t i = 0; i < o.grad.size(); ++i) gb[i % c] += o.grad[i];
      }
    });
  }
  throw DimensionError("add: incompatible shapes " + shape_str(a.shape()) + " and " +
                       shape_str(b.shape()));
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.data().begin(), a.data().end());
  auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bd[i];
  return Tensor::from_op("sub", a.shape(), std::move(out), {a, b}, [](Node& o) {
    if (auto ga = o.input_grad(0); !ga.empty()) {
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += o.grad[i];
    }
    if (auto gb = o.input_grad(1); !gb.empty()) {
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= o.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  auto ad = a.data();
  auto bd = b.data();
  std::vector<double> out(ad.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
  return Tensor::from_op("mul", a.shape(), std::move(out), {a, b}, [](Node& o) {
    const auto& av = o.inputs[0]->data;
    const auto& bv = o.inputs[1]->data;
    if (auto ga = o.input_grad(0); !ga.empty()) {
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += o.grad[i] * bv[i];
    }
    if (auto gb = o.input_grad(1); !gb.empty()) {
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += o.grad[i] * av[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (double& v : out) v *= factor;
  return Tensor::from_op("scale", a.shape(), std::move(out), {a}, [factor](Node& o) {
    if (auto g = o.input_grad(0); !g.empty()) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * o.grad[i];
    }
  });
}

Tensor relu(const Tensor& x) {
  auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] > 0.0 ? xd[i] : 0.0;
  if (g_pattern) {
    std::uint64_t word = 0;
    for (std::size_t i = 0; i < xd.size(); ++i) {
      word = (word << 1) | (xd[i] > 0.0 ? 1u : 0u);
      if (i % 64 == 63) {
        g_pattern->mix(word);
        word = 0;
      }
    }
    g_pattern->mix(word);
  }
  return Tensor::from_op("relu", x.shape(), std::move(out), {x}, [](Node& o) {
    if (auto g = o.input_grad(0); !g.empty()) {
      const auto& xv = o.inputs[0]->data;
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (xv[i] > 0.0) g[i] += o.grad[i];
      }
    }
  });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) {
    throw DimensionError("concat: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(first));
  }
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const Tensor& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == first[i];
    if (!ok) {
      throw DimensionError("concat: incompatible shapes " + shape_str(first) + " and " +
                           shape_str(s) + " along axis " + std::to_string(axis));
    }
    out_shape[axis] += s[axis];
  }
  const AxisSplit total = split_axis(out_shape, axis);
  std::vector<std::size_t> chunk(parts.size());
  for (std::size_t j = 0; j < parts.size(); ++j) chunk[j] = parts[j].dim(axis) * total.inner;
  const std::size_t row = total.extent * total.inner;

  std::vector<double> out(shape_numel(out_shape));
  std::size_t offset = 0;
  for (std::size_t j = 0; j < parts.size(); ++j) {
    auto pd = parts[j].data();
    for (std::size_t o = 0; o < total.outer; ++o) {
      std::copy_n(pd.begin() + o * chunk[j], chunk[j], out.begin() + o * row + offset);
    }
    offset += chunk[j];
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  const std::size_t outer = total.outer;
  return Tensor::from_op("concat", out_shape, std::move(out), inputs, [chunk, row, outer](Node& o) {
    std::size_t offset = 0;
    for (std::size_t j = 0; j < chunk.size(); ++j) {
      if (auto g = o.input_grad(j); !g.empty()) {
        for (std::size_t r = 0; r < outer; ++r) {
          const double* src = o.grad.data() + r * row + offset;
          double* dst = g.data() + r * chunk[j];
          for (std::size_t i = 0; i < chunk[j]; ++i) dst[i] += src[i];
        }
      }
      offset += chunk[j];
    }
  });
}

Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return Tensor::from_op("reshape", std::move(shape), std::move(out), {x}, [](Node& o) {
    if (auto g = o.input_grad(0); !g.empty()) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    }
  });
}

Tensor transpose(const Tensor& x) {
  require_rank(x, 2, "transpose");
  const std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<double> out(r * c);
  MutMap(out.data(), c, r) = ConstMap(x.data().data(), r, c).transpose();
  return Tensor::from_op("transpose", {c, r}, std::move(out), {x}, [r, c](Node& o) {
    if (auto g = o.input_grad(0); !g.empty()) {
      MutMap(g.data(), r, c) += ConstMap(o.grad.data(), c, r).transpose();
    }
  });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return Tensor::from_op("sum", {1}, {s}, {x}, [](Node& o) {
    if (auto g = o.input_grad(0); !g.empty()) {
      for (double& v : g) v += o.grad[0];
    }
  });
}

Tensor mean(const Tensor& x) {
  const double n = static_cast<double>(x.numel());
  double s = 0.0;
  for (double v : x.data()) s += v;
  return Tensor::from_op("mean", {1}, {s / n}, {x}, [n](Node& o) {
    if (auto g = o.input_grad(0); !g.empty()) {
      for (double& v : g) v += o.grad[0] / n;
    }
  });
}

Tensor softmax_cols(const Tensor& x) {
  require_rank(x, 2, "softmax_cols");
  require_finite(x.data(), "softmax_cols");
  const std::size_t n = x.dim(0), m = x.dim(1);
  auto xd = x.data();
  std::vector<double> out(n * m);
  std::vector<double> colmax(m, -std::numeric_limits<double>::infinity());
  std::vector<double> colsum(m, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) colmax[j] = std::max(colmax[j], xd[i * m + j]);
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      const double e = std::exp(xd[i * m + j] - colmax[j]);
      out[i * m + j] = e;
      colsum[j] += e;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] /= colsum[j];
  }
  return Tensor::from_op("softmax_cols", {n, m}, std::move(out), {x}, [n, m](Node& o) {
    auto g = o.input_grad(0);
    if (g.empty()) return;
    std::vector<double> dot(m, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) dot[j] += o.grad[i * m + j] * o.data[i * m + j];
    }
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) {
        const std::size_t idx = i * m + j;
        g[idx] += o.data[idx] * (o.grad[idx] - dot[j]);
      }
    }
  });
}

Tensor softmax_rows(const Tensor& x) {
  require_rank(x, 2, "softmax_rows");
  require_finite(x.data(), "softmax_rows");
  const std::size_t n = x.dim(0), m = x.dim(1);
  auto xd = x.data();
  std::vector<double> out(n * m);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = xd.data() + i * m;
    const double mx = *std::max_element(row, row + m);
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) s += out[i * m + j] = std::exp(row[j] - mx);
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] /= s;
  }
  return Tensor::from_op("softmax_rows", {n, m}, std::move(out), {x}, [n, m](Node& o) {
    auto g = o.input_grad(0);
    if (g.empty()) return;
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < m; ++j) dot += o.grad[i * m + j] * o.data[i * m + j];
      for (std::size_t j = 0; j < m; ++j) {
        const std::size_t idx = i * m + j;
        g[idx] += o.data[idx] * (o.grad[idx] - dot);
      }
    }
  });
}

Tensor l1_normalize_rows(const Tensor& x, double eps) {
  require_rank(x, 2, "l1_normalize_rows");
  const std::size_t n = x.dim(0), m = x.dim(1);
  auto xd = x.data();
  std::vector<double> out(n * m);
  std::vector<double> denom(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) s += xd[i * m + j];
    denom[i] = s + eps;
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] = xd[i * m + j] / denom[i];
  }
  return Tensor::from_op("l1_normalize_rows", {n, m}, std::move(out), {x},
                         [n, m, denom = std::move(denom)](Node& o) {
                           auto g = o.input_grad(0);
                           if (g.empty()) return;
                           for (std::size_t i = 0; i < n; ++i) {
                             double dot = 0.0;
                             for (std::size_t j = 0; j < m; ++j) {
                               dot += o.grad[i * m + j] * o.data[i * m + j];
                             }
                             for (std::size_t j = 0; j < m; ++j) {
                               g[i * m + j] += (o.grad[i * m + j] - dot) / denom[i];
                             }
                           }
                         });
}

Tensor max_pool_axis(const Tensor& x, std::size_t axis) {
  const Shape& s = x.shape();
  if (axis >= s.size()) {
    throw DimensionError("max_pool_axis: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(s));
  }
  const AxisSplit sp = split_axis(s, axis);
  Shape out_shape;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i != axis) out_shape.push_back(s[i]);
  }
  if (out_shape.empty()) out_shape.push_back(1);

  auto xd = x.data();
  std::vector<double> out(sp.outer * sp.inner);
  std::vector<std::size_t> arg(out.size());
  for (std::size_t o = 0; o < sp.outer; ++o) {
    const double* base = xd.data() + o * sp.extent * sp.inner;
    double* dst = out.data() + o * sp.inner;
    std::size_t* best = arg.data() + o * sp.inner;
    std::copy_n(base, sp.inner, dst);
    std::fill_n(best, sp.inner, 0);
    for (std::size_t e = 1; e < sp.extent; ++e) {
      const double* row = base + e * sp.inner;
      for (std::size_t i = 0; i < sp.inner; ++i) {
        if (row[i] > dst[i]) {
          dst[i] = row[i];
          best[i] = e;
        }
      }
    }
  }
  if (g_pattern) {
    for (std::size_t a : arg) g_pattern->mix(a);
  }
  return Tensor::from_op("max_pool_axis", std::move(out_shape), std::move(out), {x},
                         [sp, arg = std::move(arg)](Node& o) {
                           auto g = o.input_grad(0);
                           if (g.empty()) return;
                           for (std::size_t ob = 0; ob < sp.outer; ++ob) {
                             for (std::size_t i = 0; i < sp.inner; ++i) {
                               const std::size_t k = ob * sp.inner + i;
                               g[(ob * sp.extent + arg[k]) * sp.inner + i] += o.grad[k];
                             }
                           }
                         });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  if (rows.empty()) throw DimensionError("gather_rows: empty index list");
  const std::size_t n = x.dim(0);
  const std::size_t width = x.numel() / n;
  Shape out_shape = x.shape();
  out_shape[0] = rows.size();
  auto xd = x.data();
  std::vector<double> out(rows.size() * width);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= n) {
      throw DimensionError("gather_rows: index " + std::to_string(rows[r]) + " out of range for " +
                           std::to_string(n) + " rows");
    }
    std::copy_n(xd.begin() + rows[r] * width, width, out.begin() + r * width);
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return Tensor::from_op("gather_rows", std::move(out_shape), std::move(out), {x},
                         [width, idx = std::move(idx)](Node& o) {
                           auto g = o.input_grad(0);
                           if (g.empty()) return;
                           for (std::size_t r = 0; r < idx.size(); ++r) {
                             const double* src = o.grad.data() + r * width;
                             double* dst = g.data() + idx[r] * width;
                             for (std::size_t c = 0; c < width; ++c) dst[c] += src[c];
                           }
                         });
}

Tensor expand_rows(const Tensor& x, std::size_t repeats) {
  require_rank(x, 2, "expand_rows");
  if (repeats == 0) throw DimensionError("expand_rows: repeat count must be positive");
  const std::size_t n = x.dim(0), c = x.dim(1);
  auto xd = x.data();
  std::vector<double> out(n * repeats * c);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t s = 0; s < repeats; ++s) {
      std::copy_n(xd.begin() + i * c, c, out.begin() + (i * repeats + s) * c);
    }
  }
  return Tensor::from_op("expand_rows", {n, repeats, c}, std::move(out), {x},
                         [n, c, repeats](Node& o) {
                           auto g = o.input_grad(0);
                           if (g.empty()) return;
                           for (std::size_t i = 0; i < n; ++i) {
                             for (std::size_t s = 0; s < repeats; ++s) {
                               const double* src = o.grad.data() + (i * repeats + s) * c;
                               for (std::size_t k = 0; k < c; ++k) g[i * c + k] += src[k];
                             }
                           }
                         });
}

Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                 Mode mode) {
  require_rank(x, 2, "batchnorm");
  const std::size_t n = x.dim(0), c = x.dim(1);
  for (const Tensor* t : std::initializer_list<const Tensor*>{&gamma, &beta, &state.running_mean, &state.running_var}) {
    if (t->shape() != Shape{c}) {
      throw DimensionError("batchnorm: parameter " + shape_str(t->shape()) +
                           " does not match input " + shape_str(x.shape()));
    }
  }
  auto xd = x.data();
  auto gd = gamma.data();
  auto bd = beta.data();
  std::vector<double> mu(c, 0.0), inv_std(c), xhat(n * c), out(n * c);

  if (mode == Mode::Train) {
    if (n < 2) throw ConfigError("batchnorm: training mode needs at least 2 rows, got " + std::to_string(n));
    std::vector<double> var(c, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < c; ++j) mu[j] += xd[i * c + j];
    }
    for (double& m : mu) m /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < c; ++j) {
        const double d = xd[i * c + j] - mu[j];
        var[j] += d * d;
      }
    }
    for (double& v : var) v /= static_cast<double>(n);
    for (std::size_t j = 0; j < c; ++j) inv_std[j] = 1.0 / std::sqrt(var[j] + state.eps);

    auto rm = state.running_mean.mutable_data();
    auto rv = state.running_var.mutable_data();
    const double unbias = static_cast<double>(n) / static_cast<double>(n - 1);
    for (std::size_t j = 0; j < c; ++j) {
      rm[j] = (1.0 - state.momentum) * rm[j] + state.momentum * mu[j];
      rv[j] = (1.0 - state.momentum) * rv[j] + state.momentum * var[j] * unbias;
    }
  } else {
    auto rm = state.running_mean.data();
    auto rv = state.running_var.data();
    for (std::size_t j = 0; j < c; ++j) {
      mu[j] = rm[j];
      inv_std[j] = 1.0 / std::sqrt(rv[j] + state.eps);
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      const std::size_t k = i * c + j;
      xhat[k] = (xd[k] - mu[j]) * inv_std[j];
      out[k] = gd[j] * xhat[k] + bd[j];
    }
  }

  const bool batch_stats = mode == Mode::Train;
  return Tensor::from_op(
      "batchnorm", {n, c}, std::move(out), {x, gamma, beta},
      [n, c, batch_stats, inv_std = std::move(inv_std), xhat = std::move(xhat)](Node& o) {
        const auto& gv = o.inputs[1]->data;
        std::vector<double> sum_dy(c, 0.0), sum_dy_xhat(c, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < c; ++j) {
            const std::size_t k = i * c + j;
            sum_dy[j] += o.grad[k];
            sum_dy_xhat[j] += o.grad[k] * xhat[k];
          }
        }
        if (auto gx = o.input_grad(0); !gx.empty()) {
          const double inv_n = 1.0 / static_cast<double>(n);
          for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < c; ++j) {
              const std::size_t k = i * c + j;
              double d = o.grad[k];
              if (batch_stats) d -= (sum_dy[j] + xhat[k] * sum_dy_xhat[j]) * inv_n;
              gx[k] += gv[j] * inv_std[j] * d;
            }
          }
        }
        if (auto gg = o.input_grad(1); !gg.empty()) {
          for (std::size_t j = 0; j < c; ++j) gg[j] += sum_dy_xhat[j];
        }
        if (auto gb = o.input_grad(2); !gb.empty()) {
          for (std::size_t j = 0; j < c; ++j) gb[j] += sum_dy[j];
        }
      });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require_rank(logits, 2, "cross_entropy");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != n) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(n) + " rows");
  }
  auto ld = logits.data();
  require_finite(ld, "cross_entropy");
  std::vector<double> prob(n * k);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
      throw DataError("cross_entropy: label " + std::to_string(labels[i]) + " at index " +
                      std::to_string(i) + " outside [0, " + std::to_string(k) + ")");
    }
    const double* row = ld.data() + i * k;
    const double mx = *std::max_element(row, row + k);
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += prob[i * k + j] = std::exp(row[j] - mx);
    for (std::size_t j = 0; j < k; ++j) prob[i * k + j] /= s;
    total += mx + std::log(s) - row[labels[i]];
  }
  std::vector<int> lab(labels.begin(), labels.end());
  return Tensor::from_op("cross_entropy", {1}, {total / static_cast<double>(n)}, {logits},
                         [n, k, prob = std::move(prob), lab = std::move(lab)](Node& o) {
                           auto g = o.input_grad(0);
                           if (g.empty()) return;
                           const double s = o.grad[0] / static_cast<double>(n);
                           for (std::size_t i = 0; i < n; ++i) {
                             for (std::size_t j = 0; j < k; ++j) g[i * k + j] += s * prob[i * k + j];
                             g[i * k + static_cast<std::size_t>(lab[i])] -= s;
                           }
                         });
}

Tensor dropout(const Tensor& x, double p, Mode mode, std::mt19937_64& rng) {
  if (p < 0.0 || p >= 1.0) throw ConfigError("dropout: probability must lie in [0, 1)");
  if (mode == Mode::Eval || p == 0.0) return x;
  std::bernoulli_distribution keep(1.0 - p);
  const double s = 1.0 / (1.0 - p);
  auto xd = x.data();
  std::vector<double> mask(xd.size()), out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) {
    mask[i] = keep(rng) ? s : 0.0;
    out[i] = xd[i] * mask[i];
  }
  return Tensor::from_op("dropout", x.shape(), std::move(out), {x}, [mask = std::move(mask)](Node& o) {
    if (auto g = o.input_grad(0); !g.empty()) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * mask[i];
    }
  });
}

const std::vector<std::string>& differentiable_op_names() {
  static const std::vector<std::string> names = {
      "matmul",       "linear",       "add",          "sub",           "mul",
      "scale",        "relu",         "concat",       "reshape",       "transpose",
      "sum",          "mean",         "softmax_cols", "softmax_rows",  "l1_normalize_rows",
      "max_pool_axis", "gather_rows", "expand_rows",  "batchnorm",     "cross_entropy",
      "dropout",      "interpolate_up"};
  return names;
}

}  // namespace ctcloud
