#include "ctcloud/attention.hpp"

#include <cmath>

#include "ctcloud/errors.hpp"

namespace ctcloud {

OAConfig OAConfig::with_embedding(std::size_t d_e, std::size_t d_a) {
  OAConfig cfg;
  cfg.d_e = d_e;
  cfg.d_a = d_a != 0 ? d_a : std::max<std::size_t>(1, d_e / 4);
  cfg.validate();
  return cfg;
}

void OAConfig::validate() const {
  if (d_e < 1 || d_a < 1) throw ConfigError("offset attention: d_e and d_a must be positive");
}

OAWeights OAWeights::create(ParameterSet& params, const std::string& name, const OAConfig& cfg,
                            Rng& rng) {
  cfg.validate();
  OAWeights w;
  w.w_q = Linear::create(params, name + ".q", cfg.d_e, cfg.d_a, rng, false).weight;
  w.w_k = Linear::create(params, name + ".k", cfg.d_e, cfg.d_a, rng, false).weight;
  w.w_v = Linear::create(params, name + ".v", cfg.d_e, cfg.d_e, rng, false).weight;
  w.lbr_linear = Linear::create(params, name + ".lbr", cfg.d_e, cfg.d_e, rng);
  w.lbr_norm = BatchNorm::create(params, name + ".lbr.bn", cfg.d_e);
  return w;
}

QKV project_qkv(const Tensor& f_in, const OAWeights& w) {
  if (f_in.rank() != 2 || f_in.dim(1) != w.embedding()) {
    throw DimensionError("offset attention: input " + shape_str(f_in.shape()) +
                         " does not match embedding width " + std::to_string(w.embedding()));
  }
  return {matmul(f_in, w.w_q), matmul(f_in, w.w_k), matmul(f_in, w.w_v)};
}

Tensor attention_matrix(const Tensor& q, const Tensor& k) {
  if (q.shape() != k.shape()) {
    throw DimensionError("attention_matrix: query " + shape_str(q.shape()) + " and key " +
                         shape_str(k.shape()) + " differ");
  }
  return l1_normalize_rows(softmax_cols(matmul(q, transpose(k))));
}

Tensor offset_attention(const Tensor& f_in, OAWeights& w, Mode mode, std::size_t batch) {
  const QKV qkv = project_qkv(f_in, w);
  Tensor f_a;
  if (batch == 1) {
    f_a = matmul(attention_matrix(qkv.q, qkv.k), qkv.v);
  } else {
    // Attention stays within each cloud; the LBR normalizes over all rows.
    if (batch == 0 || f_in.dim(0) % batch != 0) {
      throw DimensionError("offset attention: " + std::to_string(f_in.dim(0)) + " rows are not " +
                           std::to_string(batch) + " equal clouds");
    }
    const std::size_t n = f_in.dim(0) / batch;
    std::vector<Tensor> parts;
    std::vector<std::size_t> rows(n);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t i = 0; i < n; ++i) rows[i] = b * n + i;
      parts.push_back(matmul(attention_matrix(gather_rows(qkv.q, rows), gather_rows(qkv.k, rows)),
                             gather_rows(qkv.v, rows)));
    }
    f_a = concat(parts, 0);
  }
  const Tensor lbr = relu(w.lbr_norm(w.lbr_linear(sub(f_a, f_in)), mode));
  return add(lbr, f_in);
}

}  // namespace ctcloud
