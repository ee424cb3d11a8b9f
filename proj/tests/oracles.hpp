// Straight-line scalar re-implementations used as independent oracles.
// Everything here works on plain vectors with explicit loops and stays
// deliberately separate from the library's Matrix code paths.
#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "fellrec/model.hpp"

namespace oracle {

using Rows = std::vector<std::vector<double>>;  // sequence of d-dim rows

inline std::vector<double> layer_norm_row(const std::vector<double>& x,
                                          const std::vector<double>& g,
                                          const std::vector<double>& b) {
  const std::size_t d = x.size();
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(d);
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(d);
  const double inv_std = 1.0 / std::sqrt(var + 1e-5);
  std::vector<double> out(d);
  for (std::size_t j = 0; j < d; ++j) out[j] = g[j] * ((x[j] - mean) * inv_std) + b[j];
  return out;
}

inline std::vector<double> get_row(const fellrec::Matrix& m, std::size_t r) {
  std::vector<double> out(m.cols);
  for (std::size_t j = 0; j < m.cols; ++j) out[j] = m.at(r, j);
  return out;
}

// One pre-norm block evaluated with scalar loops.
inline Rows block_forward(const fellrec::LayerParams& lp, const Rows& x, std::size_t d,
                          std::size_t f) {
  const std::size_t len = x.size();
  const auto& wq = lp.frozen.at("wq");
  const auto& wk = lp.frozen.at("wk");
  const auto& wv = lp.frozen.at("wv");
  const auto& wo = lp.frozen.at("wo");
  const auto& w1 = lp.frozen.at("w1");
  const auto& w2 = lp.frozen.at("w2");
  const auto& bq = lp.frozen.at("bq");
  const auto& bk = lp.frozen.at("bk");
  const auto& bv = lp.frozen.at("bv");
  const auto& bo = lp.frozen.at("bo");
  const auto& b1 = lp.frozen.at("b1");
  const auto& b2 = lp.frozen.at("b2");
  const auto& ln1_g = get_row(lp.frozen.at("ln1_g"), 0);
  const auto& ln1_b = get_row(lp.frozen.at("ln1_b"), 0);
  const auto& ln2_g = get_row(lp.frozen.at("ln2_g"), 0);
  const auto& ln2_b = get_row(lp.frozen.at("ln2_b"), 0);
  const auto& aq = lp.adapters.at("q");
  const auto& av = lp.adapters.at("v");
  const std::size_t r = aq.rank();

  Rows a(len), q(len, std::vector<double>(d, 0.0)), k = q, v = q;
  for (std::size_t i = 0; i < len; ++i) a[i] = layer_norm_row(x[i], ln1_g, ln1_b);

  for (std::size_t i = 0; i < len; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      double sq = bq.at(0, j), sk = bk.at(0, j), sv = bv.at(0, j);
      for (std::size_t l = 0; l < d; ++l) {
        sq += a[i][l] * wq.at(l, j);
        sk += a[i][l] * wk.at(l, j);
        sv += a[i][l] * wv.at(l, j);
      }
      q[i][j] = sq;
      k[i][j] = sk;
      v[i][j] = sv;
    }
    // LoRA deltas on q and v.
    std::vector<double> aq_down(r, 0.0), av_down(r, 0.0);
    for (std::size_t t = 0; t < r; ++t) {
      for (std::size_t l = 0; l < d; ++l) {
        aq_down[t] += a[i][l] * aq.down.at(l, t);
        av_down[t] += a[i][l] * av.down.at(l, t);
      }
    }
    for (std::size_t j = 0; j < d; ++j) {
      double dq = 0.0, dv = 0.0;
      for (std::size_t t = 0; t < r; ++t) {
        dq += aq_down[t] * aq.up.at(t, j);
        dv += av_down[t] * av.up.at(t, j);
      }
      q[i][j] += aq.scale * dq;
      v[i][j] += av.scale * dv;
    }
  }

  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  Rows h1(len, std::vector<double>(d, 0.0));
  for (std::size_t i = 0; i < len; ++i) {
    std::vector<double> scores(len);
    double row_max = -1e300;
    for (std::size_t jj = 0; jj < len; ++jj) {
      double s = 0.0;
      for (std::size_t l = 0; l < d; ++l) s += q[i][l] * k[jj][l];
      scores[jj] = s * inv_sqrt_d;
      row_max = std::max(row_max, scores[jj]);
    }
    double total = 0.0;
    for (std::size_t jj = 0; jj < len; ++jj) {
      scores[jj] = std::exp(scores[jj] - row_max);
      total += scores[jj];
    }
    std::vector<double> ctx(d, 0.0);
    for (std::size_t jj = 0; jj < len; ++jj) {
      const double w = scores[jj] / total;
      for (std::size_t l = 0; l < d; ++l) ctx[l] += w * v[jj][l];
    }
    for (std::size_t j = 0; j < d; ++j) {
      double s = bo.at(0, j);
      for (std::size_t l = 0; l < d; ++l) s += ctx[l] * wo.at(l, j);
      h1[i][j] = x[i][j] + s;
    }
  }

  Rows out(len, std::vector<double>(d, 0.0));
  for (std::size_t i = 0; i < len; ++i) {
    const std::vector<double> m = layer_norm_row(h1[i], ln2_g, ln2_b);
    std::vector<double> hidden(f, 0.0);
    for (std::size_t t = 0; t < f; ++t) {
      double s = b1.at(0, t);
      for (std::size_t l = 0; l < d; ++l) s += m[l] * w1.at(l, t);
      hidden[t] = s > 0.0 ? s : 0.0;
    }
    for (std::size_t j = 0; j < d; ++j) {
      double s = b2.at(0, j);
      for (std::size_t t = 0; t < f; ++t) s += hidden[t] * w2.at(t, j);
      out[i][j] = h1[i][j] + s;
    }
  }
  return out;
}

// Full forward: embedding lookup, every block, mean pool, output head.
inline std::vector<double> model_forward(const fellrec::LayeredModel& model,
                                         const std::vector<int>& item_ids) {
  const std::size_t d = static_cast<std::size_t>(model.config.hidden_dim);
  const std::size_t f = static_cast<std::size_t>(model.config.effective_ffn_dim());
  const int n = model.config.num_layers;

  const std::size_t max_len = static_cast<std::size_t>(model.config.max_len);
  const std::size_t start = item_ids.size() > max_len ? item_ids.size() - max_len : 0;
  const auto& table = model.layers[0].frozen.at("embedding");
  Rows x;
  for (std::size_t i = start; i < item_ids.size(); ++i) {
    x.push_back(get_row(table, static_cast<std::size_t>(item_ids[i])));
  }

  for (int layer = 1; layer <= n; ++layer) {
    x = block_forward(model.layers[static_cast<std::size_t>(layer - 1)], x, d, f);
  }

  std::vector<double> pooled(d, 0.0);
  for (const auto& row : x) {
    for (std::size_t j = 0; j < d; ++j) pooled[j] += row[j];
  }
  for (std::size_t j = 0; j < d; ++j) pooled[j] /= static_cast<double>(x.size());

  const auto& head_w = model.layers[static_cast<std::size_t>(n - 1)].frozen.at("head_w");
  const auto& head_b = model.layers[static_cast<std::size_t>(n - 1)].frozen.at("head_b");
  std::vector<double> out(d, 0.0);
  for (std::size_t j = 0; j < d; ++j) {
    double s = head_b.at(0, j);
    for (std::size_t l = 0; l < d; ++l) s += pooled[l] * head_w.at(l, j);
    out[j] = s;
  }
  return out;
}

}  // namespace oracle
