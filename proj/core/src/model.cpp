#include "fellrec/model.hpp"

#include <cmath>
#include <cstring>
#include <string>

#include "fellrec/errors.hpp"
#include "fellrec/rng.hpp"

namespace fellrec {

namespace {

constexpr double kLayerNormEps = 1e-5;

Matrix uniform_matrix(Rng& rng, std::size_t rows, std::size_t cols, double bound) {
  Matrix m(rows, cols);
  for (double& v : m.data) v = rng.uniform(-bound, bound);
  return m;
}

void add_row_bias(Matrix& m, const Matrix& bias) {
  for (std::size_t i = 0; i < m.rows; ++i) {
    for (std::size_t j = 0; j < m.cols; ++j) {
      m.at(i, j) += bias.at(0, j);
    }
  }
}

// y = g .* (x - mean) / sqrt(var + eps) + b, per row.
Matrix layer_norm_forward(const Matrix& x, const Matrix& gain, const Matrix& bias,
                          Matrix& xhat_out, std::vector<double>& inv_std_out) {
  const std::size_t d = x.cols;
  Matrix y(x.rows, d);
  xhat_out = Matrix(x.rows, d);
  inv_std_out.assign(x.rows, 0.0);
  for (std::size_t i = 0; i < x.rows; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += x.at(i, j);
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = x.at(i, j) - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double inv_std = 1.0 / std::sqrt(var + kLayerNormEps);
    inv_std_out[i] = inv_std;
    for (std::size_t j = 0; j < d; ++j) {
      const double xh = (x.at(i, j) - mean) * inv_std;
      xhat_out.at(i, j) = xh;
      y.at(i, j) = gain.at(0, j) * xh + bias.at(0, j);
    }
  }
  return y;
}

Matrix layer_norm_backward(const Matrix& dy, const Matrix& gain, const Matrix& xhat,
                           const std::vector<double>& inv_std) {
  const std::size_t d = dy.cols;
  Matrix dx(dy.rows, d);
  for (std::size_t i = 0; i < dy.rows; ++i) {
    double sum_dxhat = 0.0;
    double sum_dxhat_xhat = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double dxh = dy.at(i, j) * gain.at(0, j);
      sum_dxhat += dxh;
      sum_dxhat_xhat += dxh * xhat.at(i, j);
    }
    const double inv_d = 1.0 / static_cast<double>(d);
    for (std::size_t j = 0; j < d; ++j) {
      const double dxh = dy.at(i, j) * gain.at(0, j);
      dx.at(i, j) = inv_std[i] * (dxh - sum_dxhat * inv_d - xhat.at(i, j) * sum_dxhat_xhat * inv_d);
    }
  }
  return dx;
}

void softmax_rows_inplace(Matrix& m) {
  for (std::size_t i = 0; i < m.rows; ++i) {
    double row_max = m.at(i, 0);
    for (std::size_t j = 1; j < m.cols; ++j) row_max = std::max(row_max, m.at(i, j));
    double total = 0.0;
    for (std::size_t j = 0; j < m.cols; ++j) {
      const double e = std::exp(m.at(i, j) - row_max);
      m.at(i, j) = e;
      total += e;
    }
    for (std::size_t j = 0; j < m.cols; ++j) m.at(i, j) /= total;
  }
}

const Matrix& frozen(const LayerParams& lp, const std::string& name) {
  const auto it = lp.frozen.find(name);
  if (it == lp.frozen.end()) throw ContractViolation("missing frozen parameter " + name);
  return it->second;
}

// Pre-norm transformer block: x + Attn(LN1(x)), then + FFN(LN2(.)).
Matrix block_forward(const LayerParams& lp, const Matrix& x, const ModelConfig& cfg,
                     LayerTape& t) {
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(cfg.hidden_dim));
  t.input = x;
  t.ln1_out = layer_norm_forward(x, frozen(lp, "ln1_g"), frozen(lp, "ln1_b"), t.ln1_xhat,
                                 t.ln1_inv_std);

  t.q = matmul(t.ln1_out, frozen(lp, "wq"));
  add_row_bias(t.q, frozen(lp, "bq"));
  t.k = matmul(t.ln1_out, frozen(lp, "wk"));
  add_row_bias(t.k, frozen(lp, "bk"));
  t.v = matmul(t.ln1_out, frozen(lp, "wv"));
  add_row_bias(t.v, frozen(lp, "bv"));

  const LoraAdapter& aq = lp.adapters.at("q");
  t.q_down_act = matmul(t.ln1_out, aq.down);
  Matrix q_delta = matmul(t.q_down_act, aq.up);
  scale_inplace(q_delta, aq.scale);
  add_inplace(t.q, q_delta);

  const LoraAdapter& av = lp.adapters.at("v");
  t.v_down_act = matmul(t.ln1_out, av.down);
  Matrix v_delta = matmul(t.v_down_act, av.up);
  scale_inplace(v_delta, av.scale);
  add_inplace(t.v, v_delta);

  t.attn = matmul_nt(t.q, t.k);
  scale_inplace(t.attn, inv_sqrt_d);
  softmax_rows_inplace(t.attn);

  Matrix attn_out = matmul(matmul(t.attn, t.v), frozen(lp, "wo"));
  add_row_bias(attn_out, frozen(lp, "bo"));

  t.h1 = x;
  add_inplace(t.h1, attn_out);

  t.ln2_out = layer_norm_forward(t.h1, frozen(lp, "ln2_g"), frozen(lp, "ln2_b"), t.ln2_xhat,
                                 t.ln2_inv_std);
  t.ffn_pre = matmul(t.ln2_out, frozen(lp, "w1"));
  add_row_bias(t.ffn_pre, frozen(lp, "b1"));
  Matrix ffn_act(t.ffn_pre.rows, t.ffn_pre.cols);
  for (std::size_t i = 0; i < ffn_act.data.size(); ++i) {
    ffn_act.data[i] = t.ffn_pre.data[i] > 0.0 ? t.ffn_pre.data[i] : 0.0;
  }
  Matrix ffn_out = matmul(ffn_act, frozen(lp, "w2"));
  add_row_bias(ffn_out, frozen(lp, "b2"));

  t.block_out = t.h1;
  add_inplace(t.block_out, ffn_out);
  t.filled = true;
  return t.block_out;
}

Matrix block_backward(const LayerParams& lp, const Matrix& d_out, const ModelConfig& cfg,
                      const LayerTape& t, AdapterGrads& grads) {
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(cfg.hidden_dim));

  // FFN sublayer.
  Matrix d_h1 = d_out;  // residual branch
  Matrix d_ffn_act = matmul_nt(d_out, frozen(lp, "w2"));
  Matrix d_ffn_pre(d_ffn_act.rows, d_ffn_act.cols);
  for (std::size_t i = 0; i < d_ffn_pre.data.size(); ++i) {
    d_ffn_pre.data[i] = t.ffn_pre.data[i] > 0.0 ? d_ffn_act.data[i] : 0.0;
  }
  Matrix d_ln2_out = matmul_nt(d_ffn_pre, frozen(lp, "w1"));
  add_inplace(d_h1, layer_norm_backward(d_ln2_out, frozen(lp, "ln2_g"), t.ln2_xhat,
                                        t.ln2_inv_std));

  // Attention sublayer.
  Matrix d_x = d_h1;  // residual branch
  Matrix d_attn_ctx = matmul_nt(d_h1, frozen(lp, "wo"));
  Matrix d_attn = matmul_nt(d_attn_ctx, t.v);
  Matrix d_v = matmul_tn(t.attn, d_attn_ctx);

  // Row-softmax backward: dS_ij = A_ij * (dA_ij - sum_l dA_il A_il).
  Matrix d_scores(d_attn.rows, d_attn.cols);
  for (std::size_t i = 0; i < d_attn.rows; ++i) {
    double row_dot = 0.0;
    for (std::size_t j = 0; j < d_attn.cols; ++j) row_dot += d_attn.at(i, j) * t.attn.at(i, j);
    for (std::size_t j = 0; j < d_attn.cols; ++j) {
      d_scores.at(i, j) = t.attn.at(i, j) * (d_attn.at(i, j) - row_dot);
    }
  }

  Matrix d_q = matmul(d_scores, t.k);
  scale_inplace(d_q, inv_sqrt_d);
  Matrix d_k = matmul_tn(d_scores, t.q);
  scale_inplace(d_k, inv_sqrt_d);

  Matrix d_ln1_out = matmul_nt(d_q, frozen(lp, "wq"));
  add_inplace(d_ln1_out, matmul_nt(d_k, frozen(lp, "wk")));
  add_inplace(d_ln1_out, matmul_nt(d_v, frozen(lp, "wv")));

  const LoraAdapter& aq = lp.adapters.at("q");
  Matrix d_q_up_in = matmul_nt(d_q, aq.up);  // L x r
  LoraGrad q_grad;
  q_grad.down = matmul_tn(t.ln1_out, d_q_up_in);
  scale_inplace(q_grad.down, aq.scale);
  q_grad.up = matmul_tn(t.q_down_act, d_q);
  scale_inplace(q_grad.up, aq.scale);
  axpy_inplace(d_ln1_out, aq.scale, matmul_nt(d_q_up_in, aq.down));

  const LoraAdapter& av = lp.adapters.at("v");
  Matrix d_v_up_in = matmul_nt(d_v, av.up);
  LoraGrad v_grad;
  v_grad.down = matmul_tn(t.ln1_out, d_v_up_in);
  scale_inplace(v_grad.down, av.scale);
  v_grad.up = matmul_tn(t.v_down_act, d_v);
  scale_inplace(v_grad.up, av.scale);
  axpy_inplace(d_ln1_out, av.scale, matmul_nt(d_v_up_in, av.down));

  add_inplace(d_x, layer_norm_backward(d_ln1_out, frozen(lp, "ln1_g"), t.ln1_xhat,
                                       t.ln1_inv_std));

  grads["q"] = std::move(q_grad);
  grads["v"] = std::move(v_grad);
  return d_x;
}

}  // namespace

void ActivationTape::clear() {
  layers.clear();
  encoded_ids = Matrix();
  embedded_input = Matrix();
}

LayeredModel init_model(const ModelConfig& config) {
  if (config.num_items < 1) throw ContractViolation("init_model: num_items must be >= 1");
  if (config.num_layers < 3) throw ContractViolation("init_model: num_layers must be >= 3");
  if (config.hidden_dim < 1) throw ContractViolation("init_model: hidden_dim must be >= 1");
  if (config.lora_rank < 1 || config.lora_rank >= config.hidden_dim) {
    throw ContractViolation("init_model: lora_rank must satisfy 1 <= r < hidden_dim");
  }
  if (config.max_len < 1) throw ContractViolation("init_model: max_len must be >= 1");

  const std::size_t d = static_cast<std::size_t>(config.hidden_dim);
  const std::size_t f = static_cast<std::size_t>(config.effective_ffn_dim());
  const std::size_t r = static_cast<std::size_t>(config.lora_rank);
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));

  LayeredModel model;
  model.config = config;
  Rng rng(config.seed);

  for (int layer = 1; layer <= config.num_layers; ++layer) {
    LayerParams lp;
    if (layer == 1) {
      lp.frozen["embedding"] =
          uniform_matrix(rng, static_cast<std::size_t>(config.num_items), d, bound);
    }
    lp.frozen["wq"] = uniform_matrix(rng, d, d, bound);
    lp.frozen["wk"] = uniform_matrix(rng, d, d, bound);
    lp.frozen["wv"] = uniform_matrix(rng, d, d, bound);
    lp.frozen["wo"] = uniform_matrix(rng, d, d, bound);
    lp.frozen["w1"] = uniform_matrix(rng, d, f, bound);
    lp.frozen["w2"] = uniform_matrix(rng, f, d, bound);
    lp.frozen["bq"] = Matrix(1, d);
    lp.frozen["bk"] = Matrix(1, d);
    lp.frozen["bv"] = Matrix(1, d);
    lp.frozen["bo"] = Matrix(1, d);
    lp.frozen["b1"] = Matrix(1, f);
    lp.frozen["b2"] = Matrix(1, d);
    Matrix ones(1, d);
    for (double& v : ones.data) v = 1.0;
    lp.frozen["ln1_g"] = ones;
    lp.frozen["ln1_b"] = Matrix(1, d);
    lp.frozen["ln2_g"] = ones;
    lp.frozen["ln2_b"] = Matrix(1, d);
    if (layer == config.num_layers) {
      lp.frozen["head_w"] = uniform_matrix(rng, d, d, bound);
      lp.frozen["head_b"] = Matrix(1, d);
    }

    LoraAdapter q;
    q.down = uniform_matrix(rng, d, r, bound);
    q.up = Matrix(r, d);  // zero: fresh adapters are a no-op
    q.scale = config.lora_scale;
    LoraAdapter v;
    v.down = uniform_matrix(rng, d, r, bound);
    v.up = Matrix(r, d);
    v.scale = config.lora_scale;
    lp.adapters["q"] = std::move(q);
    lp.adapters["v"] = std::move(v);

    model.layers.push_back(std::move(lp));
  }
  return model;
}

Matrix encode_history(const HistorySequence& h, const LayeredModel& model) {
  if (h.item_ids.empty()) throw ContractViolation("encode_history: empty history");
  const std::size_t max_len = static_cast<std::size_t>(model.config.max_len);
  const std::size_t start = h.item_ids.size() > max_len ? h.item_ids.size() - max_len : 0;
  const std::size_t len = h.item_ids.size() - start;
  Matrix ids(1, len);
  for (std::size_t i = 0; i < len; ++i) {
    const int id = h.item_ids[start + i];
    if (id < 0 || id >= model.config.num_items) {
      throw NotFoundError("encode_history: item id " + std::to_string(id) + " outside catalog");
    }
    ids.at(0, i) = static_cast<double>(id);
  }
  return ids;
}

Matrix layer_forward(int layer_index, const Matrix& input, const LayeredModel& model,
                     ActivationTape& tape) {
  const int n = model.config.num_layers;
  if (layer_index < 1 || layer_index > n) {
    throw ContractViolation("layer_forward: layer index out of range");
  }
  if (tape.layers.size() != static_cast<std::size_t>(n)) {
    tape.layers.assign(static_cast<std::size_t>(n), LayerTape{});
  }
  const LayerParams& lp = model.layers[static_cast<std::size_t>(layer_index - 1)];
  LayerTape& t = tape.layers[static_cast<std::size_t>(layer_index - 1)];
  const std::size_t d = static_cast<std::size_t>(model.config.hidden_dim);

  Matrix out;
  if (layer_index == 1) {
    if (input.rows != 1 || input.cols == 0) {
      throw ContractViolation("layer_forward: layer 1 expects a 1 x L id row");
    }
    const Matrix& table = frozen(lp, "embedding");
    Matrix embedded(input.cols, d);
    for (std::size_t pos = 0; pos < input.cols; ++pos) {
      const double raw = input.at(0, pos);
      const long id = static_cast<long>(raw);
      if (static_cast<double>(id) != raw || id < 0 || id >= model.config.num_items) {
        throw ContractViolation("layer_forward: invalid item id at position " +
                                std::to_string(pos));
      }
      for (std::size_t j = 0; j < d; ++j) {
        embedded.at(pos, j) = table.at(static_cast<std::size_t>(id), j);
      }
    }
    tape.encoded_ids = input;
    tape.embedded_input = embedded;
    out = block_forward(lp, embedded, model.config, t);
  } else {
    if (input.cols != d || input.rows == 0) {
      throw ContractViolation("layer_forward: input shape incompatible with hidden_dim");
    }
    out = block_forward(lp, input, model.config, t);
    if (layer_index == n) {
      // Mean-pool positions, then the linear output head.
      Matrix pooled(1, d);
      const double inv_len = 1.0 / static_cast<double>(out.rows);
      for (std::size_t j = 0; j < d; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < out.rows; ++i) acc += out.at(i, j);
        pooled.at(0, j) = acc * inv_len;
      }
      t.pooled = pooled;
      out = matmul(pooled, frozen(lp, "head_w"));
      add_row_bias(out, frozen(lp, "head_b"));
    }
  }

  if (!all_finite(out)) {
    throw NumericError("layer_forward: non-finite output at layer " + std::to_string(layer_index));
  }
  return out;
}

LayerBackwardResult layer_backward(int layer_index, const Matrix& grad_out,
                                   const LayeredModel& model, const ActivationTape& tape) {
  const int n = model.config.num_layers;
  if (layer_index < 1 || layer_index > n) {
    throw ContractViolation("layer_backward: layer index out of range");
  }
  if (!tape.has_layer(layer_index)) {
    throw ContractViolation("layer_backward: missing tape entry for layer " +
                            std::to_string(layer_index));
  }
  const LayerParams& lp = model.layers[static_cast<std::size_t>(layer_index - 1)];
  const LayerTape& t = tape.layers[static_cast<std::size_t>(layer_index - 1)];

  Matrix d_block_out;
  if (layer_index == n) {
    if (grad_out.rows != 1 || grad_out.cols != static_cast<std::size_t>(model.config.hidden_dim)) {
      throw ContractViolation("layer_backward: layer N expects a 1 x d gradient");
    }
    Matrix d_pooled = matmul_nt(grad_out, frozen(lp, "head_w"));
    const std::size_t len = t.block_out.rows;
    const double inv_len = 1.0 / static_cast<double>(len);
    d_block_out = Matrix(len, d_pooled.cols);
    for (std::size_t i = 0; i < len; ++i) {
      for (std::size_t j = 0; j < d_pooled.cols; ++j) {
        d_block_out.at(i, j) = d_pooled.at(0, j) * inv_len;
      }
    }
  } else {
    if (grad_out.rows != t.block_out.rows || grad_out.cols != t.block_out.cols) {
      throw ContractViolation("layer_backward: gradient shape mismatch");
    }
    d_block_out = grad_out;
  }

  LayerBackwardResult result;
  result.grad_in = block_backward(lp, d_block_out, model.config, t, result.adapter_grads);
  return result;
}

ForwardResult model_forward(const HistorySequence& h, const LayeredModel& model) {
  ForwardResult result;
  Matrix current = encode_history(h, model);
  for (int layer = 1; layer <= model.config.num_layers; ++layer) {
    current = layer_forward(layer, current, model, result.tape);
  }
  result.embedding = std::move(current);
  return result;
}

ModelGrads model_backward(const Matrix& grad_embedding, const LayeredModel& model,
                          ActivationTape& tape) {
  ModelGrads grads(static_cast<std::size_t>(model.config.num_layers));
  Matrix current = grad_embedding;
  for (int layer = model.config.num_layers; layer >= 1; --layer) {
    LayerBackwardResult step = layer_backward(layer, current, model, tape);
    grads[static_cast<std::size_t>(layer - 1)] = std::move(step.adapter_grads);
    current = std::move(step.grad_in);
  }
  tape.clear();
  return grads;
}

const std::vector<std::vector<double>>& LayeredModel::item_embedding_cache() const {
  if (!cache_valid_ || cache_version_ != adapter_version_) {
    item_cache_.assign(static_cast<std::size_t>(config.num_items), {});
    for (int item = 0; item < config.num_items; ++item) {
      HistorySequence h;
      h.item_ids = {item};
      const ForwardResult fwd = model_forward(h, *this);
      item_cache_[static_cast<std::size_t>(item)] = fwd.embedding.data;
    }
    cache_version_ = adapter_version_;
    cache_valid_ = true;
  }
  return item_cache_;
}

Matrix item_embedding(int item_id, const LayeredModel& model) {
  if (item_id < 0 || item_id >= model.config.num_items) {
    throw NotFoundError("item_embedding: unknown item " + std::to_string(item_id));
  }
  const auto& cache = model.item_embedding_cache();
  Matrix out(1, cache[static_cast<std::size_t>(item_id)].size());
  out.data = cache[static_cast<std::size_t>(item_id)];
  return out;
}

LossResult recommendation_loss_with_items(const Matrix& embedding, int target,
                                          const std::vector<std::vector<double>>& items,
                                          double temperature) {
  if (embedding.rows != 1 || embedding.cols == 0) {
    throw ContractViolation("recommendation_loss: embedding must be 1 x d");
  }
  if (target < 0 || target >= static_cast<int>(items.size())) {
    throw NotFoundError("recommendation_loss: target item " + std::to_string(target) +
                        " outside catalog");
  }
  if (temperature <= 0.0) throw ContractViolation("recommendation_loss: temperature must be > 0");

  const std::size_t num_items = items.size();
  const double e_norm = l2_norm(embedding.data);
  if (e_norm == 0.0) throw NumericError("recommendation_loss: zero-norm embedding");

  std::vector<double> cosines(num_items);
  std::vector<double> item_norms(num_items);
  for (std::size_t i = 0; i < num_items; ++i) {
    item_norms[i] = l2_norm(items[i]);
    if (item_norms[i] == 0.0) {
      throw NumericError("recommendation_loss: zero-norm embedding for item " + std::to_string(i));
    }
    cosines[i] = dot(embedding.data, items[i]) / (e_norm * item_norms[i]);
  }

  double max_logit = cosines[0] / temperature;
  for (std::size_t i = 1; i < num_items; ++i) {
    max_logit = std::max(max_logit, cosines[i] / temperature);
  }
  double exp_sum = 0.0;
  std::vector<double> probs(num_items);
  for (std::size_t i = 0; i < num_items; ++i) {
    probs[i] = std::exp(cosines[i] / temperature - max_logit);
    exp_sum += probs[i];
  }
  for (double& p : probs) p /= exp_sum;

  LossResult result;
  const std::size_t tgt = static_cast<std::size_t>(target);
  result.loss = -(cosines[tgt] / temperature - max_logit - std::log(exp_sum));

  // d loss / d e with item embeddings held constant:
  //   d cos_i / d e = v_i / (|e||v_i|) - cos_i * e / |e|^2
  result.grad_embedding = Matrix(1, embedding.cols);
  const double inv_e_sq = 1.0 / (e_norm * e_norm);
  for (std::size_t i = 0; i < num_items; ++i) {
    const double d_logit = (probs[i] - (i == tgt ? 1.0 : 0.0)) / temperature;
    const double inv_cross = 1.0 / (e_norm * item_norms[i]);
    for (std::size_t j = 0; j < embedding.cols; ++j) {
      result.grad_embedding.at(0, j) +=
          d_logit * (items[i][j] * inv_cross - cosines[i] * embedding.at(0, j) * inv_e_sq);
    }
  }
  return result;
}

LossResult recommendation_loss(const Matrix& embedding, int target, const LayeredModel& model) {
  return recommendation_loss_with_items(embedding, target, model.item_embedding_cache(),
                                        model.config.temperature);
}

std::size_t adapter_vector_size(const ModelConfig& config) {
  const std::size_t per_adapter = 2 * static_cast<std::size_t>(config.hidden_dim) *
                                  static_cast<std::size_t>(config.lora_rank);
  return static_cast<std::size_t>(config.num_layers) * 2 * per_adapter;
}

std::vector<double> flatten_adapters(const LayeredModel& model) {
  std::vector<double> flat;
  flat.reserve(adapter_vector_size(model.config));
  for (const LayerParams& lp : model.layers) {
    for (const auto& [name, adapter] : lp.adapters) {
      flat.insert(flat.end(), adapter.down.data.begin(), adapter.down.data.end());
      flat.insert(flat.end(), adapter.up.data.begin(), adapter.up.data.end());
    }
  }
  return flat;
}

void unflatten_adapters(LayeredModel& model, const std::vector<double>& flat) {
  if (flat.size() != adapter_vector_size(model.config)) {
    throw ContractViolation("unflatten_adapters: vector length mismatch");
  }
  std::size_t offset = 0;
  for (LayerParams& lp : model.layers) {
    for (auto& [name, adapter] : lp.adapters) {
      std::memcpy(adapter.down.data.data(), flat.data() + offset,
                  adapter.down.data.size() * sizeof(double));
      offset += adapter.down.data.size();
      std::memcpy(adapter.up.data.data(), flat.data() + offset,
                  adapter.up.data.size() * sizeof(double));
      offset += adapter.up.data.size();
    }
  }
  model.bump_adapter_version();
}

ModelGrads zero_model_grads(const LayeredModel& model) {
  ModelGrads grads(model.layers.size());
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    for (const auto& [name, adapter] : model.layers[i].adapters) {
      LoraGrad g;
      g.down = Matrix(adapter.down.rows, adapter.down.cols);
      g.up = Matrix(adapter.up.rows, adapter.up.cols);
      grads[i][name] = std::move(g);
    }
  }
  return grads;
}

void accumulate_model_grads(ModelGrads& dst, const ModelGrads& src) {
  if (dst.size() != src.size()) throw ContractViolation("accumulate_model_grads: layer mismatch");
  for (std::size_t i = 0; i < dst.size(); ++i) {
    for (auto& [name, grad] : dst[i]) {
      const auto it = src[i].find(name);
      if (it == src[i].end()) throw ContractViolation("accumulate_model_grads: adapter mismatch");
      add_inplace(grad.down, it->second.down);
      add_inplace(grad.up, it->second.up);
    }
  }
}

void scale_model_grads(ModelGrads& grads, double factor) {
  for (auto& layer : grads) {
    for (auto& [name, grad] : layer) {
      scale_inplace(grad.down, factor);
      scale_inplace(grad.up, factor);
    }
  }
}

void apply_adapter_step(LayeredModel& model, const ModelGrads& grads, double learning_rate) {
  if (grads.size() != model.layers.size()) {
    throw ContractViolation("apply_adapter_step: layer mismatch");
  }
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    for (auto& [name, adapter] : model.layers[i].adapters) {
      const auto it = grads[i].find(name);
      if (it == grads[i].end()) throw ContractViolation("apply_adapter_step: adapter mismatch");
      axpy_inplace(adapter.down, -learning_rate, it->second.down);
      axpy_inplace(adapter.up, -learning_rate, it->second.up);
    }
  }
  model.bump_adapter_version();
}

}  // namespace fellrec
