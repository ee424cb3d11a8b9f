#include "fellrec/attack.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "fellrec/errors.hpp"
#include "fellrec/rng.hpp"

namespace fellrec {

namespace {

// Gaussian elimination with partial pivoting; solves A X = B for square A.
Matrix solve_linear_system(Matrix a, Matrix b) {
  const std::size_t n = a.rows;
  if (a.cols != n || b.rows != n) throw ContractViolation("solve_linear_system: shape mismatch");
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t row = col + 1; row < n; ++row) {
      if (std::abs(a.at(row, col)) > std::abs(a.at(pivot, col))) pivot = row;
    }
    if (a.at(pivot, col) == 0.0) throw NumericError("solve_linear_system: singular matrix");
    if (pivot != col) {
      for (std::size_t j = 0; j < n; ++j) std::swap(a.at(pivot, j), a.at(col, j));
      for (std::size_t j = 0; j < b.cols; ++j) std::swap(b.at(pivot, j), b.at(col, j));
    }
    const double inv = 1.0 / a.at(col, col);
    for (std::size_t row = col + 1; row < n; ++row) {
      const double factor = a.at(row, col) * inv;
      if (factor == 0.0) continue;
      for (std::size_t j = col; j < n; ++j) a.at(row, j) -= factor * a.at(col, j);
      for (std::size_t j = 0; j < b.cols; ++j) b.at(row, j) -= factor * b.at(col, j);
    }
  }
  Matrix x(n, b.cols);
  for (std::size_t row = n; row-- > 0;) {
    for (std::size_t j = 0; j < b.cols; ++j) {
      double acc = b.at(row, j);
      for (std::size_t col = row + 1; col < n; ++col) acc -= a.at(row, col) * x.at(col, j);
      x.at(row, j) = acc / a.at(row, row);
    }
  }
  return x;
}

std::vector<double> pool_rows(const Matrix& m) {
  std::vector<double> out(m.cols, 0.0);
  for (std::size_t i = 0; i < m.rows; ++i) {
    for (std::size_t j = 0; j < m.cols; ++j) out[j] += m.at(i, j);
  }
  for (double& v : out) v /= static_cast<double>(m.rows);
  return out;
}

// One forward pass; returns the pooled per-layer outputs plus the pooled
// embedding-lookup output (the reconstruction target).
void forward_pooled(const LayeredModel& model, const HistorySequence& h,
                    std::vector<std::vector<double>>& per_layer, std::vector<double>& input) {
  ActivationTape tape;
  Matrix current = encode_history(h, model);
  per_layer.clear();
  for (int layer = 1; layer <= model.config.num_layers; ++layer) {
    current = layer_forward(layer, current, model, tape);
    per_layer.push_back(pool_rows(current));
  }
  input = pool_rows(tape.embedded_input);
}

double safe_cosine(const std::vector<double>& a, const std::vector<double>& b) {
  const double na = l2_norm(a);
  const double nb = l2_norm(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot(a, b) / (na * nb);
}

Probe train_linear_probe(const ProbePairs& pairs) {
  const std::size_t n = pairs.intermediates.size();
  const std::size_t d_in = pairs.intermediates[0].size();
  const std::size_t d_out = pairs.inputs[0].size();

  // Warn on degenerate (constant) inputs; the ridge term keeps the system
  // solvable and the fit collapses to a constant map.
  double max_variance = 0.0;
  for (std::size_t j = 0; j < d_in; ++j) {
    double mean = 0.0;
    for (const auto& row : pairs.intermediates) mean += row[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (const auto& row : pairs.intermediates) var += (row[j] - mean) * (row[j] - mean);
    max_variance = std::max(max_variance, var / static_cast<double>(n));
  }
  if (max_variance < 1e-12) {
    log_warning("train_probe: degenerate inputs, linear probe fits a constant map");
  }

  const std::size_t aug = d_in + 1;
  Matrix gram(aug, aug);
  Matrix moment(aug, d_out);
  for (std::size_t s = 0; s < n; ++s) {
    std::vector<double> x(pairs.intermediates[s]);
    x.push_back(1.0);
    for (std::size_t i = 0; i < aug; ++i) {
      for (std::size_t j = 0; j < aug; ++j) gram.at(i, j) += x[i] * x[j];
      for (std::size_t j = 0; j < d_out; ++j) moment.at(i, j) += x[i] * pairs.inputs[s][j];
    }
  }
  for (std::size_t i = 0; i < aug; ++i) gram.at(i, i) += 1e-8;

  Probe probe;
  probe.kind = ProbeConfig::Kind::linear;
  probe.linear_map = solve_linear_system(std::move(gram), std::move(moment));
  return probe;
}

Probe train_mlp_probe(const ProbePairs& pairs, const ProbeConfig& cfg) {
  const std::size_t n = pairs.intermediates.size();
  const std::size_t d_in = pairs.intermediates[0].size();
  const std::size_t d_out = pairs.inputs[0].size();
  const std::size_t hidden = static_cast<std::size_t>(cfg.hidden_dim);

  Rng rng(cfg.seed);
  Probe probe;
  probe.kind = ProbeConfig::Kind::mlp;
  probe.w1 = Matrix(d_in, hidden);
  for (double& v : probe.w1.data) v = rng.uniform(-1.0, 1.0) / std::sqrt(static_cast<double>(d_in));
  probe.b1 = Matrix(1, hidden);
  probe.w2 = Matrix(hidden, d_out);
  for (double& v : probe.w2.data) {
    v = rng.uniform(-1.0, 1.0) / std::sqrt(static_cast<double>(hidden));
  }
  probe.b2 = Matrix(1, d_out);

  Matrix x(n, d_in), y(n, d_out);
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t j = 0; j < d_in; ++j) x.at(s, j) = pairs.intermediates[s][j];
    for (std::size_t j = 0; j < d_out; ++j) y.at(s, j) = pairs.inputs[s][j];
  }

  const double grad_scale = 2.0 / static_cast<double>(n * d_out);
  for (int step = 0; step < cfg.train_steps; ++step) {
    Matrix z = matmul(x, probe.w1);
    for (std::size_t i = 0; i < z.rows; ++i) {
      for (std::size_t j = 0; j < z.cols; ++j) z.at(i, j) += probe.b1.at(0, j);
    }
    Matrix h = z;
    for (double& v : h.data) v = v > 0.0 ? v : 0.0;
    Matrix pred = matmul(h, probe.w2);
    for (std::size_t i = 0; i < pred.rows; ++i) {
      for (std::size_t j = 0; j < pred.cols; ++j) pred.at(i, j) += probe.b2.at(0, j);
    }

    Matrix d_pred(n, d_out);
    for (std::size_t i = 0; i < d_pred.data.size(); ++i) {
      d_pred.data[i] = grad_scale * (pred.data[i] - y.data[i]);
    }
    Matrix d_w2 = matmul_tn(h, d_pred);
    Matrix d_b2(1, d_out);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < d_out; ++j) d_b2.at(0, j) += d_pred.at(i, j);
    }
    Matrix d_h = matmul_nt(d_pred, probe.w2);
    for (std::size_t i = 0; i < d_h.data.size(); ++i) {
      if (z.data[i] <= 0.0) d_h.data[i] = 0.0;
    }
    Matrix d_w1 = matmul_tn(x, d_h);
    Matrix d_b1(1, hidden);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < hidden; ++j) d_b1.at(0, j) += d_h.at(i, j);
    }

    axpy_inplace(probe.w1, -cfg.lr, d_w1);
    axpy_inplace(probe.b1, -cfg.lr, d_b1);
    axpy_inplace(probe.w2, -cfg.lr, d_w2);
    axpy_inplace(probe.b2, -cfg.lr, d_b2);
  }
  return probe;
}

}  // namespace

ProbeConfig::Kind parse_probe_kind(const std::string& name) {
  if (name == "linear") return ProbeConfig::Kind::linear;
  if (name == "mlp") return ProbeConfig::Kind::mlp;
  throw ConfigError("unknown probe kind: " + name);
}

const char* to_string(ProbeConfig::Kind kind) {
  return kind == ProbeConfig::Kind::linear ? "linear" : "mlp";
}

ProbePairs collect_intermediates(const LayeredModel& model,
                                 const std::vector<HistorySequence>& sample, int layer_index) {
  if (layer_index < 1 || layer_index > model.config.num_layers) {
    throw ContractViolation("collect_intermediates: layer index out of range");
  }
  ProbePairs pairs;
  std::vector<std::vector<double>> per_layer;
  std::vector<double> input;
  for (const HistorySequence& h : sample) {
    forward_pooled(model, h, per_layer, input);
    pairs.intermediates.push_back(per_layer[static_cast<std::size_t>(layer_index - 1)]);
    pairs.inputs.push_back(input);
  }
  return pairs;
}

std::vector<double> Probe::predict(const std::vector<double>& x) const {
  if (kind == ProbeConfig::Kind::linear) {
    const std::size_t d_in = linear_map.rows - 1;
    if (x.size() != d_in) throw ContractViolation("Probe::predict: input length mismatch");
    std::vector<double> out(linear_map.cols, 0.0);
    for (std::size_t j = 0; j < linear_map.cols; ++j) {
      double acc = linear_map.at(d_in, j);  // bias row
      for (std::size_t i = 0; i < d_in; ++i) acc += x[i] * linear_map.at(i, j);
      out[j] = acc;
    }
    return out;
  }
  if (x.size() != w1.rows) throw ContractViolation("Probe::predict: input length mismatch");
  std::vector<double> hidden(w1.cols, 0.0);
  for (std::size_t j = 0; j < w1.cols; ++j) {
    double acc = b1.at(0, j);
    for (std::size_t i = 0; i < w1.rows; ++i) acc += x[i] * w1.at(i, j);
    hidden[j] = acc > 0.0 ? acc : 0.0;
  }
  std::vector<double> out(w2.cols, 0.0);
  for (std::size_t j = 0; j < w2.cols; ++j) {
    double acc = b2.at(0, j);
    for (std::size_t i = 0; i < w2.rows; ++i) acc += hidden[i] * w2.at(i, j);
    out[j] = acc;
  }
  return out;
}

Probe train_probe(const ProbePairs& pairs, const ProbeConfig& cfg) {
  if (pairs.intermediates.size() < 2) throw ContractViolation("train_probe: needs >= 2 pairs");
  if (pairs.intermediates.size() != pairs.inputs.size()) {
    throw ContractViolation("train_probe: pair count mismatch");
  }
  if (cfg.kind == ProbeConfig::Kind::linear) return train_linear_probe(pairs);
  if (cfg.hidden_dim < 1 || cfg.train_steps < 1 || cfg.lr <= 0.0) {
    throw ContractViolation("train_probe: invalid mlp configuration");
  }
  return train_mlp_probe(pairs, cfg);
}

double mean_cosine_similarity(const Probe& probe, const std::vector<std::vector<double>>& inputs,
                              const std::vector<std::vector<double>>& targets) {
  if (inputs.empty() || inputs.size() != targets.size()) {
    throw ContractViolation("mean_cosine_similarity: bad evaluation set");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    acc += safe_cosine(probe.predict(inputs[i]), targets[i]);
  }
  return acc / static_cast<double>(inputs.size());
}

ProbeReport probe_sweep(const LayeredModel& model, const std::vector<HistorySequence>& sample,
                        const ProbeConfig& cfg) {
  if (sample.size() < 5) throw ContractViolation("probe_sweep: needs >= 5 sequences");
  if (cfg.holdout_fraction <= 0.0 || cfg.holdout_fraction >= 1.0) {
    throw ContractViolation("probe_sweep: holdout_fraction must lie in (0, 1)");
  }

  const int n_layers = model.config.num_layers;
  std::vector<ProbePairs> per_layer(static_cast<std::size_t>(n_layers));
  std::vector<std::vector<double>> layer_outputs;
  std::vector<double> input;
  for (const HistorySequence& h : sample) {
    forward_pooled(model, h, layer_outputs, input);
    for (int layer = 0; layer < n_layers; ++layer) {
      per_layer[static_cast<std::size_t>(layer)].intermediates.push_back(
          layer_outputs[static_cast<std::size_t>(layer)]);
      per_layer[static_cast<std::size_t>(layer)].inputs.push_back(input);
    }
  }

  // Seeded split shared by every layer: first slice held out, rest trains.
  Rng rng(cfg.seed);
  const std::vector<std::size_t> perm = rng.permutation(sample.size());
  std::size_t holdout = static_cast<std::size_t>(
      std::llround(cfg.holdout_fraction * static_cast<double>(sample.size())));
  holdout = std::max<std::size_t>(1, std::min(holdout, sample.size() - 2));

  ProbeReport report;
  report.kind = cfg.kind;
  for (int layer = 0; layer < n_layers; ++layer) {
    const ProbePairs& all = per_layer[static_cast<std::size_t>(layer)];
    ProbePairs train;
    std::vector<std::vector<double>> eval_x, eval_y;
    for (std::size_t i = 0; i < perm.size(); ++i) {
      if (i < holdout) {
        eval_x.push_back(all.intermediates[perm[i]]);
        eval_y.push_back(all.inputs[perm[i]]);
      } else {
        train.intermediates.push_back(all.intermediates[perm[i]]);
        train.inputs.push_back(all.inputs[perm[i]]);
      }
    }
    const Probe probe = train_probe(train, cfg);
    report.similarity.push_back(mean_cosine_similarity(probe, eval_x, eval_y));
  }
  return report;
}

void write_probe_reports_csv(const std::string& path, const std::vector<ProbeReport>& reports) {
  std::ofstream out(path);
  if (!out) throw IoError("write_probe_reports_csv: cannot write " + path);
  out << "layer,similarity,kind\n";
  for (const ProbeReport& report : reports) {
    for (std::size_t layer = 0; layer < report.similarity.size(); ++layer) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%.10g", report.similarity[layer]);
      out << (layer + 1) << "," << buf << "," << to_string(report.kind) << "\n";
    }
  }
}

}  // namespace fellrec
