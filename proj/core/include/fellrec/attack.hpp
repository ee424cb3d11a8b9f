#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fellrec/matrix.hpp"
#include "fellrec/model.hpp"

namespace fellrec {

// White-box probe regressors that try to reconstruct the input embedding
// (the pooled embedding-lookup output) from a layer's intermediate output.
struct ProbeConfig {
  enum class Kind { linear, mlp };
  Kind kind = Kind::linear;
  int hidden_dim = 32;     // mlp only
  int train_steps = 2000;  // mlp only; the linear probe solves normal equations
  double lr = 0.05;        // mlp only
  std::uint64_t seed = 0;
  double holdout_fraction = 0.2;
};

ProbeConfig::Kind parse_probe_kind(const std::string& name);
const char* to_string(ProbeConfig::Kind kind);

struct ProbePairs {
  std::vector<std::vector<double>> intermediates;  // layer output, pooled
  std::vector<std::vector<double>> inputs;         // embedding-lookup output, pooled
};

// Runs the model over the sample and collects (intermediate, input) pairs
// for one layer. Both sides are mean-pooled over sequence positions.
ProbePairs collect_intermediates(const LayeredModel& model,
                                 const std::vector<HistorySequence>& sample, int layer_index);

struct Probe {
  ProbeConfig::Kind kind = ProbeConfig::Kind::linear;
  Matrix linear_map;  // (d_in + 1) x d_out, last row is the bias
  Matrix w1, b1, w2, b2;  // mlp parameters

  std::vector<double> predict(const std::vector<double>& x) const;
};

// linear: ridge-regularized least squares via normal equations.
// mlp: one hidden ReLU layer trained with full-batch gradient descent.
Probe train_probe(const ProbePairs& pairs, const ProbeConfig& cfg);

struct ProbeReport {
  ProbeConfig::Kind kind = ProbeConfig::Kind::linear;
  std::vector<double> similarity;  // per layer 1..N, held-out mean cosine
};

// Trains a probe per layer on a seeded 80/20 train/holdout split of the
// pairs and reports held-out reconstruction similarity for each layer.
ProbeReport probe_sweep(const LayeredModel& model, const std::vector<HistorySequence>& sample,
                        const ProbeConfig& cfg);

// CSV rows: layer,similarity,kind
void write_probe_reports_csv(const std::string& path, const std::vector<ProbeReport>& reports);

// Mean cosine similarity between predictions and targets (0 for zero norms).
double mean_cosine_similarity(const Probe& probe,
                              const std::vector<std::vector<double>>& inputs,
                              const std::vector<std::vector<double>>& targets);

}  // namespace fellrec
