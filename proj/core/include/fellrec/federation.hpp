#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fellrec/model.hpp"
#include "fellrec/split.hpp"

namespace fellrec {

// Warm-up factors of the curriculum-heating coefficient: alpha controls the
// overall pace, beta the temporal decay of the damping.
struct WarmupConfig {
  double alpha = 0.9;
  double beta = 5.0;
};

struct ClientState {
  int client_id = 0;
  std::vector<std::pair<HistorySequence, int>> dataset;  // (history, next item)
  LayeredModel model;
  double accum_loss = 0.0;  // per-epoch accumulated local loss
  int epoch = 0;
  int local_rounds = 2;
  std::vector<double> prox_reference;  // last broadcast global vector (fedprox)
};

struct AggregationWeights {
  Matrix s;               // pairwise cosine similarities, unit diagonal
  std::vector<double> w;  // per-client warm-up coefficients
  Matrix d;               // final weights: d[c][c]=1, d[c][c']=w_c*max(s,0)
};

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b);

// w_c = tanh(alpha / softmax(losses)_c^(t/beta)). Softmax uses
// max-subtraction; an underflowing denominator saturates at tanh's limit 1.
double warmup_coefficient(const std::vector<double>& losses, std::size_t client, double t,
                          const WarmupConfig& cfg);

AggregationWeights build_aggregation_weights(const std::vector<std::vector<double>>& adapters,
                                             const std::vector<double>& losses, double t,
                                             const WarmupConfig& cfg);

// Per-client weighted average with normalized rows of `weights.d`. Written in
// delta form around each client's own vector, so consensus inputs and
// zero cross-weights reproduce the input exactly.
std::vector<std::vector<double>> fellrec_aggregate(
    const std::vector<std::vector<double>>& adapters, const AggregationWeights& weights);

// Dataset-size weighted global average, broadcast to every client.
std::vector<double> fedavg_aggregate(const std::vector<std::vector<double>>& params,
                                     const std::vector<std::size_t>& sizes);

enum class Method { fellrec, fedavg, fedprox, local_only, centralized };
Method parse_method(const std::string& name);
const char* to_string(Method method);

struct LocalTrainOptions {
  int rounds = 2;
  double learning_rate = 0.01;
  double prox_mu = 0.0;  // > 0 adds mu*(local - prox_reference) to the gradient
  std::optional<SplitPlan> plan;
  double embedding_units = 1.0;
  std::vector<LoggedExchange>* exchange_log = nullptr;
  int log_round = 0;
};

// R rounds of full-batch SGD on the client's dataset; each round refreshes
// the item-embedding cache, accumulates the mean adapter gradient, applies
// one step, and adds the round's summed loss to accum_loss.
void local_train(ClientState& client, const LocalTrainOptions& opts);

// One local step with the FedProx proximal pull toward `global_params`.
void fedprox_local_step(ClientState& client, const std::vector<double>& global_params, double mu,
                        double learning_rate, const std::optional<SplitPlan>& plan = {});

struct EpochRecord {
  int epoch = 0;
  std::vector<double> losses;
  std::vector<double> w;  // fellrec only
  Matrix d;               // fellrec only
  std::vector<double> eval;  // per-client metric when an eval hook is set
};

struct TrainingHistory {
  Method method = Method::fellrec;
  std::vector<EpochRecord> epochs;
};

struct TrainOptions {
  Method method = Method::fellrec;
  int epochs = 30;
  int local_rounds = 2;
  double learning_rate = 0.01;
  double prox_mu = 0.1;
  WarmupConfig warmup;
  std::optional<SplitPlan> plan;  // monolithic execution when absent
  double embedding_units = 1.0;
  std::vector<LoggedExchange>* exchange_log = nullptr;
  std::function<std::vector<double>(const std::vector<ClientState>&)> eval_hook;
};

// One run of the training loop: per epoch, reset losses, train every client
// locally, then aggregate according to the method. Centralized training
// merges all datasets into one logical client and copies the result back.
TrainingHistory run_training(std::vector<ClientState>& clients, const TrainOptions& opts);

// Checkpoints: adapter vectors per client plus the model config (the frozen
// weights are reproducible from config.seed). JSON container, version field.
void save_checkpoints(const std::string& path, const std::vector<ClientState>& clients);
std::vector<ClientState> load_checkpoints(const std::string& path);

void save_history(const std::string& path, const TrainingHistory& history);

}  // namespace fellrec
