#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fellrec/data.hpp"
#include "fellrec/eval.hpp"
#include "fellrec/federation.hpp"
#include "fellrec/split.hpp"

namespace fellrec {

// Everything a run needs, with the documented defaults. validate() rejects
// every invariant violation with a named ConfigError before any work.
struct ExperimentConfig {
  std::uint64_t seed = 0;
  int num_clients = 5;
  int num_layers = 6;
  int k = 2;
  int hidden_dim = 16;
  int lora_rank = 4;
  double lora_scale = 1.0;
  double alpha = 0.9;
  double beta = 5.0;
  int local_rounds = 2;
  int epochs = 30;
  double lr = 0.01;
  double mu = 0.1;  // fedprox proximal strength
  double temperature = 0.1;
  int max_len = 10;
  std::string method = "fellrec";
  std::string partition = "clustered";  // clustered | dirichlet
  double dirichlet_c = 0.3;
  std::string distance = "cosine";
  std::vector<int> ks = {10, 20};
  std::string dataset = "synthetic";  // "synthetic" or a TSV path
  int num_users = 50;
  int num_items = 100;
  int num_clusters = 5;
  int events_per_user = 12;
  std::string out_dir;
  std::string checkpoints;  // input for eval/attack
  std::string eval_split = "test";  // test | valid
  bool eval_during_training = false;
  bool split_exec = true;   // run training through the client/server split
  bool log_exchanges = false;
  std::string probe_kind = "both";  // linear | mlp | both
  int probe_hidden = 32;
  int probe_steps = 2000;
  double probe_lr = 0.05;
  int attack_client = 0;
  double cost_b = 1.0;
  double cost_c = 1.0;

  void validate() const;
};

// FNV-1a over the canonical JSON form of the config.
std::string config_hash(const ExperimentConfig& cfg);

// Dataset, partition, and per-client example lists for one config.
struct PreparedData {
  InteractionLog log;
  std::vector<std::vector<double>> latents;
  ClientPartition partition;
  SplitDataset split;
  std::vector<std::vector<Example>> train;
  std::vector<std::vector<Example>> valid;
  std::vector<std::vector<Example>> test;
};

PreparedData prepare_data(const ExperimentConfig& cfg);

ModelConfig model_config_of(const ExperimentConfig& cfg, int num_items);

// Clients with identically initialized models and their train examples.
std::vector<ClientState> make_clients(const ExperimentConfig& cfg, const PreparedData& data);

// Subcommand entry points. Each writes its artifacts plus manifest.json
// under cfg.out_dir (which must be set, except for cmd_cost).
void cmd_generate(const ExperimentConfig& cfg);
void cmd_train(const ExperimentConfig& cfg);
void cmd_eval(const ExperimentConfig& cfg);
void cmd_attack(const ExperimentConfig& cfg);
CostReport cmd_cost(const ExperimentConfig& cfg);

}  // namespace fellrec
