// fellrec experiment runner: generate / train / eval / attack / cost.
//
// Exit codes: 0 success, 2 configuration rejected, 1 runtime failure.

#include <functional>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "fellrec/errors.hpp"
#include "fellrec/experiment.hpp"

namespace {

void add_config_options(CLI::App* cmd, fellrec::ExperimentConfig& cfg) {
  cmd->set_config("--config", "", "Key=value config file; flags override file values");
  cmd->add_option("--seed", cfg.seed, "RNG seed");
  cmd->add_option("--num-clients", cfg.num_clients, "Number of federated clients");
  cmd->add_option("--num-layers", cfg.num_layers, "Model depth N");
  cmd->add_option("--k", cfg.k, "Client-kept input layers (k+1 < N)");
  cmd->add_option("--hidden-dim", cfg.hidden_dim, "Model hidden dimension");
  cmd->add_option("--lora-rank", cfg.lora_rank, "LoRA rank r");
  cmd->add_option("--lora-scale", cfg.lora_scale, "LoRA scale");
  cmd->add_option("--alpha", cfg.alpha, "Speed-related warm-up factor");
  cmd->add_option("--beta", cfg.beta, "Time-related warm-up factor");
  cmd->add_option("--local-rounds", cfg.local_rounds, "Local rounds R per epoch");
  cmd->add_option("--epochs", cfg.epochs, "Training epochs T");
  cmd->add_option("--lr", cfg.lr, "SGD learning rate");
  cmd->add_option("--mu", cfg.mu, "FedProx proximal strength");
  cmd->add_option("--temperature", cfg.temperature, "Loss softmax temperature");
  cmd->add_option("--max-len", cfg.max_len, "History truncation length");
  cmd->add_option("--method", cfg.method, "fellrec|fedavg|fedprox|local|central");
  cmd->add_option("--partition", cfg.partition, "clustered|dirichlet");
  cmd->add_option("--dirichlet-c", cfg.dirichlet_c, "Dirichlet concentration");
  cmd->add_option("--distance", cfg.distance, "cosine|l2");
  cmd->add_option("--ks", cfg.ks, "Ranking cutoffs")->delimiter(',');
  cmd->add_option("--dataset", cfg.dataset, "'synthetic' or a TSV interaction log path");
  cmd->add_option("--num-users", cfg.num_users, "Synthetic: user count");
  cmd->add_option("--num-items", cfg.num_items, "Synthetic: item count");
  cmd->add_option("--num-clusters", cfg.num_clusters, "Synthetic: latent clusters");
  cmd->add_option("--events-per-user", cfg.events_per_user, "Synthetic: events per user");
  cmd->add_option("--out", cfg.out_dir, "Output directory");
  cmd->add_option("--checkpoints", cfg.checkpoints, "Checkpoint file (eval/attack input)");
  cmd->add_option("--eval-split", cfg.eval_split, "test|valid");
  cmd->add_flag("--eval-during-training", cfg.eval_during_training,
                "Record per-client valid recall each epoch");
  cmd->add_flag("!--monolithic", cfg.split_exec,
                "Disable the client/server split execution path");
  cmd->add_flag("--log-exchanges", cfg.log_exchanges, "Write exchanges.jsonl during training");
  cmd->add_option("--probe-kind", cfg.probe_kind, "linear|mlp|both");
  cmd->add_option("--probe-hidden", cfg.probe_hidden, "MLP probe hidden width");
  cmd->add_option("--probe-steps", cfg.probe_steps, "MLP probe training steps");
  cmd->add_option("--probe-lr", cfg.probe_lr, "MLP probe learning rate");
  cmd->add_option("--attack-client", cfg.attack_client, "Client whose model is probed");
  cmd->add_option("--cost-b", cfg.cost_b, "Per-layer parameter upload cost units");
  cmd->add_option("--cost-c", cfg.cost_c, "Per-embedding transfer cost units");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated split-layer recommendation simulator"};
  app.require_subcommand(1);

  fellrec::ExperimentConfig cfg;
  std::function<void(const fellrec::ExperimentConfig&)> action;

  CLI::App* generate = app.add_subcommand("generate", "Write a synthetic dataset to --out");
  add_config_options(generate, cfg);
  generate->callback([&] { action = fellrec::cmd_generate; });

  CLI::App* train = app.add_subcommand("train", "Train per-client models, write checkpoints");
  add_config_options(train, cfg);
  train->callback([&] { action = fellrec::cmd_train; });

  CLI::App* eval_cmd = app.add_subcommand("eval", "Full-ranking metrics from checkpoints");
  add_config_options(eval_cmd, cfg);
  eval_cmd->callback([&] { action = fellrec::cmd_eval; });

  CLI::App* attack = app.add_subcommand("attack", "Per-layer probe reconstruction sweep");
  add_config_options(attack, cfg);
  attack->callback([&] { action = fellrec::cmd_attack; });

  CLI::App* cost = app.add_subcommand("cost", "Storage/inference/communication cost report");
  add_config_options(cost, cfg);
  cost->callback([&] { action = [](const fellrec::ExperimentConfig& c) { fellrec::cmd_cost(c); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    cfg.validate();
    action(cfg);
  } catch (const fellrec::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
