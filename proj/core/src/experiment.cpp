#include "fellrec/experiment.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

#include "fellrec/attack.hpp"
#include "fellrec/errors.hpp"

#include <nlohmann/json.hpp>

namespace fellrec {

namespace {

nlohmann::json config_to_json(const ExperimentConfig& c) {
  return nlohmann::json{
      {"seed", c.seed},
      {"num_clients", c.num_clients},
      {"num_layers", c.num_layers},
      {"k", c.k},
      {"hidden_dim", c.hidden_dim},
      {"lora_rank", c.lora_rank},
      {"lora_scale", c.lora_scale},
      {"alpha", c.alpha},
      {"beta", c.beta},
      {"local_rounds", c.local_rounds},
      {"epochs", c.epochs},
      {"lr", c.lr},
      {"mu", c.mu},
      {"temperature", c.temperature},
      {"max_len", c.max_len},
      {"method", c.method},
      {"partition", c.partition},
      {"dirichlet_c", c.dirichlet_c},
      {"distance", c.distance},
      {"ks", c.ks},
      {"dataset", c.dataset},
      {"num_users", c.num_users},
      {"num_items", c.num_items},
      {"num_clusters", c.num_clusters},
      {"events_per_user", c.events_per_user},
      {"out_dir", c.out_dir},
      {"checkpoints", c.checkpoints},
      {"eval_split", c.eval_split},
      {"eval_during_training", c.eval_during_training},
      {"split_exec", c.split_exec},
      {"log_exchanges", c.log_exchanges},
      {"probe_kind", c.probe_kind},
      {"probe_hidden", c.probe_hidden},
      {"probe_steps", c.probe_steps},
      {"probe_lr", c.probe_lr},
      {"attack_client", c.attack_client},
      {"cost_b", c.cost_b},
      {"cost_c", c.cost_c},
  };
}

void write_manifest(const ExperimentConfig& cfg, const std::string& command) {
  nlohmann::json j = {
      {"command", command},
      {"config_hash", config_hash(cfg)},
      {"config", config_to_json(cfg)},
      {"versions",
       {{"fellrec", "0.1.0"}, {"checkpoint_format", 1}, {"history_format", 1}}},
  };
  std::ofstream out(std::filesystem::path(cfg.out_dir) / "manifest.json");
  if (!out) throw IoError("write_manifest: cannot write manifest.json in " + cfg.out_dir);
  out << j.dump(2) << "\n";
}

void require_out_dir(const ExperimentConfig& cfg) {
  if (cfg.out_dir.empty()) throw ConfigError("config: out_dir is required for this command");
  std::error_code ec;
  std::filesystem::create_directories(cfg.out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + cfg.out_dir + ": " + ec.message());
}

std::string path_in_out(const ExperimentConfig& cfg, const std::string& name) {
  return (std::filesystem::path(cfg.out_dir) / name).string();
}

std::vector<std::vector<double>> histogram_latents(const InteractionLog& log) {
  const int buckets = std::min(log.num_items, 32);
  std::vector<std::vector<double>> profiles(
      static_cast<std::size_t>(log.num_users),
      std::vector<double>(static_cast<std::size_t>(buckets), 0.0));
  std::vector<double> totals(static_cast<std::size_t>(log.num_users), 0.0);
  for (const InteractionEvent& e : log.events) {
    const int bucket = static_cast<int>((static_cast<long>(e.item_id) * buckets) / log.num_items);
    profiles[static_cast<std::size_t>(e.user_id)][static_cast<std::size_t>(bucket)] += 1.0;
    totals[static_cast<std::size_t>(e.user_id)] += 1.0;
  }
  for (std::size_t u = 0; u < profiles.size(); ++u) {
    if (totals[u] > 0.0) {
      for (double& v : profiles[u]) v /= totals[u];
    }
  }
  return profiles;
}

std::vector<ClientState> load_checkpoints_for(const ExperimentConfig& cfg,
                                              const PreparedData& data) {
  if (cfg.checkpoints.empty()) {
    throw ConfigError("config: checkpoints path is required for this command");
  }
  std::vector<ClientState> clients = load_checkpoints(cfg.checkpoints);
  if (static_cast<int>(clients.size()) != cfg.num_clients) {
    throw IoError("checkpoint file holds " + std::to_string(clients.size()) +
                  " clients, config expects " + std::to_string(cfg.num_clients));
  }
  if (clients[0].model.config.num_items != data.log.num_items) {
    throw IoError("checkpoint catalog size does not match the dataset");
  }
  return clients;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (num_clients < 1) throw ConfigError("config: num_clients must be >= 1");
  if (num_layers < 3) throw ConfigError("config: num_layers must be >= 3");
  if (k < 1 || k + 1 >= num_layers) {
    throw ConfigError("config: k must satisfy 1 <= k and k + 1 < num_layers (k=" +
                      std::to_string(k) + ", num_layers=" + std::to_string(num_layers) + ")");
  }
  if (hidden_dim < 2) throw ConfigError("config: hidden_dim must be >= 2");
  if (lora_rank < 1 || lora_rank >= hidden_dim) {
    throw ConfigError("config: lora_rank must satisfy 1 <= r < hidden_dim");
  }
  if (alpha <= 0.0) throw ConfigError("config: alpha must be positive");
  if (beta <= 0.0) throw ConfigError("config: beta must be positive");
  if (alpha < 0.1 || alpha > 1.3) {
    log_warning("alpha " + std::to_string(alpha) + " lies outside the documented grid [0.1, 1.3]");
  }
  if (beta < 1.0 || beta > 20.0) {
    log_warning("beta " + std::to_string(beta) + " lies outside the documented grid [1, 20]");
  }
  if (local_rounds < 1) throw ConfigError("config: local_rounds must be >= 1");
  if (epochs < 0) throw ConfigError("config: epochs must be >= 0");
  if (lr < 0.0) throw ConfigError("config: lr must be >= 0");
  if (mu < 0.0) throw ConfigError("config: mu must be >= 0");
  if (temperature <= 0.0) throw ConfigError("config: temperature must be positive");
  if (max_len < 1) throw ConfigError("config: max_len must be >= 1");
  parse_method(method);
  if (partition != "clustered" && partition != "dirichlet") {
    throw ConfigError("config: partition must be clustered or dirichlet");
  }
  if (dirichlet_c <= 0.0) throw ConfigError("config: dirichlet_c must be positive");
  parse_distance(distance);
  if (ks.empty()) throw ConfigError("config: ks must not be empty");
  for (int k_value : ks) {
    if (k_value < 1) throw ConfigError("config: every K must be >= 1");
  }
  if (dataset.empty()) throw ConfigError("config: dataset must be 'synthetic' or a TSV path");
  if (dataset == "synthetic") {
    if (num_users < 1 || num_items < 1 || num_clusters < 1 || events_per_user < 1) {
      throw ConfigError("config: synthetic counts must be >= 1");
    }
    if (num_clusters > num_items) {
      throw ConfigError("config: num_clusters must not exceed num_items");
    }
    if (num_clients > num_users) {
      throw ConfigError("config: num_clients must not exceed num_users");
    }
    if (events_per_user < 3) {
      throw ConfigError("config: events_per_user must be >= 3 for the 8:1:1 split");
    }
  }
  if (eval_split != "test" && eval_split != "valid") {
    throw ConfigError("config: eval_split must be test or valid");
  }
  if (probe_kind != "linear" && probe_kind != "mlp" && probe_kind != "both") {
    throw ConfigError("config: probe_kind must be linear, mlp, or both");
  }
  if (probe_hidden < 1) throw ConfigError("config: probe_hidden must be >= 1");
  if (probe_steps < 1) throw ConfigError("config: probe_steps must be >= 1");
  if (probe_lr <= 0.0) throw ConfigError("config: probe_lr must be positive");
  if (attack_client < 0 || attack_client >= num_clients) {
    throw ConfigError("config: attack_client must lie in [0, num_clients)");
  }
  if (cost_b <= 0.0 || cost_c <= 0.0) throw ConfigError("config: cost_b and cost_c must be positive");
}

std::string config_hash(const ExperimentConfig& cfg) {
  const std::string dump = config_to_json(cfg).dump();
  std::uint64_t hash = 1469598103934665603ULL;  // FNV-1a 64
  for (unsigned char c : dump) {
    hash ^= c;
    hash *= 1099511628211ULL;
  }
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash));
  return buf;
}

PreparedData prepare_data(const ExperimentConfig& cfg) {
  PreparedData data;
  if (cfg.dataset == "synthetic") {
    SyntheticParams params;
    params.num_users = cfg.num_users;
    params.num_items = cfg.num_items;
    params.num_clusters = cfg.num_clusters;
    params.events_per_user = cfg.events_per_user;
    params.seed = cfg.seed;
    SyntheticData synthetic = generate_synthetic(params);
    data.log = std::move(synthetic.log);
    data.latents = std::move(synthetic.user_latents);
  } else {
    data.log = load_interaction_log(cfg.dataset);
    data.latents = histogram_latents(data.log);
  }
  if (cfg.num_clients > data.log.num_users) {
    throw ConfigError("config: num_clients exceeds the dataset's user count");
  }

  if (cfg.partition == "clustered") {
    data.partition = partition_clustered(data.latents, cfg.num_clients, cfg.seed);
  } else {
    data.partition = partition_dirichlet(data.log, cfg.num_clients, cfg.dirichlet_c, cfg.seed);
  }

  data.split = chronological_split(data.log, cfg.max_len);
  data.train = client_examples(data.split, data.partition, SplitKind::train);
  data.valid = client_examples(data.split, data.partition, SplitKind::valid);
  data.test = client_examples(data.split, data.partition, SplitKind::test);
  return data;
}

ModelConfig model_config_of(const ExperimentConfig& cfg, int num_items) {
  ModelConfig model_cfg;
  model_cfg.num_items = num_items;
  model_cfg.hidden_dim = cfg.hidden_dim;
  model_cfg.num_layers = cfg.num_layers;
  model_cfg.lora_rank = cfg.lora_rank;
  model_cfg.lora_scale = cfg.lora_scale;
  model_cfg.max_len = cfg.max_len;
  model_cfg.temperature = cfg.temperature;
  model_cfg.seed = cfg.seed;
  return model_cfg;
}

std::vector<ClientState> make_clients(const ExperimentConfig& cfg, const PreparedData& data) {
  const ModelConfig model_cfg = model_config_of(cfg, data.log.num_items);
  const LayeredModel shared_init = init_model(model_cfg);

  std::vector<ClientState> clients;
  for (int c = 0; c < cfg.num_clients; ++c) {
    ClientState state;
    state.client_id = c;
    state.model = shared_init;
    state.dataset = data.train[static_cast<std::size_t>(c)];
    state.local_rounds = cfg.local_rounds;
    clients.push_back(std::move(state));
  }
  return clients;
}

void cmd_generate(const ExperimentConfig& cfg) {
  require_out_dir(cfg);
  if (cfg.dataset != "synthetic") {
    throw ConfigError("config: generate requires dataset=synthetic");
  }
  PreparedData data = prepare_data(cfg);
  save_interaction_log(path_in_out(cfg, "interactions.tsv"), data.log);
  save_latents_json(path_in_out(cfg, "latents.json"), data.latents);
  save_partition_json(path_in_out(cfg, "partition.json"), data.partition);
  write_manifest(cfg, "generate");
}

void cmd_train(const ExperimentConfig& cfg) {
  require_out_dir(cfg);
  PreparedData data = prepare_data(cfg);
  std::vector<ClientState> clients = make_clients(cfg, data);

  TrainOptions opts;
  opts.method = parse_method(cfg.method);
  opts.epochs = cfg.epochs;
  opts.local_rounds = cfg.local_rounds;
  opts.learning_rate = cfg.lr;
  opts.prox_mu = cfg.mu;
  opts.warmup = {cfg.alpha, cfg.beta};
  if (cfg.split_exec) opts.plan = SplitPlan(cfg.k, cfg.num_layers);
  opts.embedding_units = cfg.cost_c;

  std::vector<LoggedExchange> exchanges;
  if (cfg.log_exchanges) opts.exchange_log = &exchanges;

  if (cfg.eval_during_training) {
    const Distance dist = parse_distance(cfg.distance);
    const int eval_k = *std::min_element(cfg.ks.begin(), cfg.ks.end());
    opts.eval_hook = [&data, dist, eval_k](const std::vector<ClientState>& cs) {
      std::vector<double> out;
      for (const ClientState& c : cs) {
        const auto& items = c.model.item_embedding_cache();
        double hits = 0.0;
        const auto& examples = data.valid[static_cast<std::size_t>(c.client_id)];
        for (const Example& ex : examples) {
          const ForwardResult fwd = model_forward(ex.first, c.model);
          if (target_rank(fwd.embedding, items, ex.second, dist) <=
              static_cast<std::size_t>(eval_k)) {
            hits += 1.0;
          }
        }
        out.push_back(examples.empty() ? 0.0 : hits / static_cast<double>(examples.size()));
      }
      return out;
    };
  }

  const TrainingHistory history = run_training(clients, opts);
  save_history(path_in_out(cfg, "history.json"), history);
  save_checkpoints(path_in_out(cfg, "checkpoints.json"), clients);
  if (cfg.log_exchanges) {
    std::ofstream out(path_in_out(cfg, "exchanges.jsonl"));
    if (!out) throw IoError("cmd_train: cannot write exchanges.jsonl");
    write_exchange_log_jsonl(out, exchanges);
  }
  write_manifest(cfg, "train");
}

void cmd_eval(const ExperimentConfig& cfg) {
  require_out_dir(cfg);
  PreparedData data = prepare_data(cfg);
  const std::vector<ClientState> clients = load_checkpoints_for(cfg, data);

  std::vector<const LayeredModel*> models;
  for (const ClientState& c : clients) models.push_back(&c.model);
  const auto& examples = cfg.eval_split == "valid" ? data.valid : data.test;

  const MetricsReport report =
      evaluate_clients(models, examples, cfg.ks, parse_distance(cfg.distance));
  write_metrics_csv(path_in_out(cfg, "metrics.csv"), report);
  write_metrics_json(path_in_out(cfg, "metrics.json"), report);
  write_manifest(cfg, "eval");
}

void cmd_attack(const ExperimentConfig& cfg) {
  require_out_dir(cfg);
  PreparedData data = prepare_data(cfg);
  const std::vector<ClientState> clients = load_checkpoints_for(cfg, data);
  const LayeredModel& model = clients[static_cast<std::size_t>(cfg.attack_client)].model;

  // Probe the trained model on the held-out test sequences of every client.
  std::vector<HistorySequence> sequences;
  for (const auto& client_examples : data.test) {
    for (const Example& ex : client_examples) sequences.push_back(ex.first);
  }
  if (sequences.size() < 5) throw ContractViolation("cmd_attack: too few test sequences");

  std::vector<ProbeReport> reports;
  for (const char* kind : {"linear", "mlp"}) {
    if (cfg.probe_kind != "both" && cfg.probe_kind != kind) continue;
    ProbeConfig probe_cfg;
    probe_cfg.kind = parse_probe_kind(kind);
    probe_cfg.hidden_dim = cfg.probe_hidden;
    probe_cfg.train_steps = cfg.probe_steps;
    probe_cfg.lr = cfg.probe_lr;
    probe_cfg.seed = cfg.seed;
    reports.push_back(probe_sweep(model, sequences, probe_cfg));
  }
  write_probe_reports_csv(path_in_out(cfg, "probes.csv"), reports);
  write_manifest(cfg, "attack");
}

CostReport cmd_cost(const ExperimentConfig& cfg) {
  const SplitPlan plan(cfg.k, cfg.num_layers);
  const CostReport report = cost_report(plan, cfg.cost_b, cfg.cost_c);

  nlohmann::json j = {
      {"k", cfg.k},
      {"num_layers", cfg.num_layers},
      {"b", report.b},
      {"c", report.c},
      {"storage_units", report.storage_units},
      {"inference_units", report.inference_units},
      {"communication_units", report.communication_units},
      {"fedavg_storage_units", report.fedavg_storage_units},
      {"fedavg_inference_units", report.fedavg_inference_units},
      {"fedavg_communication_units", report.fedavg_communication_units},
      {"cheaper_than_fedavg", report.cheaper_than_fedavg},
  };
  std::cout << j.dump(2) << "\n";
  if (!cfg.out_dir.empty()) {
    require_out_dir(cfg);
    std::ofstream out(path_in_out(cfg, "cost.json"));
    if (!out) throw IoError("cmd_cost: cannot write cost.json");
    out << j.dump(2) << "\n";
    write_manifest(cfg, "cost");
  }
  return report;
}

}  // namespace fellrec
