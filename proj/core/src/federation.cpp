#include "fellrec/federation.hpp"

#include <cmath>
#include <fstream>

#include "fellrec/errors.hpp"

#include <nlohmann/json.hpp>

namespace fellrec {

namespace {

constexpr double kWarmupFloor = 1e-6;

// Adds mu * (local - reference) over the flattened adapter layout.
void add_proximal_term(ModelGrads& grads, const LayeredModel& model,
                       const std::vector<double>& reference, double mu) {
  const std::vector<double> flat = flatten_adapters(model);
  if (flat.size() != reference.size()) {
    throw ContractViolation("proximal term: reference vector length mismatch");
  }
  std::size_t offset = 0;
  for (std::size_t layer = 0; layer < model.layers.size(); ++layer) {
    for (const auto& [name, adapter] : model.layers[layer].adapters) {
      LoraGrad& g = grads[layer].at(name);
      for (std::size_t i = 0; i < g.down.data.size(); ++i, ++offset) {
        g.down.data[i] += mu * (flat[offset] - reference[offset]);
      }
      for (std::size_t i = 0; i < g.up.data.size(); ++i, ++offset) {
        g.up.data[i] += mu * (flat[offset] - reference[offset]);
      }
    }
  }
}

std::vector<std::size_t> nonempty_client_indices(const std::vector<ClientState>& clients) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < clients.size(); ++i) {
    if (!clients[i].dataset.empty()) idx.push_back(i);
  }
  return idx;
}

nlohmann::json model_config_to_json(const ModelConfig& cfg) {
  return nlohmann::json{
      {"num_items", cfg.num_items},       {"hidden_dim", cfg.hidden_dim},
      {"num_layers", cfg.num_layers},     {"lora_rank", cfg.lora_rank},
      {"lora_scale", cfg.lora_scale},     {"ffn_dim", cfg.ffn_dim},
      {"max_len", cfg.max_len},           {"temperature", cfg.temperature},
      {"seed", cfg.seed},
  };
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  cfg.num_items = j.at("num_items").get<int>();
  cfg.hidden_dim = j.at("hidden_dim").get<int>();
  cfg.num_layers = j.at("num_layers").get<int>();
  cfg.lora_rank = j.at("lora_rank").get<int>();
  cfg.lora_scale = j.at("lora_scale").get<double>();
  cfg.ffn_dim = j.at("ffn_dim").get<int>();
  cfg.max_len = j.at("max_len").get<int>();
  cfg.temperature = j.at("temperature").get<double>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  return cfg;
}

}  // namespace

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ContractViolation("cosine_similarity: length mismatch");
  if (a.empty()) throw ContractViolation("cosine_similarity: empty vectors");
  const double na = l2_norm(a);
  const double nb = l2_norm(b);
  if (na == 0.0 || nb == 0.0) throw NumericError("cosine_similarity: zero-norm vector");
  return dot(a, b) / (na * nb);
}

double warmup_coefficient(const std::vector<double>& losses, std::size_t client, double t,
                          const WarmupConfig& cfg) {
  if (losses.size() < 2) throw ContractViolation("warmup_coefficient: needs >= 2 clients");
  if (client >= losses.size()) throw ContractViolation("warmup_coefficient: client out of range");
  if (t < 0.0) throw ContractViolation("warmup_coefficient: t must be >= 0");
  if (cfg.alpha <= 0.0 || cfg.beta <= 0.0) {
    throw ContractViolation("warmup_coefficient: alpha and beta must be positive");
  }

  double max_loss = losses[0];
  for (double l : losses) max_loss = std::max(max_loss, l);
  double denom = 0.0;
  for (double l : losses) denom += std::exp(l - max_loss);
  const double softmax_c = std::exp(losses[client] - max_loss) / denom;

  // softmax_c ^ (t/beta) lies in (0, 1]; underflow to 0 makes the argument
  // +inf and tanh saturates at 1, exactly the intended limit.
  const double powed = std::pow(softmax_c, t / cfg.beta);
  return std::tanh(cfg.alpha / powed);
}

AggregationWeights build_aggregation_weights(const std::vector<std::vector<double>>& adapters,
                                             const std::vector<double>& losses, double t,
                                             const WarmupConfig& cfg) {
  const std::size_t n = adapters.size();
  if (n == 0) throw ContractViolation("build_aggregation_weights: no clients");
  if (losses.size() != n) throw ContractViolation("build_aggregation_weights: loss count mismatch");

  AggregationWeights weights;
  weights.s = Matrix(n, n);
  weights.d = Matrix(n, n);
  weights.w.assign(n, 1.0);

  for (std::size_t c = 0; c < n; ++c) weights.s.at(c, c) = 1.0;
  for (std::size_t c = 0; c < n; ++c) {
    for (std::size_t o = c + 1; o < n; ++o) {
      const double sim = cosine_similarity(adapters[c], adapters[o]);
      weights.s.at(c, o) = sim;
      weights.s.at(o, c) = sim;
    }
  }

  if (n > 1) {
    for (std::size_t c = 0; c < n; ++c) {
      weights.w[c] = warmup_coefficient(losses, c, t, cfg);
    }
  }

  for (std::size_t c = 0; c < n; ++c) {
    weights.d.at(c, c) = 1.0;  // self-knowledge is never damped
    const double wc = std::max(weights.w[c], kWarmupFloor);
    for (std::size_t o = 0; o < n; ++o) {
      if (o == c) continue;
      const double clamped = std::max(weights.s.at(c, o), 0.0);
      weights.d.at(c, o) = wc * clamped;
    }
  }
  return weights;
}

std::vector<std::vector<double>> fellrec_aggregate(
    const std::vector<std::vector<double>>& adapters, const AggregationWeights& weights) {
  const std::size_t n = adapters.size();
  if (weights.d.rows != n || weights.d.cols != n) {
    throw ContractViolation("fellrec_aggregate: weight matrix shape mismatch");
  }
  for (std::size_t c = 1; c < n; ++c) {
    if (adapters[c].size() != adapters[0].size()) {
      throw ContractViolation("fellrec_aggregate: adapter vector length mismatch");
    }
  }

  std::vector<std::vector<double>> out(n);
  for (std::size_t c = 0; c < n; ++c) {
    double row_sum = 0.0;
    for (std::size_t o = 0; o < n; ++o) row_sum += weights.d.at(c, o);
    if (!(row_sum > 0.0)) {
      throw ContractViolation("fellrec_aggregate: non-positive weight row sum");
    }
    out[c] = adapters[c];
    for (std::size_t o = 0; o < n; ++o) {
      if (o == c) continue;
      const double share = weights.d.at(c, o) / row_sum;
      if (share == 0.0) continue;
      for (std::size_t j = 0; j < out[c].size(); ++j) {
        out[c][j] += share * (adapters[o][j] - adapters[c][j]);
      }
    }
  }
  return out;
}

std::vector<double> fedavg_aggregate(const std::vector<std::vector<double>>& params,
                                     const std::vector<std::size_t>& sizes) {
  if (params.empty()) throw ContractViolation("fedavg_aggregate: no clients");
  if (params.size() != sizes.size()) {
    throw ContractViolation("fedavg_aggregate: size count mismatch");
  }
  std::size_t total = 0;
  for (std::size_t s : sizes) {
    if (s == 0) throw ContractViolation("fedavg_aggregate: dataset sizes must be positive");
    total += s;
  }
  for (std::size_t c = 1; c < params.size(); ++c) {
    if (params[c].size() != params[0].size()) {
      throw ContractViolation("fedavg_aggregate: parameter vector length mismatch");
    }
  }

  std::vector<double> out = params[0];
  for (std::size_t c = 1; c < params.size(); ++c) {
    const double share = static_cast<double>(sizes[c]) / static_cast<double>(total);
    for (std::size_t j = 0; j < out.size(); ++j) {
      out[j] += share * (params[c][j] - params[0][j]);
    }
  }
  return out;
}

Method parse_method(const std::string& name) {
  if (name == "fellrec") return Method::fellrec;
  if (name == "fedavg") return Method::fedavg;
  if (name == "fedprox") return Method::fedprox;
  if (name == "local") return Method::local_only;
  if (name == "central") return Method::centralized;
  throw ConfigError("unknown method: " + name);
}

const char* to_string(Method method) {
  switch (method) {
    case Method::fellrec:
      return "fellrec";
    case Method::fedavg:
      return "fedavg";
    case Method::fedprox:
      return "fedprox";
    case Method::local_only:
      return "local";
    case Method::centralized:
      return "central";
  }
  return "unknown";
}

void local_train(ClientState& client, const LocalTrainOptions& opts) {
  if (opts.rounds < 1) throw ContractViolation("local_train: rounds must be >= 1");
  if (client.dataset.empty()) {
    log_warning("client " + std::to_string(client.client_id) +
                " has an empty dataset, skipping local training");
    return;
  }
  const double inv_count = 1.0 / static_cast<double>(client.dataset.size());

  for (int round = 0; round < opts.rounds; ++round) {
    ModelGrads grads = zero_model_grads(client.model);
    double round_loss = 0.0;

    for (const auto& [history, target] : client.dataset) {
      if (opts.plan.has_value()) {
        SplitForwardResult fwd = split_forward(history, client.model, *opts.plan,
                                               opts.embedding_units);
        const LossResult loss = recommendation_loss(fwd.embedding, target, client.model);
        round_loss += loss.loss;
        SplitBackwardResult back = split_backward(loss.grad_embedding, client.model, *opts.plan,
                                                  fwd.tape, opts.embedding_units);
        accumulate_model_grads(grads, back.adapter_grads);
        if (opts.exchange_log != nullptr) {
          for (const ExchangeRecord& rec : fwd.log) {
            opts.exchange_log->push_back({opts.log_round, rec});
          }
          for (const ExchangeRecord& rec : back.log) {
            opts.exchange_log->push_back({opts.log_round, rec});
          }
        }
      } else {
        ForwardResult fwd = model_forward(history, client.model);
        const LossResult loss = recommendation_loss(fwd.embedding, target, client.model);
        round_loss += loss.loss;
        ModelGrads sample = model_backward(loss.grad_embedding, client.model, fwd.tape);
        accumulate_model_grads(grads, sample);
      }
    }

    scale_model_grads(grads, inv_count);
    if (opts.prox_mu > 0.0 && !client.prox_reference.empty()) {
      add_proximal_term(grads, client.model, client.prox_reference, opts.prox_mu);
    }
    apply_adapter_step(client.model, grads, opts.learning_rate);
    client.accum_loss += round_loss;
  }
}

void fedprox_local_step(ClientState& client, const std::vector<double>& global_params, double mu,
                        double learning_rate, const std::optional<SplitPlan>& plan) {
  if (mu < 0.0) throw ContractViolation("fedprox_local_step: mu must be >= 0");
  client.prox_reference = global_params;
  LocalTrainOptions opts;
  opts.rounds = 1;
  opts.learning_rate = learning_rate;
  opts.prox_mu = mu;
  opts.plan = plan;
  local_train(client, opts);
}

TrainingHistory run_training(std::vector<ClientState>& clients, const TrainOptions& opts) {
  if (clients.empty()) throw ContractViolation("run_training: no clients");
  if (opts.epochs < 0) throw ContractViolation("run_training: epochs must be >= 0");

  TrainingHistory history;
  history.method = opts.method;

  // Centralized baseline: one logical client holding the union of the data.
  if (opts.method == Method::centralized) {
    ClientState merged;
    merged.client_id = 0;
    merged.model = clients[0].model;
    merged.local_rounds = opts.local_rounds;
    for (const ClientState& c : clients) {
      merged.dataset.insert(merged.dataset.end(), c.dataset.begin(), c.dataset.end());
    }

    for (int epoch = 1; epoch <= opts.epochs; ++epoch) {
      merged.accum_loss = 0.0;
      merged.epoch = epoch;
      LocalTrainOptions local;
      local.rounds = opts.local_rounds;
      local.learning_rate = opts.learning_rate;
      local.plan = opts.plan;
      local.embedding_units = opts.embedding_units;
      local.exchange_log = opts.exchange_log;
      local.log_round = epoch;
      local_train(merged, local);

      EpochRecord record;
      record.epoch = epoch;
      record.losses = {merged.accum_loss};
      history.epochs.push_back(std::move(record));
    }

    const std::vector<double> trained = flatten_adapters(merged.model);
    for (ClientState& c : clients) {
      unflatten_adapters(c.model, trained);
      c.accum_loss = merged.accum_loss;
      c.epoch = merged.epoch;
    }
    return history;
  }

  if (opts.method == Method::fedprox) {
    // The proximal anchor starts at the shared initialization.
    const std::vector<double> init = flatten_adapters(clients[0].model);
    for (ClientState& c : clients) c.prox_reference = init;
  }

  for (int epoch = 1; epoch <= opts.epochs; ++epoch) {
    for (ClientState& c : clients) {
      c.accum_loss = 0.0;
      c.epoch = epoch;
    }

    for (ClientState& c : clients) {
      LocalTrainOptions local;
      local.rounds = opts.local_rounds;
      local.learning_rate = opts.learning_rate;
      local.prox_mu = opts.method == Method::fedprox ? opts.prox_mu : 0.0;
      local.plan = opts.plan;
      local.embedding_units = opts.embedding_units;
      local.exchange_log = opts.exchange_log;
      local.log_round = epoch;
      local_train(c, local);
    }

    EpochRecord record;
    record.epoch = epoch;
    for (const ClientState& c : clients) record.losses.push_back(c.accum_loss);

    if (opts.method == Method::fellrec) {
      std::vector<std::vector<double>> flats;
      std::vector<double> losses;
      for (ClientState& c : clients) {
        flats.push_back(flatten_adapters(c.model));
        losses.push_back(c.accum_loss);
      }
      const AggregationWeights weights =
          build_aggregation_weights(flats, losses, static_cast<double>(epoch), opts.warmup);
      std::vector<std::vector<double>> merged = fellrec_aggregate(flats, weights);
      for (std::size_t i = 0; i < clients.size(); ++i) {
        unflatten_adapters(clients[i].model, merged[i]);
      }
      record.w = weights.w;
      record.d = weights.d;
    } else if (opts.method == Method::fedavg || opts.method == Method::fedprox) {
      // Clients with empty datasets contribute nothing but still receive the
      // global parameters.
      const std::vector<std::size_t> contributors = nonempty_client_indices(clients);
      if (contributors.empty()) {
        throw ContractViolation("run_training: every client dataset is empty");
      }
      std::vector<std::vector<double>> flats;
      std::vector<std::size_t> sizes;
      for (std::size_t i : contributors) {
        flats.push_back(flatten_adapters(clients[i].model));
        sizes.push_back(clients[i].dataset.size());
      }
      const std::vector<double> global = fedavg_aggregate(flats, sizes);
      for (ClientState& c : clients) {
        unflatten_adapters(c.model, global);
        if (opts.method == Method::fedprox) c.prox_reference = global;
      }
    }
    // Method::local_only: clients evolve independently.

    if (opts.eval_hook) record.eval = opts.eval_hook(clients);
    history.epochs.push_back(std::move(record));
  }
  return history;
}

void save_checkpoints(const std::string& path, const std::vector<ClientState>& clients) {
  if (clients.empty()) throw ContractViolation("save_checkpoints: no clients");
  nlohmann::json j;
  j["version"] = 1;
  j["model_config"] = model_config_to_json(clients[0].model.config);
  nlohmann::json arr = nlohmann::json::array();
  for (const ClientState& c : clients) {
    arr.push_back({{"client_id", c.client_id}, {"adapters", flatten_adapters(c.model)}});
  }
  j["clients"] = arr;

  std::ofstream out(path);
  if (!out) throw IoError("save_checkpoints: cannot write " + path);
  out << j.dump(2) << "\n";
}

std::vector<ClientState> load_checkpoints(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("load_checkpoints: cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("load_checkpoints: malformed JSON in " + path + ": " + e.what());
  }
  if (j.value("version", 0) != 1) {
    throw IoError("load_checkpoints: unsupported checkpoint version in " + path);
  }
  const ModelConfig cfg = model_config_from_json(j.at("model_config"));

  std::vector<ClientState> clients;
  for (const auto& entry : j.at("clients")) {
    ClientState c;
    c.client_id = entry.at("client_id").get<int>();
    c.model = init_model(cfg);
    const std::vector<double> flat = entry.at("adapters").get<std::vector<double>>();
    unflatten_adapters(c.model, flat);
    clients.push_back(std::move(c));
  }
  return clients;
}

void save_history(const std::string& path, const TrainingHistory& history) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const EpochRecord& r : history.epochs) {
    nlohmann::json e;
    e["epoch"] = r.epoch;
    e["losses"] = r.losses;
    if (!r.w.empty()) e["w"] = r.w;
    if (!r.d.empty()) {
      nlohmann::json rows = nlohmann::json::array();
      for (std::size_t i = 0; i < r.d.rows; ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (std::size_t j2 = 0; j2 < r.d.cols; ++j2) row.push_back(r.d.at(i, j2));
        rows.push_back(row);
      }
      e["d"] = rows;
    }
    if (!r.eval.empty()) e["eval"] = r.eval;
    epochs.push_back(std::move(e));
  }
  nlohmann::json j = {{"version", 1}, {"method", to_string(history.method)}, {"epochs", epochs}};

  std::ofstream out(path);
  if (!out) throw IoError("save_history: cannot write " + path);
  out << j.dump(2) << "\n";
}

}  // namespace fellrec
