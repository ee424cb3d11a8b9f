#include "fellrec/split.hpp"

#include <ostream>
#include <string>

#include "fellrec/errors.hpp"

#include <nlohmann/json.hpp>

namespace fellrec {

namespace {

// The channel copies every payload by value; a wire transport could replace
// this without touching the execution logic.
class MessageChannel {
 public:
  explicit MessageChannel(double embedding_units) : embedding_units_(embedding_units) {}

  Matrix transfer(const Matrix& payload, Direction direction, PayloadKind kind) {
    log_.push_back({direction, kind, embedding_units_});
    return payload;  // value copy across the boundary
  }

  std::vector<ExchangeRecord> take_log() { return std::move(log_); }

 private:
  double embedding_units_;
  std::vector<ExchangeRecord> log_;
};

}  // namespace

SplitPlan::SplitPlan(int k_, int num_layers_) : k(k_), num_layers(num_layers_) {
  if (k < 1) throw ContractViolation("SplitPlan: k must be >= 1");
  if (k + 1 >= num_layers) throw ContractViolation("SplitPlan: requires k + 1 < num_layers");
}

std::vector<int> SplitPlan::client_layers() const {
  std::vector<int> layers;
  for (int i = 1; i <= k; ++i) layers.push_back(i);
  layers.push_back(num_layers);
  return layers;
}

std::vector<int> SplitPlan::server_layers() const {
  std::vector<int> layers;
  for (int i = k + 1; i <= num_layers - 1; ++i) layers.push_back(i);
  return layers;
}

const char* to_string(Direction d) {
  return d == Direction::client_to_server ? "client_to_server" : "server_to_client";
}

const char* to_string(PayloadKind k) {
  switch (k) {
    case PayloadKind::embedding:
      return "embedding";
    case PayloadKind::layer_params:
      return "layer_params";
    case PayloadKind::gradient:
      return "gradient";
  }
  return "unknown";
}

void write_exchange_log_jsonl(std::ostream& out, const std::vector<LoggedExchange>& log) {
  for (const LoggedExchange& entry : log) {
    nlohmann::json line = {
        {"round", entry.round},
        {"direction", to_string(entry.record.direction)},
        {"payload_kind", to_string(entry.record.payload_kind)},
        {"size_units", entry.record.size_units},
    };
    out << line.dump() << "\n";
  }
}

CostReport cost_report(const SplitPlan& plan, double b, double c) {
  if (b <= 0.0 || c <= 0.0) throw ContractViolation("cost_report: b and c must be positive");
  const double k = static_cast<double>(plan.k);
  const double n = static_cast<double>(plan.num_layers);
  CostReport report;
  report.b = b;
  report.c = c;
  report.storage_units = k + 1.0;
  report.inference_units = k + 1.0;
  report.communication_units = (k + 1.0) * b + 2.0 * c;
  report.fedavg_storage_units = n;
  report.fedavg_inference_units = n;
  report.fedavg_communication_units = n * b;
  report.cheaper_than_fedavg = c < (n - k - 1.0) * b / 2.0;
  return report;
}

SplitForwardResult split_forward(const HistorySequence& h, const LayeredModel& model,
                                 const SplitPlan& plan, double embedding_units) {
  if (plan.num_layers != model.config.num_layers) {
    throw ContractViolation("split_forward: plan does not match model depth");
  }
  MessageChannel channel(embedding_units);
  SplitForwardResult result;

  // Client: input layers 1..k.
  Matrix current = encode_history(h, model);
  for (int layer = 1; layer <= plan.k; ++layer) {
    current = layer_forward(layer, current, model, result.tape);
  }
  current = channel.transfer(current, Direction::client_to_server, PayloadKind::embedding);

  // Server: middle layers k+1..N-1.
  for (int layer = plan.k + 1; layer <= plan.num_layers - 1; ++layer) {
    current = layer_forward(layer, current, model, result.tape);
  }
  current = channel.transfer(current, Direction::server_to_client, PayloadKind::embedding);

  // Client: output layer N; the loss label never leaves the client.
  result.embedding = layer_forward(plan.num_layers, current, model, result.tape);
  result.log = channel.take_log();
  return result;
}

SplitBackwardResult split_backward(const Matrix& grad_embedding, const LayeredModel& model,
                                   const SplitPlan& plan, ActivationTape& tape,
                                   double embedding_units) {
  if (plan.num_layers != model.config.num_layers) {
    throw ContractViolation("split_backward: plan does not match model depth");
  }
  for (int layer = 1; layer <= plan.num_layers; ++layer) {
    if (!tape.has_layer(layer)) {
      throw ContractViolation("split_backward: tape missing layer " + std::to_string(layer));
    }
  }
  MessageChannel channel(embedding_units);
  SplitBackwardResult result;
  result.adapter_grads.resize(static_cast<std::size_t>(plan.num_layers));

  // Client: output layer.
  LayerBackwardResult step = layer_backward(plan.num_layers, grad_embedding, model, tape);
  result.adapter_grads[static_cast<std::size_t>(plan.num_layers - 1)] =
      std::move(step.adapter_grads);
  Matrix current =
      channel.transfer(step.grad_in, Direction::client_to_server, PayloadKind::gradient);

  // Server: middle layers in reverse.
  for (int layer = plan.num_layers - 1; layer >= plan.k + 1; --layer) {
    step = layer_backward(layer, current, model, tape);
    result.adapter_grads[static_cast<std::size_t>(layer - 1)] = std::move(step.adapter_grads);
    current = std::move(step.grad_in);
  }
  current = channel.transfer(current, Direction::server_to_client, PayloadKind::gradient);

  // Client: input layers in reverse.
  for (int layer = plan.k; layer >= 1; --layer) {
    step = layer_backward(layer, current, model, tape);
    result.adapter_grads[static_cast<std::size_t>(layer - 1)] = std::move(step.adapter_grads);
    current = std::move(step.grad_in);
  }

  tape.clear();
  result.log = channel.take_log();
  return result;
}

}  // namespace fellrec
