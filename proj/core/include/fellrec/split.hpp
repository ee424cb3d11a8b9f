#pragma once

#include <iosfwd>
#include <vector>

#include "fellrec/model.hpp"

namespace fellrec {

// Layer allocation between client and server. The client keeps the input
// layers 1..k and the output layer N; the server hosts k+1..N-1. Requires
// 1 <= k and k+1 < N.
struct SplitPlan {
  int k = 0;
  int num_layers = 0;

  SplitPlan(int k_, int num_layers_);

  bool is_client_layer(int layer_index) const {
    return layer_index <= k || layer_index == num_layers;
  }
  std::vector<int> client_layers() const;
  std::vector<int> server_layers() const;
};

enum class Direction { client_to_server, server_to_client };
enum class PayloadKind { embedding, layer_params, gradient };

struct ExchangeRecord {
  Direction direction = Direction::client_to_server;
  PayloadKind payload_kind = PayloadKind::embedding;
  double size_units = 0.0;
};

const char* to_string(Direction d);
const char* to_string(PayloadKind k);

// Append records as JSON lines: {"round":..,"direction":..,"payload_kind":..,"size_units":..}
struct LoggedExchange {
  int round = 0;
  ExchangeRecord record;
};
void write_exchange_log_jsonl(std::ostream& out, const std::vector<LoggedExchange>& log);

// Abstract cost units following the k+1 / N accounting: b is the cost of
// uploading one layer of parameters, c the cost of one embedding transfer.
struct CostReport {
  double storage_units = 0.0;        // k + 1
  double inference_units = 0.0;      // k + 1
  double communication_units = 0.0;  // (k+1)*b + 2*c
  double b = 0.0;
  double c = 0.0;
  double fedavg_storage_units = 0.0;        // N
  double fedavg_inference_units = 0.0;      // N
  double fedavg_communication_units = 0.0;  // N*b
  bool cheaper_than_fedavg = false;         // c < (N-k-1)*b/2
};

CostReport cost_report(const SplitPlan& plan, double b, double c);

struct SplitForwardResult {
  Matrix embedding;
  ActivationTape tape;
  std::vector<ExchangeRecord> log;
};

// Runs the forward pass with the client/server layer placement of `plan`.
// The embedding payloads cross the boundary as value copies, so the result
// is bit-identical to model_forward on the unsplit model.
SplitForwardResult split_forward(const HistorySequence& h, const LayeredModel& model,
                                 const SplitPlan& plan, double embedding_units = 1.0);

struct SplitBackwardResult {
  ModelGrads adapter_grads;
  std::vector<ExchangeRecord> log;
};

// Mirrors split_forward in reverse; gradients cross the boundary where the
// forward embeddings did. Clears the tape like model_backward.
SplitBackwardResult split_backward(const Matrix& grad_embedding, const LayeredModel& model,
                                   const SplitPlan& plan, ActivationTape& tape,
                                   double embedding_units = 1.0);

}  // namespace fellrec
