#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fellrec/matrix.hpp"

namespace fellrec {

// Low-rank adapter attached to a frozen projection. The effective weight
// delta is scale * down * up (d x d); `up` starts at zero so a freshly
// initialized adapter is a no-op.
struct LoraAdapter {
  Matrix down;  // d x r
  Matrix up;    // r x d
  double scale = 1.0;

  std::size_t rank() const { return down.cols; }
};

// One layer of the model: frozen named weights plus the trainable adapters.
// Frozen weights never change after init_model; only adapters are updated.
struct LayerParams {
  std::map<std::string, Matrix> frozen;
  std::map<std::string, LoraAdapter> adapters;  // keys "q" and "v"
};

struct ModelConfig {
  int num_items = 0;
  int hidden_dim = 16;
  int num_layers = 6;
  int lora_rank = 4;
  double lora_scale = 1.0;
  int ffn_dim = 0;  // 0 -> 2 * hidden_dim
  int max_len = 10;
  double temperature = 0.1;
  std::uint64_t seed = 0;

  int effective_ffn_dim() const { return ffn_dim > 0 ? ffn_dim : 2 * hidden_dim; }
};

// Per-layer forward record; holds exactly what the backward pass consumes.
struct LayerTape {
  bool filled = false;
  Matrix input;       // block input, L x d
  Matrix ln1_xhat;    // normalized input rows
  std::vector<double> ln1_inv_std;
  Matrix ln1_out;     // a = g1 .* xhat + b1
  Matrix q, k, v;     // projections with adapters applied
  Matrix q_down_act;  // ln1_out * q.down, L x r
  Matrix v_down_act;
  Matrix attn;        // row-softmax attention weights, L x L
  Matrix h1;          // input + attention sublayer output
  Matrix ln2_xhat;
  std::vector<double> ln2_inv_std;
  Matrix ln2_out;
  Matrix ffn_pre;     // ln2_out * w1 + b1 (pre-ReLU), L x f
  Matrix block_out;   // h2, L x d
  Matrix pooled;      // layer N only: mean over positions, 1 x d
};

struct ActivationTape {
  std::vector<LayerTape> layers;  // indexed by layer - 1
  Matrix encoded_ids;             // 1 x L item ids as given to layer 1
  Matrix embedded_input;          // L x d embedding-lookup output

  bool has_layer(int layer_index) const {
    return layer_index >= 1 && layer_index <= static_cast<int>(layers.size()) &&
           layers[layer_index - 1].filled;
  }
  void clear();
};

// A user's interaction history; item ids must lie inside the catalog.
struct HistorySequence {
  long user_id = -1;
  std::vector<int> item_ids;
};

struct LoraGrad {
  Matrix down;
  Matrix up;
};
using AdapterGrads = std::map<std::string, LoraGrad>;
// One AdapterGrads per layer (index 0 = layer 1).
using ModelGrads = std::vector<AdapterGrads>;

// The full model. A single instance is single-threaded; the item-embedding
// cache is memoization keyed on adapter_version and never observable in
// results. Distinct instances are safe to use from distinct threads.
class LayeredModel {
 public:
  ModelConfig config;
  std::vector<LayerParams> layers;

  std::uint64_t adapter_version() const { return adapter_version_; }
  void bump_adapter_version() {
    ++adapter_version_;
  }

  // Cached embeddings of the single-item sequence [i] for every catalog item,
  // refreshed lazily when adapters have changed since the last refresh.
  const std::vector<std::vector<double>>& item_embedding_cache() const;

 private:
  std::uint64_t adapter_version_ = 0;
  mutable std::uint64_t cache_version_ = 0;
  mutable bool cache_valid_ = false;
  mutable std::vector<std::vector<double>> item_cache_;
};

LayeredModel init_model(const ModelConfig& config);

// Truncates to the most recent config.max_len items and encodes as a 1 x L
// row of item-id values, validating catalog bounds.
Matrix encode_history(const HistorySequence& h, const LayeredModel& model);

// layer_index is 1-based. Layer 1 takes the encoded id row and performs the
// embedding lookup before its block; layer N appends mean-pooling and the
// output head, returning a 1 x d embedding.
Matrix layer_forward(int layer_index, const Matrix& input, const LayeredModel& model,
                     ActivationTape& tape);

struct LayerBackwardResult {
  Matrix grad_in;  // for layer 1 this is the gradient wrt the embedded input
  AdapterGrads adapter_grads;
};
LayerBackwardResult layer_backward(int layer_index, const Matrix& grad_out,
                                   const LayeredModel& model, const ActivationTape& tape);

struct ForwardResult {
  Matrix embedding;  // 1 x d
  ActivationTape tape;
};
ForwardResult model_forward(const HistorySequence& h, const LayeredModel& model);

// Chains layer_backward from layer N down to 1 and clears the tape.
ModelGrads model_backward(const Matrix& grad_embedding, const LayeredModel& model,
                          ActivationTape& tape);

// Embedding of the single-item sequence [item_id], served from the cache.
Matrix item_embedding(int item_id, const LayeredModel& model);

struct LossResult {
  double loss = 0.0;
  Matrix grad_embedding;  // 1 x d, item embeddings treated as constants
};

// Softmax cross-entropy over cosine similarities between `embedding` and the
// given item embeddings at the given temperature.
LossResult recommendation_loss_with_items(const Matrix& embedding, int target,
                                          const std::vector<std::vector<double>>& items,
                                          double temperature);
// Same, using the model's cached item embeddings and configured temperature.
LossResult recommendation_loss(const Matrix& embedding, int target, const LayeredModel& model);

// Adapter <-> flat vector conversions. Order: layers 1..N; within a layer,
// adapters by name ("q" before "v"); within an adapter, down before up,
// row-major. This is the vec() layout used for aggregation similarity.
std::size_t adapter_vector_size(const ModelConfig& config);
std::vector<double> flatten_adapters(const LayeredModel& model);
void unflatten_adapters(LayeredModel& model, const std::vector<double>& flat);

ModelGrads zero_model_grads(const LayeredModel& model);
void accumulate_model_grads(ModelGrads& dst, const ModelGrads& src);
void scale_model_grads(ModelGrads& grads, double factor);

// SGD step on the adapters only; frozen weights are untouched.
void apply_adapter_step(LayeredModel& model, const ModelGrads& grads, double learning_rate);

}  // namespace fellrec
