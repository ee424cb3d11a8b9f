#pragma once

#include <map>
#include <string>
#include <vector>

#include "fellrec/data.hpp"
#include "fellrec/model.hpp"

namespace fellrec {

enum class Distance { cosine, l2 };
Distance parse_distance(const std::string& name);
const char* to_string(Distance d);

// 1 - cosine similarity, or the euclidean norm of the difference.
double embedding_distance(const std::vector<double>& a, const std::vector<double>& b, Distance d);

struct RankingList {
  long user_id = -1;
  std::vector<int> items;     // K items, ascending distance, ties to smaller id
  std::vector<double> scores;  // matching distances
};

// The K items minimizing distance to the user embedding. Minimizing the
// summed distance of a size-K subset is achieved by the K smallest.
RankingList rank_items(const Matrix& user_embedding,
                       const std::vector<std::vector<double>>& item_embeddings, std::size_t k,
                       Distance distance, long user_id = -1);

// 1-based rank of `target` under the same (distance, id) ordering.
std::size_t target_rank(const Matrix& user_embedding,
                        const std::vector<std::vector<double>>& item_embeddings, int target,
                        Distance distance);

// 1 if the target appears in the top-K list, else 0.
double recall_at_k(const RankingList& ranking, int target);

// 1/log2(rank+1) if the target appears at `rank` (1-based), else 0.
double ndcg_at_k(const RankingList& ranking, int target);

// (best - worst) / worst. A zero worst value yields +infinity with a warning.
double imbalance_degree(const std::vector<double>& per_client_metric);

struct ClientMetrics {
  std::map<int, double> recall;  // keyed by K
  std::map<int, double> ndcg;
  std::size_t num_examples = 0;
};

struct MetricsReport {
  std::vector<ClientMetrics> per_client;
  ClientMetrics macro;       // mean over clients with at least one example
  double imbalance = 0.0;    // on recall at the smallest K
  int imbalance_k = 10;
};

// Full-ranking evaluation over the whole catalog, no masking; metrics are
// per-example means within each client.
MetricsReport evaluate_clients(const std::vector<const LayeredModel*>& models,
                               const std::vector<std::vector<Example>>& per_client_examples,
                               const std::vector<int>& ks, Distance distance);

void write_metrics_csv(const std::string& path, const MetricsReport& report);
void write_metrics_json(const std::string& path, const MetricsReport& report);

}  // namespace fellrec
