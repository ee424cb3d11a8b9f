#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fellrec/model.hpp"
#include "fellrec/rng.hpp"

namespace fellrec {

struct InteractionEvent {
  long user_id = 0;
  int item_id = 0;
  long timestamp = 0;
};

// Flat interaction log with dense ids in [0, num_users) / [0, num_items).
struct InteractionLog {
  std::vector<InteractionEvent> events;
  int num_users = 0;
  int num_items = 0;
};

// UTF-8 TSV with header: user_id<TAB>item_id<TAB>timestamp (integer seconds).
void save_interaction_log(const std::string& path, const InteractionLog& log);
InteractionLog load_interaction_log(const std::string& path);

struct SyntheticParams {
  int num_users = 50;
  int num_items = 100;
  int num_clusters = 5;
  int events_per_user = 12;
  std::uint64_t seed = 0;
};

struct SyntheticData {
  InteractionLog log;
  std::vector<std::vector<double>> user_latents;  // cluster-centered preference vectors
  std::vector<int> user_clusters;                 // generating cluster per user
};

// Users sit in latent preference clusters; each event samples a cluster by
// softmax affinity of the user's latent vector and then an item uniformly
// from that cluster's contiguous item block. Deterministic under seed.
SyntheticData generate_synthetic(const SyntheticParams& params);

// Which contiguous item block an item belongs to (num_clusters blocks).
int item_cluster_of(int item_id, int num_items, int num_clusters);

using Example = std::pair<HistorySequence, int>;  // (prefix history, next item)

struct UserExamples {
  std::vector<Example> train;
  std::vector<Example> valid;
  std::vector<Example> test;
};

struct SplitDataset {
  std::vector<UserExamples> per_user;  // indexed by user id; excluded users stay empty
  std::vector<long> excluded_users;    // users with fewer than 3 events
};

// Chronological 8:1:1 per user: test and valid each get ceil(n/10) (>= 1)
// of the newest events, train the remainder. Every example pairs the full
// preceding prefix (truncated to max_len) with the next item.
SplitDataset chronological_split(const InteractionLog& log, int max_len = 10);

struct ClientPartition {
  std::vector<int> assignment;  // user id -> client id
  int num_clients = 0;
};

// Lloyd k-means with seeded init, at most `max_iter` sweeps, and empty
// clusters repaired by stealing the farthest point from the largest cluster.
std::vector<int> kmeans_assign(const std::vector<std::vector<double>>& points, int k, Rng& rng,
                               int max_iter = 50);

ClientPartition partition_clustered(const std::vector<std::vector<double>>& latents,
                                    int num_clients, std::uint64_t seed);

// Assigns users to clients with cluster-conditional proportions drawn from a
// symmetric Dirichlet; smaller concentration means higher heterogeneity.
// User clusters are derived from item-histogram profiles via k-means.
ClientPartition partition_dirichlet(const InteractionLog& log, int num_clients,
                                    double concentration, std::uint64_t seed);

void save_partition_json(const std::string& path, const ClientPartition& partition);
ClientPartition load_partition_json(const std::string& path);

void save_latents_json(const std::string& path, const std::vector<std::vector<double>>& latents);
std::vector<std::vector<double>> load_latents_json(const std::string& path);

enum class SplitKind { train, valid, test };

// Per-client example lists, users in ascending id order.
std::vector<std::vector<Example>> client_examples(const SplitDataset& split,
                                                  const ClientPartition& partition,
                                                  SplitKind kind);

}  // namespace fellrec
