#include "fellrec/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "fellrec/errors.hpp"

#include <nlohmann/json.hpp>

namespace fellrec {

namespace {

std::vector<std::vector<std::pair<long, int>>> events_by_user(const InteractionLog& log) {
  std::vector<std::vector<std::pair<long, int>>> per_user(
      static_cast<std::size_t>(log.num_users));
  for (const InteractionEvent& e : log.events) {
    if (e.user_id < 0 || e.user_id >= log.num_users) {
      throw ContractViolation("interaction log: user id outside [0, num_users)");
    }
    if (e.item_id < 0 || e.item_id >= log.num_items) {
      throw ContractViolation("interaction log: item id outside [0, num_items)");
    }
    per_user[static_cast<std::size_t>(e.user_id)].push_back({e.timestamp, e.item_id});
  }
  for (auto& events : per_user) {
    std::stable_sort(events.begin(), events.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
  }
  return per_user;
}

double squared_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = a[i] - b[i];
    acc += diff * diff;
  }
  return acc;
}

}  // namespace

void save_interaction_log(const std::string& path, const InteractionLog& log) {
  std::ofstream out(path);
  if (!out) throw IoError("save_interaction_log: cannot write " + path);
  out << "user_id\titem_id\ttimestamp\n";
  for (const InteractionEvent& e : log.events) {
    out << e.user_id << "\t" << e.item_id << "\t" << e.timestamp << "\n";
  }
}

InteractionLog load_interaction_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("load_interaction_log: cannot open " + path);

  std::string line;
  if (!std::getline(in, line)) throw IoError("load_interaction_log: empty file " + path);
  if (line != "user_id\titem_id\ttimestamp") {
    throw IoError("load_interaction_log: unexpected header in " + path);
  }

  InteractionLog log;
  long max_user = -1;
  int max_item = -1;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream fields(line);
    InteractionEvent e;
    char tab1 = 0, tab2 = 0;
    if (!(fields >> e.user_id >> std::noskipws >> tab1 >> std::skipws >> e.item_id >>
          std::noskipws >> tab2 >> std::skipws >> e.timestamp) ||
        tab1 != '\t' || tab2 != '\t') {
      throw IoError("load_interaction_log: malformed line " + std::to_string(line_no) + " in " +
                    path);
    }
    if (e.user_id < 0 || e.item_id < 0) {
      throw IoError("load_interaction_log: negative id at line " + std::to_string(line_no));
    }
    max_user = std::max(max_user, e.user_id);
    max_item = std::max(max_item, e.item_id);
    log.events.push_back(e);
  }
  log.num_users = static_cast<int>(max_user + 1);
  log.num_items = max_item + 1;
  return log;
}

int item_cluster_of(int item_id, int num_items, int num_clusters) {
  return static_cast<int>((static_cast<long>(item_id) * num_clusters) / num_items);
}

SyntheticData generate_synthetic(const SyntheticParams& params) {
  if (params.num_users < 1 || params.num_items < 1 || params.num_clusters < 1 ||
      params.events_per_user < 1) {
    throw ContractViolation("generate_synthetic: counts must be >= 1");
  }
  if (params.num_clusters > params.num_items) {
    throw ContractViolation("generate_synthetic: more clusters than items");
  }

  Rng rng(params.seed);
  const int g = params.num_clusters;

  // Item blocks per cluster.
  std::vector<std::vector<int>> cluster_items(static_cast<std::size_t>(g));
  for (int item = 0; item < params.num_items; ++item) {
    cluster_items[static_cast<std::size_t>(item_cluster_of(item, params.num_items, g))]
        .push_back(item);
  }

  SyntheticData data;
  data.log.num_users = params.num_users;
  data.log.num_items = params.num_items;

  for (int user = 0; user < params.num_users; ++user) {
    const int cluster = user % g;
    data.user_clusters.push_back(cluster);

    std::vector<double> latent(static_cast<std::size_t>(g));
    for (int j = 0; j < g; ++j) {
      latent[static_cast<std::size_t>(j)] = (j == cluster ? 3.0 : 0.0) + 0.25 * rng.normal();
    }
    data.user_latents.push_back(latent);

    // Cluster affinity = softmax of the latent coordinates.
    std::vector<double> affinity(static_cast<std::size_t>(g));
    double max_coord = latent[0];
    for (double v : latent) max_coord = std::max(max_coord, v);
    for (int j = 0; j < g; ++j) {
      affinity[static_cast<std::size_t>(j)] = std::exp(latent[static_cast<std::size_t>(j)] -
                                                        max_coord);
    }

    for (int e = 0; e < params.events_per_user; ++e) {
      const std::size_t chosen = rng.categorical(affinity);
      const auto& items = cluster_items[chosen];
      const int item = items[rng.index(items.size())];
      data.log.events.push_back({user, item, static_cast<long>(e)});
    }
  }
  return data;
}

SplitDataset chronological_split(const InteractionLog& log, int max_len) {
  if (max_len < 1) throw ContractViolation("chronological_split: max_len must be >= 1");
  const auto per_user = events_by_user(log);

  SplitDataset split;
  split.per_user.resize(per_user.size());

  for (std::size_t user = 0; user < per_user.size(); ++user) {
    const auto& events = per_user[user];
    const std::size_t n = events.size();
    if (n < 3) {
      if (n > 0) {
        log_warning("user " + std::to_string(user) + " has " + std::to_string(n) +
                    " events (< 3), excluded from the split");
      }
      split.excluded_users.push_back(static_cast<long>(user));
      continue;
    }

    const std::size_t n_test = (n + 9) / 10;   // ceil(n/10), >= 1
    const std::size_t n_valid = (n + 9) / 10;  // ceil(n/10), >= 1
    const std::size_t n_train = n - n_test - n_valid;

    const auto make_example = [&](std::size_t target_index) {
      HistorySequence h;
      h.user_id = static_cast<long>(user);
      const std::size_t start =
          target_index > static_cast<std::size_t>(max_len) ? target_index - max_len : 0;
      for (std::size_t i = start; i < target_index; ++i) h.item_ids.push_back(events[i].second);
      return Example{std::move(h), events[target_index].second};
    };

    UserExamples& ex = split.per_user[user];
    for (std::size_t j = 1; j < n_train; ++j) ex.train.push_back(make_example(j));
    for (std::size_t j = n_train; j < n_train + n_valid; ++j) ex.valid.push_back(make_example(j));
    for (std::size_t j = n_train + n_valid; j < n; ++j) ex.test.push_back(make_example(j));
  }
  return split;
}

std::vector<int> kmeans_assign(const std::vector<std::vector<double>>& points, int k, Rng& rng,
                               int max_iter) {
  const std::size_t n = points.size();
  if (k < 1) throw ContractViolation("kmeans_assign: k must be >= 1");
  if (static_cast<std::size_t>(k) > n) throw ContractViolation("kmeans_assign: k exceeds points");
  const std::size_t dim = points[0].size();

  // Seeded init: k distinct points as centers.
  const std::vector<std::size_t> perm = rng.permutation(n);
  std::vector<std::vector<double>> centers;
  for (int c = 0; c < k; ++c) centers.push_back(points[perm[static_cast<std::size_t>(c)]]);

  std::vector<int> assignment(n, -1);
  for (int iter = 0; iter < max_iter; ++iter) {
    bool changed = false;
    for (std::size_t p = 0; p < n; ++p) {
      int best = 0;
      double best_dist = squared_distance(points[p], centers[0]);
      for (int c = 1; c < k; ++c) {
        const double dist = squared_distance(points[p], centers[static_cast<std::size_t>(c)]);
        if (dist < best_dist) {
          best_dist = dist;
          best = c;
        }
      }
      if (assignment[p] != best) {
        assignment[p] = best;
        changed = true;
      }
    }

    // Repair empty clusters with the farthest member of the largest cluster.
    std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(k));
    for (std::size_t p = 0; p < n; ++p) {
      members[static_cast<std::size_t>(assignment[p])].push_back(p);
    }
    for (int c = 0; c < k; ++c) {
      if (!members[static_cast<std::size_t>(c)].empty()) continue;
      int largest = 0;
      for (int o = 1; o < k; ++o) {
        if (members[static_cast<std::size_t>(o)].size() >
            members[static_cast<std::size_t>(largest)].size()) {
          largest = o;
        }
      }
      std::size_t farthest = members[static_cast<std::size_t>(largest)][0];
      double farthest_dist = -1.0;
      for (std::size_t p : members[static_cast<std::size_t>(largest)]) {
        const double dist =
            squared_distance(points[p], centers[static_cast<std::size_t>(largest)]);
        if (dist > farthest_dist) {
          farthest_dist = dist;
          farthest = p;
        }
      }
      auto& from = members[static_cast<std::size_t>(largest)];
      from.erase(std::find(from.begin(), from.end(), farthest));
      members[static_cast<std::size_t>(c)].push_back(farthest);
      assignment[farthest] = c;
      changed = true;
    }

    if (!changed) break;

    for (int c = 0; c < k; ++c) {
      auto& center = centers[static_cast<std::size_t>(c)];
      center.assign(dim, 0.0);
      const auto& mem = members[static_cast<std::size_t>(c)];
      for (std::size_t p : mem) {
        for (std::size_t j = 0; j < dim; ++j) center[j] += points[p][j];
      }
      for (std::size_t j = 0; j < dim; ++j) center[j] /= static_cast<double>(mem.size());
    }
  }
  return assignment;
}

ClientPartition partition_clustered(const std::vector<std::vector<double>>& latents,
                                    int num_clients, std::uint64_t seed) {
  if (num_clients < 1) throw ContractViolation("partition_clustered: num_clients must be >= 1");
  if (static_cast<std::size_t>(num_clients) > latents.size()) {
    throw ContractViolation("partition_clustered: more clients than users");
  }
  Rng rng(seed);
  ClientPartition partition;
  partition.num_clients = num_clients;
  partition.assignment = kmeans_assign(latents, num_clients, rng);
  return partition;
}

ClientPartition partition_dirichlet(const InteractionLog& log, int num_clients,
                                    double concentration, std::uint64_t seed) {
  if (num_clients < 1) throw ContractViolation("partition_dirichlet: num_clients must be >= 1");
  if (num_clients > log.num_users) {
    throw ContractViolation("partition_dirichlet: more clients than users");
  }
  if (concentration <= 0.0) {
    throw ContractViolation("partition_dirichlet: concentration must be positive");
  }

  // Item-histogram profile per user, bucketed to keep the k-means cheap.
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

  Rng rng(seed);
  const int num_groups = num_clients;  // derived preference groups stand in for classes
  const std::vector<int> groups = kmeans_assign(profiles, num_groups, rng);

  // Per group, client proportions from the Dirichlet draw.
  std::vector<std::vector<double>> proportions;
  for (int g = 0; g < num_groups; ++g) {
    proportions.push_back(rng.dirichlet(concentration, static_cast<std::size_t>(num_clients)));
  }

  ClientPartition partition;
  partition.num_clients = num_clients;
  partition.assignment.resize(static_cast<std::size_t>(log.num_users));
  for (int user = 0; user < log.num_users; ++user) {
    const auto& theta = proportions[static_cast<std::size_t>(groups[static_cast<std::size_t>(
        user)])];
    partition.assignment[static_cast<std::size_t>(user)] =
        static_cast<int>(rng.categorical(theta));
  }

  // Keep every client non-empty: move the smallest user id out of the
  // largest client until all clients are populated.
  while (true) {
    std::vector<std::vector<long>> members(static_cast<std::size_t>(num_clients));
    for (int user = 0; user < log.num_users; ++user) {
      members[static_cast<std::size_t>(partition.assignment[static_cast<std::size_t>(user)])]
          .push_back(user);
    }
    int empty = -1;
    for (int c = 0; c < num_clients; ++c) {
      if (members[static_cast<std::size_t>(c)].empty()) {
        empty = c;
        break;
      }
    }
    if (empty < 0) break;
    int largest = 0;
    for (int c = 1; c < num_clients; ++c) {
      if (members[static_cast<std::size_t>(c)].size() >
          members[static_cast<std::size_t>(largest)].size()) {
        largest = c;
      }
    }
    const long moved = members[static_cast<std::size_t>(largest)].front();
    partition.assignment[static_cast<std::size_t>(moved)] = empty;
  }
  return partition;
}

void save_partition_json(const std::string& path, const ClientPartition& partition) {
  nlohmann::json j;
  for (std::size_t user = 0; user < partition.assignment.size(); ++user) {
    j[std::to_string(user)] = partition.assignment[user];
  }
  std::ofstream out(path);
  if (!out) throw IoError("save_partition_json: cannot write " + path);
  out << j.dump(2) << "\n";
}

ClientPartition load_partition_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("load_partition_json: cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("load_partition_json: malformed JSON in " + path + ": " + e.what());
  }

  ClientPartition partition;
  long max_user = -1;
  for (const auto& [key, value] : j.items()) {
    max_user = std::max(max_user, std::stol(key));
  }
  partition.assignment.assign(static_cast<std::size_t>(max_user + 1), -1);
  int max_client = -1;
  for (const auto& [key, value] : j.items()) {
    const long user = std::stol(key);
    const int client = value.get<int>();
    if (client < 0) throw IoError("load_partition_json: negative client id");
    partition.assignment[static_cast<std::size_t>(user)] = client;
    max_client = std::max(max_client, client);
  }
  for (int v : partition.assignment) {
    if (v < 0) throw IoError("load_partition_json: missing user entry");
  }
  partition.num_clients = max_client + 1;
  return partition;
}

void save_latents_json(const std::string& path, const std::vector<std::vector<double>>& latents) {
  nlohmann::json j;
  for (std::size_t user = 0; user < latents.size(); ++user) {
    j[std::to_string(user)] = latents[user];
  }
  std::ofstream out(path);
  if (!out) throw IoError("save_latents_json: cannot write " + path);
  out << j.dump(2) << "\n";
}

std::vector<std::vector<double>> load_latents_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("load_latents_json: cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("load_latents_json: malformed JSON in " + path + ": " + e.what());
  }
  long max_user = -1;
  for (const auto& [key, value] : j.items()) max_user = std::max(max_user, std::stol(key));
  std::vector<std::vector<double>> latents(static_cast<std::size_t>(max_user + 1));
  for (const auto& [key, value] : j.items()) {
    latents[static_cast<std::size_t>(std::stol(key))] = value.get<std::vector<double>>();
  }
  return latents;
}

std::vector<std::vector<Example>> client_examples(const SplitDataset& split,
                                                  const ClientPartition& partition,
                                                  SplitKind kind) {
  if (partition.assignment.size() < split.per_user.size()) {
    throw ContractViolation("client_examples: partition does not cover all users");
  }
  std::vector<std::vector<Example>> out(static_cast<std::size_t>(partition.num_clients));
  for (std::size_t user = 0; user < split.per_user.size(); ++user) {
    const int client = partition.assignment[user];
    if (client < 0 || client >= partition.num_clients) {
      throw ContractViolation("client_examples: client id out of range");
    }
    const UserExamples& ex = split.per_user[user];
    const std::vector<Example>& source =
        kind == SplitKind::train ? ex.train : (kind == SplitKind::valid ? ex.valid : ex.test);
    out[static_cast<std::size_t>(client)].insert(out[static_cast<std::size_t>(client)].end(),
                                                 source.begin(), source.end());
  }
  return out;
}

}  // namespace fellrec
