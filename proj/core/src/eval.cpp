#include "fellrec/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "fellrec/errors.hpp"

#include <nlohmann/json.hpp>

namespace fellrec {

namespace {

bool ranks_before(double dist_a, int id_a, double dist_b, int id_b) {
  if (dist_a != dist_b) return dist_a < dist_b;
  return id_a < id_b;
}

std::string format_metric(double v) {
  if (std::isinf(v)) return "inf";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

}  // namespace

Distance parse_distance(const std::string& name) {
  if (name == "cosine") return Distance::cosine;
  if (name == "l2") return Distance::l2;
  throw ConfigError("unknown distance: " + name);
}

const char* to_string(Distance d) { return d == Distance::cosine ? "cosine" : "l2"; }

double embedding_distance(const std::vector<double>& a, const std::vector<double>& b,
                          Distance d) {
  if (a.size() != b.size()) throw ContractViolation("embedding_distance: length mismatch");
  if (d == Distance::cosine) {
    const double na = l2_norm(a);
    const double nb = l2_norm(b);
    if (na == 0.0 || nb == 0.0) throw NumericError("embedding_distance: zero-norm vector");
    return 1.0 - dot(a, b) / (na * nb);
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = a[i] - b[i];
    acc += diff * diff;
  }
  return std::sqrt(acc);
}

RankingList rank_items(const Matrix& user_embedding,
                       const std::vector<std::vector<double>>& item_embeddings, std::size_t k,
                       Distance distance, long user_id) {
  if (k == 0) throw ContractViolation("rank_items: K must be >= 1");
  if (k > item_embeddings.size()) throw ContractViolation("rank_items: K exceeds catalog size");

  std::vector<std::pair<double, int>> scored(item_embeddings.size());
  for (std::size_t i = 0; i < item_embeddings.size(); ++i) {
    scored[i] = {embedding_distance(user_embedding.data, item_embeddings[i], distance),
                 static_cast<int>(i)};
  }
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k), scored.end(),
                    [](const auto& a, const auto& b) {
                      return ranks_before(a.first, a.second, b.first, b.second);
                    });

  RankingList out;
  out.user_id = user_id;
  for (std::size_t i = 0; i < k; ++i) {
    out.items.push_back(scored[i].second);
    out.scores.push_back(scored[i].first);
  }
  return out;
}

std::size_t target_rank(const Matrix& user_embedding,
                        const std::vector<std::vector<double>>& item_embeddings, int target,
                        Distance distance) {
  if (target < 0 || static_cast<std::size_t>(target) >= item_embeddings.size()) {
    throw NotFoundError("target_rank: target outside catalog");
  }
  const double target_dist = embedding_distance(
      user_embedding.data, item_embeddings[static_cast<std::size_t>(target)], distance);
  std::size_t rank = 1;
  for (std::size_t i = 0; i < item_embeddings.size(); ++i) {
    if (static_cast<int>(i) == target) continue;
    const double dist = embedding_distance(user_embedding.data, item_embeddings[i], distance);
    if (ranks_before(dist, static_cast<int>(i), target_dist, target)) ++rank;
  }
  return rank;
}

double recall_at_k(const RankingList& ranking, int target) {
  for (int item : ranking.items) {
    if (item == target) return 1.0;
  }
  return 0.0;
}

double ndcg_at_k(const RankingList& ranking, int target) {
  for (std::size_t i = 0; i < ranking.items.size(); ++i) {
    if (ranking.items[i] == target) {
      return 1.0 / std::log2(static_cast<double>(i + 2));
    }
  }
  return 0.0;
}

double imbalance_degree(const std::vector<double>& per_client_metric) {
  if (per_client_metric.empty()) throw ContractViolation("imbalance_degree: no clients");
  double best = per_client_metric[0];
  double worst = per_client_metric[0];
  for (double v : per_client_metric) {
    if (v < 0.0) throw ContractViolation("imbalance_degree: negative metric value");
    best = std::max(best, v);
    worst = std::min(worst, v);
  }
  if (worst == 0.0) {
    log_warning("imbalance_degree: worst client metric is zero, reporting +inf");
    return std::numeric_limits<double>::infinity();
  }
  return (best - worst) / worst;
}

MetricsReport evaluate_clients(const std::vector<const LayeredModel*>& models,
                               const std::vector<std::vector<Example>>& per_client_examples,
                               const std::vector<int>& ks, Distance distance) {
  if (models.size() != per_client_examples.size()) {
    throw ContractViolation("evaluate_clients: model/example count mismatch");
  }
  if (ks.empty()) throw ContractViolation("evaluate_clients: no K values");
  std::vector<int> sorted_ks = ks;
  std::sort(sorted_ks.begin(), sorted_ks.end());

  MetricsReport report;
  report.imbalance_k = sorted_ks.front();

  for (std::size_t c = 0; c < models.size(); ++c) {
    ClientMetrics metrics;
    for (int k : sorted_ks) {
      metrics.recall[k] = 0.0;
      metrics.ndcg[k] = 0.0;
    }
    const auto& items = models[c]->item_embedding_cache();
    for (const Example& example : per_client_examples[c]) {
      const ForwardResult fwd = model_forward(example.first, *models[c]);
      const std::size_t rank = target_rank(fwd.embedding, items, example.second, distance);
      for (int k : sorted_ks) {
        if (rank <= static_cast<std::size_t>(k)) {
          metrics.recall[k] += 1.0;
          metrics.ndcg[k] += 1.0 / std::log2(static_cast<double>(rank + 1));
        }
      }
      ++metrics.num_examples;
    }
    if (metrics.num_examples > 0) {
      for (int k : sorted_ks) {
        metrics.recall[k] /= static_cast<double>(metrics.num_examples);
        metrics.ndcg[k] /= static_cast<double>(metrics.num_examples);
      }
    } else {
      log_warning("client " + std::to_string(c) + " has no evaluation examples");
    }
    report.per_client.push_back(std::move(metrics));
  }

  std::size_t populated = 0;
  for (int k : sorted_ks) {
    report.macro.recall[k] = 0.0;
    report.macro.ndcg[k] = 0.0;
  }
  std::vector<double> imbalance_inputs;
  for (const ClientMetrics& m : report.per_client) {
    if (m.num_examples == 0) continue;
    ++populated;
    report.macro.num_examples += m.num_examples;
    for (int k : sorted_ks) {
      report.macro.recall[k] += m.recall.at(k);
      report.macro.ndcg[k] += m.ndcg.at(k);
    }
    imbalance_inputs.push_back(m.recall.at(report.imbalance_k));
  }
  if (populated > 0) {
    for (int k : sorted_ks) {
      report.macro.recall[k] /= static_cast<double>(populated);
      report.macro.ndcg[k] /= static_cast<double>(populated);
    }
    report.imbalance = imbalance_degree(imbalance_inputs);
  }
  return report;
}

void write_metrics_csv(const std::string& path, const MetricsReport& report) {
  std::ofstream out(path);
  if (!out) throw IoError("write_metrics_csv: cannot write " + path);

  out << "client";
  for (const auto& [k, v] : report.macro.recall) out << ",recall_at_" << k;
  for (const auto& [k, v] : report.macro.ndcg) out << ",ndcg_at_" << k;
  out << ",num_examples,imbalance_degree\n";

  for (std::size_t c = 0; c < report.per_client.size(); ++c) {
    const ClientMetrics& m = report.per_client[c];
    out << c;
    for (const auto& [k, v] : m.recall) out << "," << format_metric(v);
    for (const auto& [k, v] : m.ndcg) out << "," << format_metric(v);
    out << "," << m.num_examples << ",\n";
  }
  out << "macro";
  for (const auto& [k, v] : report.macro.recall) out << "," << format_metric(v);
  for (const auto& [k, v] : report.macro.ndcg) out << "," << format_metric(v);
  out << "," << report.macro.num_examples << "," << format_metric(report.imbalance) << "\n";
}

namespace {

nlohmann::json client_metrics_to_json(const ClientMetrics& m) {
  nlohmann::json recall, ndcg;
  for (const auto& [k, v] : m.recall) recall[std::to_string(k)] = v;
  for (const auto& [k, v] : m.ndcg) ndcg[std::to_string(k)] = v;
  return {{"recall", recall}, {"ndcg", ndcg}, {"num_examples", m.num_examples}};
}

}  // namespace

void write_metrics_json(const std::string& path, const MetricsReport& report) {
  nlohmann::json per_client = nlohmann::json::array();
  for (const ClientMetrics& m : report.per_client) per_client.push_back(client_metrics_to_json(m));
  nlohmann::json j = {
      {"per_client", per_client},
      {"macro", client_metrics_to_json(report.macro)},
      {"imbalance_metric", "recall@" + std::to_string(report.imbalance_k)},
  };
  if (std::isinf(report.imbalance)) {
    j["imbalance_degree"] = "inf";
  } else {
    j["imbalance_degree"] = report.imbalance;
  }
  std::ofstream out(path);
  if (!out) throw IoError("write_metrics_json: cannot write " + path);
  out << j.dump(2) << "\n";
}

}  // namespace fellrec
