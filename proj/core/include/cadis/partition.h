#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "cadis/dataset.h"

namespace cadis {

enum class Scheme { kMultiCluster, kPareto, kBalancedCluster, kUnbalancedCluster };

std::string to_string(Scheme scheme);  // "MC", "PA", "BC", "UC"
Scheme parse_scheme(const std::string& name);

struct PartitionSpec {
  Scheme scheme = Scheme::kMultiCluster;
  std::size_t num_clients = 100;
  std::vector<double> cluster_ratios = {3, 3, 2, 1, 1};
  double label_fraction = 0.2;
  double big_cluster_share = 0.6;
  double pareto_shape = 3.0;
  // Unset: MC and UC are unbalanced, BC is balanced; PA ignores it.
  std::optional<bool> balanced;
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t labels_per_client(int num_classes) const;
};

struct ClientShard {
  ClientId client = 0;
  std::vector<std::size_t> indices;
  std::size_t cluster = 0;  // ground truth

  std::size_t num_samples() const { return indices.size(); }
};

struct Partition {
  std::vector<ClientShard> shards;
  // Ground-truth label set of each cluster (empty for PA).
  std::vector<std::vector<int>> cluster_labels;

  std::vector<std::size_t> cluster_sizes() const;
  std::vector<std::size_t> ground_truth() const;
};

// Splits the largest-remainder way: sizes sum to `total` exactly.
std::vector<std::size_t> apportion(std::size_t total, const std::vector<double>& weights);

Partition partition(const Dataset& dataset, const PartitionSpec& spec);

// {"scheme", "seed", "clients": [{"id", "cluster", "indices"}...]}
nlohmann::json manifest_json(const Partition& partition, const PartitionSpec& spec);

}  // namespace cadis
