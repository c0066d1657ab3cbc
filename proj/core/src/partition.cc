#include "cadis/partition.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "cadis/rng.h"

namespace cadis {

namespace {

constexpr double kLogNormalSigma = 0.5;

// Cluster c takes the c-th contiguous block of a shuffled class order,
// wrapping when the blocks run past the class count.
std::vector<std::vector<int>> block_label_sets(std::size_t clusters, std::size_t per_set,
                                               int num_classes, Rng& rng) {
  std::vector<int> order(static_cast<std::size_t>(num_classes));
  std::iota(order.begin(), order.end(), 0);
  shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<int>> sets(clusters);
  for (std::size_t c = 0; c < clusters; ++c) {
    for (std::size_t m = 0; m < per_set; ++m) {
      sets[c].push_back(order[(c * per_set + m) % order.size()]);
    }
    std::sort(sets[c].begin(), sets[c].end());
  }
  return sets;
}

// Distributes each class pool over the clients holding that class. With
// `balanced`, every holder gets the same per-class count; otherwise shares
// follow the per-client multipliers with at least one sample each.
void fill_from_pools(const std::vector<std::vector<std::size_t>>& pools,
                     const std::vector<std::vector<int>>& client_labels,
                     const std::vector<double>& multipliers, bool balanced,
                     std::vector<ClientShard>& shards) {
  const auto num_classes = pools.size();
  std::vector<std::vector<std::size_t>> holders(num_classes);
  for (std::size_t c = 0; c < client_labels.size(); ++c) {
    for (int y : client_labels[c]) holders[static_cast<std::size_t>(y)].push_back(c);
  }

  std::size_t per_label = SIZE_MAX;
  for (std::size_t y = 0; y < num_classes; ++y) {
    if (holders[y].empty()) continue;
    if (pools[y].size() < holders[y].size()) {
      throw SpecError("class " + std::to_string(y) + " has " + std::to_string(pools[y].size()) +
                      " samples for " + std::to_string(holders[y].size()) + " clients");
    }
    per_label = std::min(per_label, pools[y].size() / holders[y].size());
  }

  for (std::size_t y = 0; y < num_classes; ++y) {
    const auto& hs = holders[y];
    if (hs.empty()) continue;
    std::vector<std::size_t> counts;
    if (balanced) {
      counts.assign(hs.size(), per_label);
    } else {
      std::vector<double> w;
      for (auto c : hs) w.push_back(multipliers[c]);
      counts = apportion(pools[y].size() - hs.size(), w);
      for (auto& k : counts) ++k;
    }
    std::size_t cursor = 0;
    for (std::size_t h = 0; h < hs.size(); ++h) {
      auto& idx = shards[hs[h]].indices;
      idx.insert(idx.end(), pools[y].begin() + static_cast<std::ptrdiff_t>(cursor),
                 pools[y].begin() + static_cast<std::ptrdiff_t>(cursor + counts[h]));
      cursor += counts[h];
    }
  }
}

std::vector<double> lognormal_multipliers(std::size_t n, Rng& rng) {
  std::vector<double> m(n);
  for (auto& x : m) x = std::exp(kLogNormalSigma * standard_normal(rng));
  return m;
}

Partition clustered_partition(const Dataset& dataset, const PartitionSpec& spec,
                              const std::vector<std::size_t>& cluster_sizes, bool balanced,
                              Rng& rng) {
  const std::size_t per_set = spec.labels_per_client(dataset.num_classes);
  Partition out;
  out.cluster_labels = block_label_sets(cluster_sizes.size(), per_set, dataset.num_classes, rng);

  std::vector<std::vector<int>> client_labels;
  for (std::size_t c = 0; c < cluster_sizes.size(); ++c) {
    for (std::size_t k = 0; k < cluster_sizes[c]; ++k) {
      ClientShard shard;
      shard.client = out.shards.size();
      shard.cluster = c;
      out.shards.push_back(std::move(shard));
      client_labels.push_back(out.cluster_labels[c]);
    }
  }

  auto pools = dataset.indices_by_class();
  for (auto& pool : pools) shuffle(pool.begin(), pool.end(), rng);
  const auto multipliers = lognormal_multipliers(out.shards.size(), rng);
  fill_from_pools(pools, client_labels, multipliers, balanced, out.shards);
  return out;
}

Partition pareto_partition(const Dataset& dataset, const PartitionSpec& spec, Rng& rng) {
  const auto n = spec.num_clients;
  Partition out;
  out.shards.resize(n);
  for (std::size_t c = 0; c < n; ++c) {
    out.shards[c].client = c;
    out.shards[c].cluster = c;
  }

  auto pools = dataset.indices_by_class();
  // rank[y][c]: 1-based position of client c in class y's power-law order.
  std::vector<std::vector<std::size_t>> rank(pools.size(), std::vector<std::size_t>(n));
  std::vector<std::vector<std::size_t>> counts(pools.size());
  for (std::size_t y = 0; y < pools.size(); ++y) {
    shuffle(pools[y].begin(), pools[y].end(), rng);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle(order.begin(), order.end(), rng);
    std::vector<double> w(n);
    for (std::size_t r = 0; r < n; ++r) {
      rank[y][order[r]] = r + 1;
      w[order[r]] = std::pow(static_cast<double>(r + 1), -spec.pareto_shape);
    }
    counts[y] = apportion(pools[y].size(), w);
  }

  // Every client needs one sample: borrow from the heaviest holder of the
  // class where the client ranks best.
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t total = 0;
    for (const auto& cy : counts) total += cy[c];
    if (total > 0) continue;
    std::size_t best = 0;
    for (std::size_t y = 1; y < pools.size(); ++y) {
      if (rank[y][c] < rank[best][c]) best = y;
    }
    auto donor = static_cast<std::size_t>(
        std::max_element(counts[best].begin(), counts[best].end()) - counts[best].begin());
    if (counts[best][donor] < 2) throw SpecError("not enough samples to give every client one");
    --counts[best][donor];
    ++counts[best][c];
  }

  for (std::size_t y = 0; y < pools.size(); ++y) {
    std::size_t cursor = 0;
    for (std::size_t c = 0; c < n; ++c) {
      auto& idx = out.shards[c].indices;
      idx.insert(idx.end(), pools[y].begin() + static_cast<std::ptrdiff_t>(cursor),
                 pools[y].begin() + static_cast<std::ptrdiff_t>(cursor + counts[y][c]));
      cursor += counts[y][c];
    }
  }
  return out;
}

}  // namespace

std::string to_string(Scheme scheme) {
  switch (scheme) {
    case Scheme::kMultiCluster: return "MC";
    case Scheme::kPareto: return "PA";
    case Scheme::kBalancedCluster: return "BC";
    case Scheme::kUnbalancedCluster: return "UC";
  }
  return "?";
}

Scheme parse_scheme(const std::string& name) {
  if (name == "MC") return Scheme::kMultiCluster;
  if (name == "PA") return Scheme::kPareto;
  if (name == "BC") return Scheme::kBalancedCluster;
  if (name == "UC") return Scheme::kUnbalancedCluster;
  throw ConfigError("unknown partition scheme '" + name + "' (expected MC, PA, BC or UC)");
}

void PartitionSpec::validate() const {
  if (num_clients < 1) throw SpecError("partition needs at least one client");
  if (!(label_fraction > 0.0 && label_fraction <= 1.0)) {
    throw SpecError("label fraction must be in (0, 1]");
  }
  if (scheme == Scheme::kMultiCluster) {
    if (cluster_ratios.empty()) throw SpecError("cluster ratios must not be empty");
    for (double r : cluster_ratios) {
      if (!(r > 0.0)) throw SpecError("cluster ratios must be positive");
    }
    if (num_clients < cluster_ratios.size()) {
      throw SpecError("fewer clients than clusters");
    }
  }
  if (scheme == Scheme::kBalancedCluster || scheme == Scheme::kUnbalancedCluster) {
    if (!(big_cluster_share > 0.0 && big_cluster_share <= 1.0)) {
      throw SpecError("cluster share must be in (0, 1]");
    }
  }
  if (scheme == Scheme::kPareto && !(pareto_shape > 0.0)) {
    throw SpecError("pareto shape must be positive");
  }
}

std::size_t PartitionSpec::labels_per_client(int num_classes) const {
  const auto k = static_cast<std::size_t>(std::ceil(label_fraction * num_classes - 1e-9));
  return std::clamp<std::size_t>(k, 1, static_cast<std::size_t>(num_classes));
}

std::vector<std::size_t> Partition::cluster_sizes() const {
  std::vector<std::size_t> sizes;
  for (const auto& s : shards) {
    if (s.cluster >= sizes.size()) sizes.resize(s.cluster + 1, 0);
    ++sizes[s.cluster];
  }
  return sizes;
}

std::vector<std::size_t> Partition::ground_truth() const {
  std::vector<std::size_t> truth;
  for (const auto& s : shards) truth.push_back(s.cluster);
  return truth;
}

std::vector<std::size_t> apportion(std::size_t total, const std::vector<double>& weights) {
  std::vector<std::size_t> out(weights.size(), 0);
  if (weights.empty()) return out;
  const double sum = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (!(sum > 0.0)) throw SpecError("apportion weights must have a positive sum");
  std::vector<double> remainder(weights.size());
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double exact = static_cast<double>(total) * weights[i] / sum;
    out[i] = static_cast<std::size_t>(std::floor(exact));
    remainder[i] = exact - static_cast<double>(out[i]);
    assigned += out[i];
  }
  std::vector<std::size_t> order(weights.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t k = 0; assigned < total; ++k, ++assigned) ++out[order[k % order.size()]];
  return out;
}

Partition partition(const Dataset& dataset, const PartitionSpec& spec) {
  spec.validate();
  dataset.validate();
  Rng rng = make_rng(spec.seed, {static_cast<std::uint64_t>(Stream::kPartition)});
  const auto n = spec.num_clients;

  Partition out;
  switch (spec.scheme) {
    case Scheme::kMultiCluster: {
      const auto clusters = spec.cluster_ratios.size();
      auto sizes = apportion(n - clusters, spec.cluster_ratios);
      for (auto& s : sizes) ++s;
      out = clustered_partition(dataset, spec, sizes, spec.balanced.value_or(false), rng);
      break;
    }
    case Scheme::kBalancedCluster:
    case Scheme::kUnbalancedCluster: {
      const auto big = std::min(
          n, static_cast<std::size_t>(std::ceil(spec.big_cluster_share * static_cast<double>(n) - 1e-9)));
      std::vector<std::size_t> sizes{big};
      sizes.resize(1 + (n - big), 1);
      const bool balanced = spec.balanced.value_or(spec.scheme == Scheme::kBalancedCluster);
      out = clustered_partition(dataset, spec, sizes, balanced, rng);
      break;
    }
    case Scheme::kPareto:
      out = pareto_partition(dataset, spec, rng);
      break;
  }
  for (auto& s : out.shards) {
    std::sort(s.indices.begin(), s.indices.end());
    if (s.indices.empty()) throw SpecError("client " + std::to_string(s.client) + " got no samples");
  }
  return out;
}

nlohmann::json manifest_json(const Partition& partition, const PartitionSpec& spec) {
  nlohmann::json clients = nlohmann::json::array();
  for (const auto& s : partition.shards) {
    clients.push_back({{"id", s.client}, {"cluster", s.cluster}, {"indices", s.indices}});
  }
  return {{"scheme", to_string(spec.scheme)},
          {"seed", spec.seed},
          {"num_clients", spec.num_clients},
          {"cluster_labels", partition.cluster_labels},
          {"clients", std::move(clients)}};
}

}  // namespace cadis
