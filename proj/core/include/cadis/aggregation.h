#pragma once

#include <optional>
#include <span>
#include <vector>

#include "cadis/nn.h"
#include "cadis/similarity.h"

namespace cadis {

// How M_i, the cluster cardinality in the CADIS weight, is counted.
enum class ClusterCardinality {
  kRoundParticipants,  // participants of this round sharing i's cluster
  kAllClients,         // every client in i's cluster
};

struct WeightVector {
  std::vector<ClientId> clients;
  std::vector<double> weights;  // aligned with clients, sum to 1

  std::size_t size() const { return clients.size(); }
};

// alpha_i = (1 / M_i) * (n_i / N), normalized. N defaults to the sum of
// participant sample counts; it cancels in the normalization.
WeightVector cadis_weights(std::span<const ClientId> participants, const ClusterAssignment& assignment,
                           std::span<const std::size_t> sample_counts,
                           std::optional<double> total_samples = std::nullopt,
                           ClusterCardinality cardinality = ClusterCardinality::kRoundParticipants);

// p_i = n_i / sum n.
WeightVector fedavg_weights(std::span<const ClientId> participants,
                            std::span<const std::size_t> sample_counts);

// Convex combination sum_i w_i * model_i.
ModelParams aggregate(std::span<const ModelParams> models, const WeightVector& weights);

}  // namespace cadis
