#include "cadis/aggregation.h"

#include <algorithm>
#include <numeric>

namespace cadis {

namespace {

void check_counts(std::span<const ClientId> participants, std::span<const std::size_t> counts) {
  if (participants.empty()) throw std::invalid_argument("no participants to weight");
  if (participants.size() != counts.size()) {
    throw ShapeError("participant and sample-count lists differ in length");
  }
  for (auto c : counts) {
    if (c < 1) throw std::invalid_argument("every participant needs at least one sample");
  }
}

// Shared by both rules so that equal raw weights give bitwise-equal results.
WeightVector normalized(std::span<const ClientId> participants, std::vector<double> raw) {
  const double total = std::accumulate(raw.begin(), raw.end(), 0.0);
  for (auto& w : raw) w /= total;
  return {std::vector<ClientId>(participants.begin(), participants.end()), std::move(raw)};
}

}  // namespace

WeightVector cadis_weights(std::span<const ClientId> participants, const ClusterAssignment& assignment,
                           std::span<const std::size_t> sample_counts,
                           std::optional<double> total_samples, ClusterCardinality cardinality) {
  check_counts(participants, sample_counts);
  const double n_total =
      total_samples.value_or(static_cast<double>(
          std::accumulate(sample_counts.begin(), sample_counts.end(), std::size_t{0})));
  if (!(n_total > 0.0)) throw std::invalid_argument("total sample count must be positive");

  std::vector<std::size_t> in_round(assignment.num_clusters(), 0);
  for (auto c : participants) {
    if (c >= assignment.cluster_of.size()) throw std::out_of_range("participant without a cluster");
    ++in_round[assignment.cluster_of[c]];
  }

  std::vector<double> raw;
  raw.reserve(participants.size());
  for (std::size_t i = 0; i < participants.size(); ++i) {
    const auto cluster = assignment.cluster_of[participants[i]];
    const auto m = cardinality == ClusterCardinality::kRoundParticipants ? in_round[cluster]
                                                                         : assignment.sizes[cluster];
    raw.push_back(static_cast<double>(sample_counts[i]) / n_total / static_cast<double>(m));
  }
  return normalized(participants, std::move(raw));
}

WeightVector fedavg_weights(std::span<const ClientId> participants,
                            std::span<const std::size_t> sample_counts) {
  check_counts(participants, sample_counts);
  const auto n_total = static_cast<double>(
      std::accumulate(sample_counts.begin(), sample_counts.end(), std::size_t{0}));
  std::vector<double> raw;
  raw.reserve(participants.size());
  for (auto n : sample_counts) raw.push_back(static_cast<double>(n) / n_total);
  return normalized(participants, std::move(raw));
}

ModelParams aggregate(std::span<const ModelParams> models, const WeightVector& weights) {
  if (models.empty()) throw std::invalid_argument("no models to aggregate");
  if (models.size() != weights.size()) throw ShapeError("model and weight counts differ");
  for (const auto& m : models) {
    if (!(m.shape() == models.front().shape())) throw ShapeError("models differ in shape");
  }
  // Accumulate offsets from the heaviest model so identical inputs and
  // one-hot weights reproduce a participant model exactly.
  const auto anchor = static_cast<std::size_t>(
      std::max_element(weights.weights.begin(), weights.weights.end()) - weights.weights.begin());
  ModelParams out = models[anchor];
  auto acc = out.values();
  const auto base = models[anchor].values();
  for (std::size_t m = 0; m < models.size(); ++m) {
    if (m == anchor || weights.weights[m] == 0.0) continue;
    const double w = weights.weights[m];
    const auto v = models[m].values();
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += w * (v[i] - base[i]);
  }
  return out;
}

}  // namespace cadis
