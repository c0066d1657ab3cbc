#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "cadis/config.h"
#include "cadis/engine.h"

namespace cadis {

inline constexpr const char* kMetricsVersionLine = "# cadis metrics v1";
inline constexpr const char* kSummarySchema = "cadis-summary-v1";

// "round,top1,r0,...,r{v-1},cluster_recovery,qmatrix_mse,mean_local_loss"
std::string metrics_header(std::size_t num_classes);
std::string metrics_row(const RoundMetrics& metrics);

// Version line, header, one row per round.
void write_metrics_csv(std::ostream& out, std::span<const RoundMetrics> rounds, std::size_t num_classes);

// Long format: round,client,weight,cluster.
void write_weights_csv(std::ostream& out, std::span<const RoundMetrics> rounds);

// Mean and population variance of top-1 over the last `window` rounds.
struct TailStats {
  double mean = 0.0;
  double variance = 0.0;
};
TailStats tail_stats(std::span<const RoundMetrics> rounds, std::size_t window = 10);

// Mean of top-1 over a trailing window ending at each round.
std::vector<double> smoothed_top1(std::span<const RoundMetrics> rounds, std::size_t window = 10);

// First round whose top-1 reaches `target`, if any.
std::optional<std::size_t> rounds_to_target(std::span<const RoundMetrics> rounds, double target);

nlohmann::json summary_json(const ExperimentResult& result, const RunConfig& config);

// Writes metrics.csv, weights.csv, summary.json, config.ini and the final
// similarity_t{T}.json into `dir`, creating it.
void write_run_outputs(const std::filesystem::path& dir, const ExperimentResult& result,
                       const RunConfig& config);

void write_similarity_snapshot(const std::filesystem::path& dir, const SimilarityState& state);

}  // namespace cadis
