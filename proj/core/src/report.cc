#include "cadis/report.h"

#include <charconv>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

namespace cadis {

namespace {

// Shortest round-trip form; identical doubles always print identically.
std::string num(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

nlohmann::json json_number(double v) {
  if (std::isfinite(v)) return v;
  return nullptr;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  return out;
}

}  // namespace

std::string metrics_header(std::size_t num_classes) {
  std::string h = "round,top1";
  for (std::size_t c = 0; c < num_classes; ++c) h += ",r" + std::to_string(c);
  h += ",cluster_recovery,qmatrix_mse,mean_local_loss";
  return h;
}

std::string metrics_row(const RoundMetrics& m) {
  std::string row = std::to_string(m.round) + "," + num(m.top1);
  for (double r : m.recall) row += "," + num(r);
  row += "," + num(m.cluster_recovery) + "," + num(m.qmatrix_mse) + "," + num(m.mean_local_loss);
  return row;
}

void write_metrics_csv(std::ostream& out, std::span<const RoundMetrics> rounds, std::size_t num_classes) {
  out << kMetricsVersionLine << "\n" << metrics_header(num_classes) << "\n";
  for (const auto& m : rounds) {
    if (m.recall.size() != num_classes) throw ShapeError("recall width does not match class count");
    out << metrics_row(m) << "\n";
  }
}

void write_weights_csv(std::ostream& out, std::span<const RoundMetrics> rounds) {
  out << "round,client,weight,cluster\n";
  for (const auto& m : rounds) {
    for (std::size_t i = 0; i < m.weights.size(); ++i) {
      out << m.round << "," << m.weights.clients[i] << "," << num(m.weights.weights[i]) << ",";
      if (i < m.participant_clusters.size()) out << m.participant_clusters[i];
      out << "\n";
    }
  }
}

TailStats tail_stats(std::span<const RoundMetrics> rounds, std::size_t window) {
  TailStats s;
  if (rounds.empty() || window == 0) return s;
  const auto n = std::min(window, rounds.size());
  const auto tail = rounds.last(n);
  for (const auto& m : tail) s.mean += m.top1;
  s.mean /= static_cast<double>(n);
  for (const auto& m : tail) s.variance += (m.top1 - s.mean) * (m.top1 - s.mean);
  s.variance /= static_cast<double>(n);
  return s;
}

std::vector<double> smoothed_top1(std::span<const RoundMetrics> rounds, std::size_t window) {
  std::vector<double> out;
  out.reserve(rounds.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < rounds.size(); ++i) {
    sum += rounds[i].top1;
    if (i >= window) sum -= rounds[i - window].top1;
    out.push_back(sum / static_cast<double>(std::min(i + 1, window)));
  }
  return out;
}

std::optional<std::size_t> rounds_to_target(std::span<const RoundMetrics> rounds, double target) {
  for (const auto& m : rounds) {
    if (m.top1 >= target) return m.round;
  }
  return std::nullopt;
}

nlohmann::json summary_json(const ExperimentResult& result, const RunConfig& config) {
  const auto& e = config.experiment;
  nlohmann::json j;
  j["schema"] = kSummarySchema;
  j["run_id"] = config.resolved_run_id();
  j["algorithm"] = to_string(e.algorithm);
  j["seed"] = e.seed;
  j["rounds"] = result.rounds.size();
  j["initial_top1"] = result.initial.top1;

  double best = result.initial.top1;
  std::size_t best_round = 0;
  for (const auto& m : result.rounds) {
    if (m.top1 > best) {
      best = m.top1;
      best_round = m.round;
    }
  }
  j["best_top1"] = best;
  j["best_round"] = best_round;
  j["final_top1"] = result.rounds.empty() ? result.initial.top1 : result.rounds.back().top1;
  j["target_accuracy"] = e.target_accuracy;
  const auto hit = rounds_to_target(result.rounds, e.target_accuracy);
  j["rounds_to_target"] = hit ? nlohmann::json(*hit) : nlohmann::json(nullptr);
  const auto tail = tail_stats(result.rounds, 10);
  j["tail10_mean_top1"] = tail.mean;
  j["tail10_variance_top1"] = tail.variance;
  if (!result.rounds.empty()) {
    const auto& last = result.rounds.back();
    j["final_recall"] = last.recall;
    j["final_cluster_recovery"] = json_number(last.cluster_recovery);
    j["final_qmatrix_mse"] = json_number(last.qmatrix_mse);
  }
  j["final_assignment"] = {{"round", result.assignment.round},
                           {"cluster_of", result.assignment.cluster_of},
                           {"sizes", result.assignment.sizes}};
  return j;
}

void write_similarity_snapshot(const std::filesystem::path& dir, const SimilarityState& state) {
  std::filesystem::create_directories(dir);
  auto out = open_out(dir / ("similarity_t" + std::to_string(state.round()) + ".json"));
  out << state.to_json().dump() << "\n";
}

void write_run_outputs(const std::filesystem::path& dir, const ExperimentResult& result,
                       const RunConfig& config) {
  std::filesystem::create_directories(dir);
  {
    auto out = open_out(dir / "metrics.csv");
    write_metrics_csv(out, result.rounds, config.experiment.network.num_classes);
  }
  {
    auto out = open_out(dir / "weights.csv");
    write_weights_csv(out, result.rounds);
  }
  {
    auto out = open_out(dir / "summary.json");
    out << summary_json(result, config).dump(2) << "\n";
  }
  {
    auto out = open_out(dir / "config.ini");
    out << to_config_text(config);
  }
  if (uses_clustering(config.experiment.algorithm)) write_similarity_snapshot(dir, result.similarity);
}

}  // namespace cadis
