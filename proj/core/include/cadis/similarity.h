#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "cadis/rng.h"
#include "cadis/types.h"

namespace cadis {

// Linear ramp from `start` to `max` over `ramp` rounds, then flat.
struct ThresholdSchedule {
  double start = 0.5;
  double max = 0.975;
  std::size_t ramp = 50;

  double at(std::size_t round) const;
  void validate() const;
};

struct TransitiveConfig {
  bool enabled = true;
  // Pivots are used only when the implied Gaussian's deviation is below this.
  double gamma = 0.2;
};

using CountMatrix = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Server-side similarity bookkeeping for n clients.
class SimilarityState {
 public:
  SimilarityState() = default;
  SimilarityState(std::size_t num_clients, ThresholdSchedule schedule, TransitiveConfig transitive);

  std::size_t num_clients() const { return static_cast<std::size_t>(similarity_.rows()); }
  const Matrix& similarity() const { return similarity_; }
  // Observations folded into each entry, direct and transitive.
  const CountMatrix& counts() const { return counts_; }
  // Direct co-occurrences only.
  const CountMatrix& direct_counts() const { return direct_; }
  const Matrix& q() const { return q_; }
  const ThresholdSchedule& schedule() const { return schedule_; }
  const TransitiveConfig& transitive() const { return transitive_; }
  std::size_t round() const { return round_; }
  void set_round(std::size_t t) { round_ = t; }

  bool observed(std::size_t i, std::size_t j) const { return counts_(idx(i), idx(j)) > 0; }

  // s <- f/(f+1) s + 1/(f+1) value; f += 1. Symmetric.
  void record(std::size_t i, std::size_t j, double value, bool direct);

  void set_q(Matrix q) { q_ = std::move(q); }

  nlohmann::json to_json() const;
  static SimilarityState from_json(const nlohmann::json& j);

 private:
  static Eigen::Index idx(std::size_t i) { return static_cast<Eigen::Index>(i); }

  Matrix similarity_;
  CountMatrix counts_;
  CountMatrix direct_;
  Matrix q_;
  ThresholdSchedule schedule_;
  TransitiveConfig transitive_;
  std::size_t round_ = 0;
};

struct ClusterAssignment {
  std::vector<std::size_t> cluster_of;  // client -> cluster id (0-based, by smallest member)
  std::vector<std::size_t> sizes;       // cluster id -> member count
  std::size_t round = 0;

  std::size_t num_clusters() const { return sizes.size(); }
};

double cosine_similarity(std::span<const double> a, std::span<const double> b);

// Cosine of (W_i - W_g) and (W_j - W_g), flattened row-major. 0 when either
// improvement has norm below 1e-12.
double instance_similarity(const Matrix& wi, const Matrix& wj, const Matrix& wg);

// Folds the instance similarity of every participant pair into the state.
// Returns the number of pairs updated.
std::size_t update_similarity(SimilarityState& state, std::span<const ClientId> participants,
                              std::span<const Matrix> classifiers, const Matrix& global_classifier);

// Bounds on cos(a, c) given cos(a, b) and cos(b, c).
std::pair<double, double> transitive_bounds(double s_ab, double s_bc);
double transitive_deviation(double s_ip, double s_jp);

// Estimates pairs that have never co-occurred directly and are not both in
// this round, from pivots observed with both ends. Returns the number of
// pairs that received an estimate.
std::size_t transitive_fill(SimilarityState& state, std::span<const ClientId> participants, Rng& rng);

// Min-max rescale of observed off-diagonal similarities into Q. Unobserved
// pairs get 0; a degenerate range maps every observed pair to 1.
void rescale_q(SimilarityState& state);

double epsilon(const SimilarityState& state, std::size_t round);

// Connected components of {q_ij >= epsilon(round)}.
ClusterAssignment cluster(const SimilarityState& state, std::size_t round);
ClusterAssignment cluster_with_threshold(const Matrix& q, double threshold);

// Fraction of client pairs whose same/different relation agrees.
double cluster_recovery(std::span<const std::size_t> predicted, std::span<const std::size_t> truth);

// Mean squared distance of off-diagonal Q to the 0/1 same-cluster matrix.
double qmatrix_mse(const Matrix& q, std::span<const std::size_t> truth);

}  // namespace cadis
