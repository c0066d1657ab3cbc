#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace cadis::theory {

// Expected rounds until every one of n clients has been sampled at least
// once, k uniform clients per round.

// 1 + sum_{i=k}^{n-1} C(n,k) / (C(n,k) - C(i,k)), summed exactly.
double expected_rounds_bound(std::size_t n, std::size_t k);

// Exact expectation from the coverage Markov chain, solved backward from
// E(S_n) = 0 with the self-loop term moved to the left-hand side.
double expected_rounds_exact(std::size_t n, std::size_t k);

struct MonteCarloEstimate {
  double mean = 0.0;
  double half_width = 0.0;  // 99% normal-approximation interval
};

MonteCarloEstimate expected_rounds_mc(std::size_t n, std::size_t k, std::size_t trials,
                                      std::uint64_t seed);

// f_i(z) = a z^2 + b z, a > 0.
struct QuadraticClient {
  double a = 1.0;
  double b = 0.0;
  std::size_t cluster = 0;

  double loss(double z) const { return a * z * z + b * z; }
};

enum class AggregationScheme { kCadis, kFedAvg };

// Per-client aggregation weights: FedAvg 1/m, CADIS 1/(#clusters * |cluster|).
std::vector<double> scheme_weights(std::span<const QuadraticClient> clients, AggregationScheme scheme);

// phi_i = (1 - 2 a_i eta)^K, the per-round contraction of client i.
double contraction_factor(const QuadraticClient& client, double eta, std::size_t local_steps);

// Z^0 = z0, then for each round every client takes `local_steps` exact
// gradient steps from Z^t and the results are aggregated. Returns Z^0..Z^T.
// Throws std::domain_error unless |1 - 2 a_i eta| < 1 for all clients.
std::vector<double> quadratic_trajectory(std::span<const QuadraticClient> clients, double eta,
                                         std::size_t local_steps, std::size_t rounds,
                                         AggregationScheme scheme, double z0);

// Limit of the trajectory: the fixed point of the affine round map
//   Z -> sum_i w_i (phi_i Z - (b_i / 2a_i)(1 - phi_i)).
double quadratic_fixed_point(std::span<const QuadraticClient> clients, double eta,
                             std::size_t local_steps, AggregationScheme scheme);

// Iterates until |Z^{t+1} - Z^t| < tol; returns the last iterate.
double iterate_to_convergence(std::span<const QuadraticClient> clients, double eta,
                              std::size_t local_steps, AggregationScheme scheme, double z0,
                              double tol = 1e-10, std::size_t max_rounds = 10'000'000);

// Cluster-balanced objective: each cluster weighs 1/#clusters, split
// equally among its members. For two identical clients in one cluster and a
// third alone this is (f1 + f2)/4 + f3/2.
double global_objective(double z, std::span<const QuadraticClient> clients);

// Closed-form two-cluster trajectories for the (C1 = C2, C3) scenario.
double z_fedavg_closed_form(const QuadraticClient& c1, const QuadraticClient& c3, double eta,
                            std::size_t local_steps, std::size_t round, double z0);
double z_cadis_closed_form(const QuadraticClient& c1, const QuadraticClient& c3, double eta,
                           std::size_t local_steps, std::size_t round, double z0);

// v1 = Q - P, v2 = (1/a1 + 1/a3)(Q + P) - 2/a3 with
// P = (phi1 - 1)/(phi1 + phi3 - 2), Q = (2 phi1 - 2)/(2 phi1 + phi3 - 3).
struct GapFactors {
  double v1 = 0.0;
  double v2 = 0.0;
};
GapFactors gap_factors(const QuadraticClient& c1, const QuadraticClient& c3, double eta,
                       std::size_t local_steps);

}  // namespace cadis::theory
