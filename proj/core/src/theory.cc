#include "cadis/theory.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

#include <boost/multiprecision/cpp_int.hpp>

#include "cadis/rng.h"

namespace cadis::theory {

namespace {

using boost::multiprecision::cpp_int;
using boost::multiprecision::cpp_rational;

constexpr double kZ99 = 2.5758293035489004;

void check_nk(std::size_t n, std::size_t k) {
  if (k < 1 || k > n) throw std::invalid_argument("need 1 <= k <= n");
}

cpp_int binomial(std::size_t n, std::size_t r) {
  if (r > n) return 0;
  r = std::min(r, n - r);
  cpp_int out = 1;
  for (std::size_t i = 1; i <= r; ++i) {
    out *= n - r + i;
    out /= i;
  }
  return out;
}

double to_double(const cpp_rational& r) { return static_cast<double>(r); }

}  // namespace

double expected_rounds_bound(std::size_t n, std::size_t k) {
  check_nk(n, k);
  const cpp_int total = binomial(n, k);
  cpp_rational sum = 1;
  for (std::size_t i = k; i < n; ++i) sum += cpp_rational(total, total - binomial(i, k));
  return to_double(sum);
}

double expected_rounds_exact(std::size_t n, std::size_t k) {
  check_nk(n, k);
  const cpp_int total = binomial(n, k);
  // expected[i] = E(S_i); states below k are only visited from S_0.
  std::vector<cpp_rational> expected(n + 1, cpp_rational(0));
  for (std::size_t i = n; i-- > k;) {
    // From S_i a round draws m new clients (0..k) and lands in S_{i+m};
    // P(m) = C(n-i, m) C(i, k-m) / C(n,k).
    cpp_rational rhs = 1;
    for (std::size_t m = 1; m <= k && i + m <= n; ++m) {
      rhs += cpp_rational(binomial(n - i, m) * binomial(i, k - m), total) * expected[i + m];
    }
    const cpp_rational stay(binomial(i, k), total);
    expected[i] = rhs / (1 - stay);
  }
  return to_double(1 + expected[k]);
}

MonteCarloEstimate expected_rounds_mc(std::size_t n, std::size_t k, std::size_t trials,
                                      std::uint64_t seed) {
  check_nk(n, k);
  if (trials < 1) throw std::invalid_argument("need at least one trial");
  Rng rng = make_rng(seed);
  std::vector<std::size_t> ids(n);
  std::vector<char> seen(n);
  double sum = 0.0;
  double sum_sq = 0.0;
  for (std::size_t trial = 0; trial < trials; ++trial) {
    std::fill(seen.begin(), seen.end(), 0);
    std::iota(ids.begin(), ids.end(), std::size_t{0});
    std::size_t covered = 0;
    std::size_t rounds = 0;
    while (covered < n) {
      ++rounds;
      for (std::size_t i = 0; i < k; ++i) {
        const auto j = i + uniform_index(rng, n - i);
        std::swap(ids[i], ids[j]);
        if (!seen[ids[i]]) {
          seen[ids[i]] = 1;
          ++covered;
        }
      }
    }
    const auto r = static_cast<double>(rounds);
    sum += r;
    sum_sq += r * r;
  }
  const auto t = static_cast<double>(trials);
  MonteCarloEstimate est;
  est.mean = sum / t;
  if (trials > 1) {
    const double var = std::max(0.0, (sum_sq - t * est.mean * est.mean) / (t - 1.0));
    est.half_width = kZ99 * std::sqrt(var / t);
  }
  return est;
}

std::vector<double> scheme_weights(std::span<const QuadraticClient> clients, AggregationScheme scheme) {
  const auto m = clients.size();
  if (m == 0) throw std::invalid_argument("no clients");
  std::vector<double> w(m, 1.0 / static_cast<double>(m));
  if (scheme == AggregationScheme::kCadis) {
    std::map<std::size_t, std::size_t> sizes;
    for (const auto& c : clients) ++sizes[c.cluster];
    const auto clusters = static_cast<double>(sizes.size());
    for (std::size_t i = 0; i < m; ++i) {
      w[i] = 1.0 / (clusters * static_cast<double>(sizes[clients[i].cluster]));
    }
  }
  return w;
}

double contraction_factor(const QuadraticClient& client, double eta, std::size_t local_steps) {
  return std::pow(1.0 - 2.0 * client.a * eta, static_cast<double>(local_steps));
}

namespace {

void check_contraction(std::span<const QuadraticClient> clients, double eta) {
  for (const auto& c : clients) {
    if (!(c.a > 0.0)) throw std::domain_error("quadratic client needs a > 0");
    if (!(std::abs(1.0 - 2.0 * c.a * eta) < 1.0)) {
      throw std::domain_error("learning rate violates |1 - 2 a eta| < 1; the trajectory diverges");
    }
  }
}

double round_map(std::span<const QuadraticClient> clients, std::span<const double> w, double eta,
                 std::size_t steps, double z) {
  double next = 0.0;
  for (std::size_t i = 0; i < clients.size(); ++i) {
    double zi = z;
    for (std::size_t s = 0; s < steps; ++s) zi -= eta * (2.0 * clients[i].a * zi + clients[i].b);
    next += w[i] * zi;
  }
  return next;
}

}  // namespace

std::vector<double> quadratic_trajectory(std::span<const QuadraticClient> clients, double eta,
                                         std::size_t local_steps, std::size_t rounds,
                                         AggregationScheme scheme, double z0) {
  check_contraction(clients, eta);
  const auto w = scheme_weights(clients, scheme);
  std::vector<double> z{z0};
  z.reserve(rounds + 1);
  for (std::size_t t = 0; t < rounds; ++t) z.push_back(round_map(clients, w, eta, local_steps, z.back()));
  return z;
}

double quadratic_fixed_point(std::span<const QuadraticClient> clients, double eta,
                             std::size_t local_steps, AggregationScheme scheme) {
  check_contraction(clients, eta);
  const auto w = scheme_weights(clients, scheme);
  double num = 0.0;
  double slope = 0.0;
  for (std::size_t i = 0; i < clients.size(); ++i) {
    const double phi = contraction_factor(clients[i], eta, local_steps);
    num -= w[i] * clients[i].b / (2.0 * clients[i].a) * (1.0 - phi);
    slope += w[i] * phi;
  }
  return num / (1.0 - slope);
}

double iterate_to_convergence(std::span<const QuadraticClient> clients, double eta,
                              std::size_t local_steps, AggregationScheme scheme, double z0,
                              double tol, std::size_t max_rounds) {
  check_contraction(clients, eta);
  const auto w = scheme_weights(clients, scheme);
  double z = z0;
  for (std::size_t t = 0; t < max_rounds; ++t) {
    const double next = round_map(clients, w, eta, local_steps, z);
    if (std::abs(next - z) < tol) return next;
    z = next;
  }
  throw std::runtime_error("trajectory did not converge within the round budget");
}

double global_objective(double z, std::span<const QuadraticClient> clients) {
  const auto w = scheme_weights(clients, AggregationScheme::kCadis);
  double f = 0.0;
  for (std::size_t i = 0; i < clients.size(); ++i) f += w[i] * clients[i].loss(z);
  return f;
}

double z_fedavg_closed_form(const QuadraticClient& c1, const QuadraticClient& c3, double eta,
                            std::size_t local_steps, std::size_t round, double z0) {
  const double p1 = contraction_factor(c1, eta, local_steps);
  const double p3 = contraction_factor(c3, eta, local_steps);
  const double rate = (2.0 * p1 + p3) / 3.0;
  const double limit =
      -(c1.b / c1.a * (1.0 - p1) + c3.b / c3.a * (1.0 - p3) / 2.0) / (3.0 - (2.0 * p1 + p3));
  const double decay = std::pow(rate, static_cast<double>(round));
  return decay * z0 + (1.0 - decay) * limit;
}

double z_cadis_closed_form(const QuadraticClient& c1, const QuadraticClient& c3, double eta,
                           std::size_t local_steps, std::size_t round, double z0) {
  const double p1 = contraction_factor(c1, eta, local_steps);
  const double p3 = contraction_factor(c3, eta, local_steps);
  const double rate = (p1 + p3) / 2.0;
  const double limit = -(c1.b * (1.0 - p1) / (2.0 * c1.a) + c3.b * (1.0 - p3) / (2.0 * c3.a)) /
                       (2.0 - (p1 + p3));
  const double decay = std::pow(rate, static_cast<double>(round));
  return decay * z0 + (1.0 - decay) * limit;
}

GapFactors gap_factors(const QuadraticClient& c1, const QuadraticClient& c3, double eta,
                       std::size_t local_steps) {
  const double p1 = contraction_factor(c1, eta, local_steps);
  const double p3 = contraction_factor(c3, eta, local_steps);
  const double p = (p1 - 1.0) / (p1 + p3 - 2.0);
  const double q = (2.0 * p1 - 2.0) / (2.0 * p1 + p3 - 3.0);
  return {q - p, (1.0 / c1.a + 1.0 / c3.a) * (q + p) - 2.0 / c3.a};
}

}  // namespace cadis::theory
