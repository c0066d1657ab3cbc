#include "cadis/similarity.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

namespace cadis {

namespace {

constexpr double kMinImprovementNorm = 1e-12;

std::size_t find_root(std::vector<std::size_t>& parent, std::size_t x) {
  while (parent[x] != x) {
    parent[x] = parent[parent[x]];
    x = parent[x];
  }
  return x;
}

}  // namespace

double ThresholdSchedule::at(std::size_t round) const {
  if (ramp == 0) return max;
  const double value = start + static_cast<double>(round) * (max - start) / static_cast<double>(ramp);
  return std::min(max, value);
}

void ThresholdSchedule::validate() const {
  if (start > max) throw ConfigError("epsilon start must not exceed epsilon max");
}

SimilarityState::SimilarityState(std::size_t n, ThresholdSchedule schedule,
                                 TransitiveConfig transitive)
    : similarity_(Matrix::Identity(idx(n), idx(n))),
      counts_(CountMatrix::Zero(idx(n), idx(n))),
      direct_(CountMatrix::Zero(idx(n), idx(n))),
      q_(Matrix::Zero(idx(n), idx(n))),
      schedule_(schedule),
      transitive_(transitive) {
  schedule_.validate();
}

void SimilarityState::record(std::size_t i, std::size_t j, double value, bool direct) {
  const auto a = idx(i);
  const auto b = idx(j);
  const auto f = static_cast<double>(counts_(a, b));
  const double s = f / (f + 1.0) * similarity_(a, b) + value / (f + 1.0);
  similarity_(a, b) = s;
  similarity_(b, a) = s;
  counts_(a, b) += 1;
  counts_(b, a) = counts_(a, b);
  if (direct) {
    direct_(a, b) += 1;
    direct_(b, a) = direct_(a, b);
  }
}

nlohmann::json SimilarityState::to_json() const {
  const auto n = num_clients();
  auto rows = [n](const auto& m) {
    std::vector<std::vector<typename std::decay_t<decltype(m)>::Scalar>> out(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) out[i].push_back(m(idx(i), idx(j)));
    }
    return out;
  };
  return {{"t", round_},
          {"n", n},
          {"epsilon", {{"start", schedule_.start}, {"max", schedule_.max}, {"ramp", schedule_.ramp}}},
          {"transitive", {{"enabled", transitive_.enabled}, {"gamma", transitive_.gamma}}},
          {"S", rows(similarity_)},
          {"F", rows(counts_)},
          {"F_direct", rows(direct_)},
          {"Q", rows(q_)}};
}

SimilarityState SimilarityState::from_json(const nlohmann::json& j) {
  const auto n = j.at("n").get<std::size_t>();
  ThresholdSchedule schedule{j.at("epsilon").at("start").get<double>(),
                             j.at("epsilon").at("max").get<double>(),
                             j.at("epsilon").at("ramp").get<std::size_t>()};
  TransitiveConfig transitive{j.at("transitive").at("enabled").get<bool>(),
                              j.at("transitive").at("gamma").get<double>()};
  SimilarityState state(n, schedule, transitive);
  state.round_ = j.at("t").get<std::size_t>();
  auto load = [n](const nlohmann::json& rows, auto& m) {
    using Scalar = typename std::decay_t<decltype(m)>::Scalar;
    if (rows.size() != n) throw FormatError("similarity snapshot has wrong row count");
    for (std::size_t i = 0; i < n; ++i) {
      if (rows[i].size() != n) throw FormatError("similarity snapshot has wrong column count");
      for (std::size_t k = 0; k < n; ++k) m(idx(i), idx(k)) = rows[i][k].get<Scalar>();
    }
  };
  load(j.at("S"), state.similarity_);
  load(j.at("F"), state.counts_);
  load(j.at("F_direct"), state.direct_);
  load(j.at("Q"), state.q_);
  return state;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("cosine of vectors with different lengths");
  double dot = 0.0;
  double na = 0.0;
  double nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  na = std::sqrt(na);
  nb = std::sqrt(nb);
  if (na < kMinImprovementNorm || nb < kMinImprovementNorm) return 0.0;
  return std::clamp(dot / (na * nb), -1.0, 1.0);
}

double instance_similarity(const Matrix& wi, const Matrix& wj, const Matrix& wg) {
  if (wi.rows() != wg.rows() || wi.cols() != wg.cols() || wj.rows() != wg.rows() ||
      wj.cols() != wg.cols()) {
    throw ShapeError("classifier matrices differ in shape");
  }
  const Matrix di = wi - wg;
  const Matrix dj = wj - wg;
  return cosine_similarity(std::span(di.data(), static_cast<std::size_t>(di.size())),
                           std::span(dj.data(), static_cast<std::size_t>(dj.size())));
}

std::size_t update_similarity(SimilarityState& state, std::span<const ClientId> participants,
                              std::span<const Matrix> classifiers, const Matrix& global_classifier) {
  if (participants.size() != classifiers.size()) {
    throw ShapeError("participant and classifier counts differ");
  }
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < participants.size(); ++a) {
    for (std::size_t b = a + 1; b < participants.size(); ++b) {
      const double s = instance_similarity(classifiers[a], classifiers[b], global_classifier);
      state.record(participants[a], participants[b], s, /*direct=*/true);
      ++pairs;
    }
  }
  return pairs;
}

std::pair<double, double> transitive_bounds(double s_ab, double s_bc) {
  const double spread = std::sqrt(std::max(0.0, (1.0 - s_ab * s_ab) * (1.0 - s_bc * s_bc)));
  return {s_ab * s_bc - spread, s_ab * s_bc + spread};
}

double transitive_deviation(double s_ip, double s_jp) {
  return std::sqrt(std::max(0.0, (1.0 - s_ip * s_ip) * (1.0 - s_jp * s_jp))) / 3.0;
}

std::size_t transitive_fill(SimilarityState& state, std::span<const ClientId> participants, Rng& rng) {
  if (!state.transitive().enabled) return 0;
  const auto n = state.num_clients();
  std::vector<char> in_round(n, 0);
  for (auto c : participants) in_round.at(c) = 1;

  // Estimates read the state as it was before this pass.
  const Matrix s = state.similarity();
  const CountMatrix f = state.counts();
  const CountMatrix& direct = state.direct_counts();
  const double gamma = state.transitive().gamma;
  auto at = [](const auto& m, std::size_t i, std::size_t j) {
    return m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  };

  std::size_t filled = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if ((in_round[i] && in_round[j]) || at(direct, i, j) > 0) continue;
      double sum = 0.0;
      std::size_t used = 0;
      for (std::size_t p = 0; p < n; ++p) {
        if (p == i || p == j || at(f, i, p) == 0 || at(f, j, p) == 0) continue;
        const double sip = at(s, i, p);
        const double sjp = at(s, j, p);
        const double sigma = transitive_deviation(sip, sjp);
        if (!(sigma < gamma)) continue;
        sum += std::clamp(sip * sjp + sigma * standard_normal(rng), -1.0, 1.0);
        ++used;
      }
      if (used == 0) continue;
      state.record(i, j, sum / static_cast<double>(used), /*direct=*/false);
      ++filled;
    }
  }
  return filled;
}

void rescale_q(SimilarityState& state) {
  const auto n = state.num_clients();
  const Matrix& s = state.similarity();
  double lo = INFINITY;
  double hi = -INFINITY;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (!state.observed(i, j)) continue;
      const double v = s(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  Matrix q = Matrix::Zero(s.rows(), s.cols());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (!state.observed(i, j)) continue;
      const auto a = static_cast<Eigen::Index>(i);
      const auto b = static_cast<Eigen::Index>(j);
      const double v = hi > lo ? (s(a, b) - lo) / (hi - lo) : 1.0;
      q(a, b) = v;
      q(b, a) = v;
    }
  }
  state.set_q(std::move(q));
}

double epsilon(const SimilarityState& state, std::size_t round) { return state.schedule().at(round); }

ClusterAssignment cluster_with_threshold(const Matrix& q, double threshold) {
  const auto n = static_cast<std::size_t>(q.rows());
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (q(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) >= threshold) {
        const auto ri = find_root(parent, i);
        const auto rj = find_root(parent, j);
        if (ri != rj) parent[std::max(ri, rj)] = std::min(ri, rj);
      }
    }
  }
  ClusterAssignment out;
  out.cluster_of.assign(n, 0);
  std::vector<std::size_t> label(n, SIZE_MAX);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = find_root(parent, i);
    if (label[r] == SIZE_MAX) {
      label[r] = out.sizes.size();
      out.sizes.push_back(0);
    }
    out.cluster_of[i] = label[r];
    ++out.sizes[label[r]];
  }
  return out;
}

ClusterAssignment cluster(const SimilarityState& state, std::size_t round) {
  auto out = cluster_with_threshold(state.q(), epsilon(state, round));
  out.round = round;
  return out;
}

double cluster_recovery(std::span<const std::size_t> predicted, std::span<const std::size_t> truth) {
  if (predicted.size() != truth.size()) throw ShapeError("assignment sizes differ");
  const auto n = predicted.size();
  if (n < 2) return 1.0;
  std::size_t agree = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      agree += ((predicted[i] == predicted[j]) == (truth[i] == truth[j])) ? 1 : 0;
    }
  }
  return static_cast<double>(agree) / static_cast<double>(n * (n - 1) / 2);
}

double qmatrix_mse(const Matrix& q, std::span<const std::size_t> truth) {
  const auto n = truth.size();
  if (static_cast<std::size_t>(q.rows()) != n) throw ShapeError("Q size and truth size differ");
  if (n < 2) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double ideal = truth[i] == truth[j] ? 1.0 : 0.0;
      const double d = q(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) - ideal;
      total += d * d;
    }
  }
  return total / static_cast<double>(n * (n - 1) / 2);
}

}  // namespace cadis
