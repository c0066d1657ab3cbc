#include <map>

#include <gtest/gtest.h>

#include "cadis/aggregation.h"
#include "support.h"

namespace cadis {
namespace {

ClusterAssignment assign(std::vector<std::size_t> cluster_of) {
  ClusterAssignment a;
  a.cluster_of = std::move(cluster_of);
  for (auto c : a.cluster_of) {
    if (c >= a.sizes.size()) a.sizes.resize(c + 1, 0);
    ++a.sizes[c];
  }
  return a;
}

TEST(CadisWeights, TwoPlusOne) {
  const std::vector<ClientId> who{0, 1, 2};
  const std::vector<std::size_t> n{50, 50, 50};
  const auto w = cadis_weights(who, assign({0, 0, 1}), n);
  EXPECT_DOUBLE_EQ(w.weights[0], 0.25);
  EXPECT_DOUBLE_EQ(w.weights[1], 0.25);
  EXPECT_DOUBLE_EQ(w.weights[2], 0.5);
}

TEST(CadisWeights, OneClusterIsUniform) {
  const std::vector<ClientId> who{0, 1, 2, 3};
  const std::vector<std::size_t> n(4, 10);
  for (double x : cadis_weights(who, assign({0, 0, 0, 0}), n).weights) EXPECT_DOUBLE_EQ(x, 0.25);
}

TEST(CadisWeights, SingletonsReduceToFedAvgExactly) {
  const std::vector<ClientId> who{0, 1};
  const std::vector<std::size_t> n{100, 300};
  const auto c = cadis_weights(who, assign({0, 1}), n);
  const auto f = fedavg_weights(who, n);
  EXPECT_DOUBLE_EQ(c.weights[0], 0.25);
  EXPECT_DOUBLE_EQ(c.weights[1], 0.75);
  EXPECT_EQ(c.weights, f.weights);

  Rng rng = make_rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const auto k = 1 + uniform_index(rng, 12);
    std::vector<ClientId> ids;
    std::vector<std::size_t> counts, clusters;
    for (std::size_t i = 0; i < k; ++i) {
      ids.push_back(i);
      counts.push_back(1 + uniform_index(rng, 1000));
      clusters.push_back(i);
    }
    EXPECT_EQ(cadis_weights(ids, assign(clusters), counts).weights, fedavg_weights(ids, counts).weights);
  }
}

TEST(CadisWeights, ScaleInvariantAndNIndependent) {
  Rng rng = make_rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const std::vector<ClientId> who{0, 1, 2, 3, 4, 5};
    std::vector<std::size_t> n, n3;
    for (int i = 0; i < 6; ++i) {
      n.push_back(1 + uniform_index(rng, 500));
      n3.push_back(3 * n.back());
    }
    const auto a = assign({0, 0, 1, 2, 2, 2});
    const auto base = cadis_weights(who, a, n);
    const auto scaled = cadis_weights(who, a, n3);
    const auto other_total = cadis_weights(who, a, n, 60000.0);
    for (int i = 0; i < 6; ++i) {
      EXPECT_NEAR(base.weights[static_cast<std::size_t>(i)], scaled.weights[static_cast<std::size_t>(i)], 1e-12);
      EXPECT_NEAR(base.weights[static_cast<std::size_t>(i)], other_total.weights[static_cast<std::size_t>(i)], 1e-12);
    }
  }
}

TEST(CadisWeights, ClustersContributeEqually) {
  Rng rng = make_rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const auto k = 2 + uniform_index(rng, 10);
    std::vector<ClientId> who;
    std::vector<std::size_t> clusters;
    for (std::size_t i = 0; i < k; ++i) {
      who.push_back(i);
      clusters.push_back(uniform_index(rng, 4));
    }
    const std::vector<std::size_t> n(k, 37);
    const auto w = cadis_weights(who, assign(clusters), n);
    std::map<std::size_t, double> mass;
    double total = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      mass[clusters[i]] += w.weights[i];
      total += w.weights[i];
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
    for (const auto& [c, m] : mass) EXPECT_NEAR(m, 1.0 / static_cast<double>(mass.size()), 1e-12);
  }
}

TEST(CadisWeights, AllClientsCardinality) {
  // Clients 0 and 1 share a 4-member cluster; 2 is alone.
  const auto a = assign({0, 0, 1, 0, 0});
  const std::vector<ClientId> who{0, 1, 2};
  const std::vector<std::size_t> n{10, 10, 10};
  const auto w = cadis_weights(who, a, n, std::nullopt, ClusterCardinality::kAllClients);
  // Raw 1/4, 1/4, 1 -> normalized 1/6, 1/6, 2/3.
  EXPECT_NEAR(w.weights[0], 1.0 / 6.0, 1e-15);
  EXPECT_NEAR(w.weights[2], 2.0 / 3.0, 1e-15);
}

TEST(CadisWeights, Errors) {
  const std::vector<ClientId> none;
  const std::vector<std::size_t> nothing;
  EXPECT_ANY_THROW(cadis_weights(none, assign({0}), nothing));
  const std::vector<ClientId> one{0};
  const std::vector<std::size_t> zero{0};
  EXPECT_ANY_THROW(cadis_weights(one, assign({0}), zero));
}

TEST(FedAvgWeights, Examples) {
  const std::vector<ClientId> four{0, 1, 2, 3};
  for (double x : fedavg_weights(four, std::vector<std::size_t>(4, 9)).weights) EXPECT_DOUBLE_EQ(x, 0.25);
  const std::vector<ClientId> two{5, 8};
  const auto w = fedavg_weights(two, std::vector<std::size_t>{1, 3});
  EXPECT_DOUBLE_EQ(w.weights[0], 0.25);
  EXPECT_DOUBLE_EQ(w.weights[1], 0.75);
  EXPECT_EQ(w.clients, two);
  const std::vector<ClientId> single{4};
  EXPECT_DOUBLE_EQ(fedavg_weights(single, std::vector<std::size_t>{17}).weights[0], 1.0);
  EXPECT_ANY_THROW(fedavg_weights(std::vector<ClientId>{}, std::vector<std::size_t>{}));
}

TEST(Aggregate, Examples) {
  const NetworkShape shape{1, {}, 1, 2};
  ModelParams a(shape), b(shape);
  b.values()[0] = 1.0;
  const std::vector<ModelParams> ms{a, b};
  EXPECT_DOUBLE_EQ(aggregate(ms, WeightVector{{0, 1}, {0.25, 0.75}}).values()[0], 0.75);

  const auto m = ModelParams::initialize({4, {3}, 2, 3}, 8);
  const std::vector<ModelParams> same(5, m);
  EXPECT_EQ(aggregate(same, WeightVector{{0, 1, 2, 3, 4}, {0.1, 0.2, 0.3, 0.15, 0.25}}), m);

  const std::vector<ModelParams> mixed{ModelParams::initialize({4, {3}, 2, 3}, 1), m,
                                       ModelParams::initialize({4, {3}, 2, 3}, 2)};
  EXPECT_EQ(aggregate(mixed, WeightVector{{0, 1, 2}, {0.0, 1.0, 0.0}}), m);
}

TEST(Aggregate, StaysInsideEnvelope) {
  Rng rng = make_rng(4);
  const NetworkShape shape{3, {4}, 2, 3};
  std::vector<ModelParams> ms;
  for (int i = 0; i < 6; ++i) ms.push_back(ModelParams::initialize(shape, rng()));
  WeightVector w;
  double total = 0.0;
  for (ClientId i = 0; i < 6; ++i) {
    w.clients.push_back(i);
    w.weights.push_back(uniform01(rng));
    total += w.weights.back();
  }
  for (auto& x : w.weights) x /= total;
  const auto g = aggregate(ms, w);
  for (std::size_t p = 0; p < g.size(); ++p) {
    double lo = INFINITY, hi = -INFINITY;
    for (const auto& m : ms) {
      lo = std::min(lo, m.values()[p]);
      hi = std::max(hi, m.values()[p]);
    }
    EXPECT_GE(g.values()[p], lo - 1e-15);
    EXPECT_LE(g.values()[p], hi + 1e-15);
  }
}

TEST(Aggregate, Errors) {
  const std::vector<ModelParams> ms{ModelParams({2, {}, 2, 2}), ModelParams({3, {}, 2, 2})};
  EXPECT_THROW(aggregate(ms, WeightVector{{0, 1}, {0.5, 0.5}}), ShapeError);
  const std::vector<ModelParams> one{ModelParams({2, {}, 2, 2})};
  EXPECT_ANY_THROW(aggregate(one, WeightVector{{0, 1}, {0.5, 0.5}}));
}

}  // namespace
}  // namespace cadis
