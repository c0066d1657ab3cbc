#include <numeric>
#include <sstream>

#include <gtest/gtest.h>

#include "cadis/engine.h"
#include "cadis/report.h"
#include "support.h"

namespace cadis {
namespace {

ExperimentConfig small_config(Algorithm algorithm = Algorithm::kCadis) {
  ExperimentConfig c;
  c.data.classes = 5;
  c.data.dims = 8;
  c.data.per_class = 60;
  c.data.test_per_class = 20;
  c.partition.num_clients = 10;
  c.partition.seed = 3;
  c.network = NetworkShape{8, {12}, 6, 5};
  c.rounds = 6;
  c.clients_per_round = 4;
  c.local_epochs = 2;
  c.batch_size = 8;
  c.learning_rate = 0.05;
  c.algorithm = algorithm;
  c.seed = 11;
  return c;
}

std::string metrics_csv(const ExperimentResult& r, std::size_t v) {
  std::ostringstream out;
  write_metrics_csv(out, r.rounds, v);
  return out.str();
}

TEST(SampleClients, Examples) {
  Rng rng = make_rng(1);
  const auto all = sample_clients(7, 7, rng);
  EXPECT_EQ(all, (std::vector<ClientId>{0, 1, 2, 3, 4, 5, 6}));
  const auto one = sample_clients(7, 1, rng);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_LT(one[0], 7u);
  EXPECT_ANY_THROW(sample_clients(3, 4, rng));
}

TEST(SampleClients, InclusionFrequency) {
  Rng rng = make_rng(2);
  std::vector<int> hits(10, 0);
  const int draws = 100000;
  for (int d = 0; d < draws; ++d) {
    const auto s = sample_clients(10, 3, rng);
    ASSERT_EQ(s.size(), 3u);
    ASSERT_TRUE(std::adjacent_find(s.begin(), s.end()) == s.end());
    for (auto c : s) ++hits[c];
  }
  for (int h : hits) EXPECT_NEAR(static_cast<double>(h) / draws, 0.3, 0.01);
}

class LocalTrain : public ::testing::Test {
 protected:
  Dataset data_ = synth_blobs(4, 6, 25, 1.0, 5);
  NetworkShape shape_{6, {8}, 5, 4};
  ModelParams global_ = ModelParams::initialize(shape_, 17);
  std::vector<std::size_t> shard_ = {3, 9, 14, 27, 40, 51, 66, 70, 88, 99};
};

TEST_F(LocalTrain, FullBatchSingleEpochIsOneStep) {
  TrainingOptions opt;
  opt.epochs = 1;
  opt.batch_size = shard_.size();
  opt.learning_rate = 0.1;
  const auto result = local_train(global_, data_, shard_, opt, 1);
  const Batch batch = data_.gather(shard_);
  auto expect = global_;
  sgd_step(expect, backward(global_, batch, forward(global_, batch)), 0.1);
  EXPECT_EQ(result.num_samples, shard_.size());
  for (std::size_t i = 0; i < expect.size(); ++i) {
    EXPECT_NEAR(result.params.values()[i], expect.values()[i], 1e-14);
  }
}

TEST_F(LocalTrain, ZeroLearningRateKeepsGlobal) {
  TrainingOptions opt;
  opt.learning_rate = 0.0;
  opt.kd_lambda = 1.0;
  EXPECT_EQ(local_train(global_, data_, shard_, opt, 2).params, global_);
}

TEST_F(LocalTrain, DeterministicPerSeed) {
  TrainingOptions opt;
  opt.kd_lambda = 0.5;
  opt.learning_rate = 0.05;
  EXPECT_EQ(local_train(global_, data_, shard_, opt, 3).params, local_train(global_, data_, shard_, opt, 3).params);
  EXPECT_NE(local_train(global_, data_, shard_, opt, 3).params, local_train(global_, data_, shard_, opt, 4).params);
}

TEST_F(LocalTrain, LossDecreasesWithSmallSteps) {
  Rng rng = make_rng(6);
  int improved = 0;
  const int trials = 40;
  for (int t = 0; t < trials; ++t) {
    const auto init = ModelParams::initialize(shape_, rng());
    std::vector<std::size_t> shard;
    for (std::size_t i = 0; i < data_.size(); ++i) {
      if (uniform01(rng) < 0.3) shard.push_back(i);
    }
    TrainingOptions opt;
    opt.epochs = 3;
    opt.learning_rate = 0.01;
    opt.kd_lambda = t % 2 == 0 ? 0.0 : 1.0;
    const auto trained = local_train(init, data_, shard, opt, rng());
    improved += dataset_loss(trained.params, data_, shard) <= dataset_loss(init, data_, shard) ? 1 : 0;
  }
  EXPECT_GE(improved, trials * 9 / 10);
}

TEST_F(LocalTrain, EmptyShardThrows) {
  EXPECT_ANY_THROW(local_train(global_, data_, std::vector<std::size_t>{}, TrainingOptions{}, 1));
}

TEST(Evaluate, ZeroClassifierOnBalancedTestIsChance) {
  const auto test = synth_blobs(10, 10, 1000, 1.0, 1);
  ModelParams params = ModelParams::initialize({10, {8}, 6, 10}, 2);
  params.classifier().setZero();
  const auto e = evaluate(params, test);
  EXPECT_NEAR(e.top1, 10.0, 2.0);
}

TEST(Evaluate, MemorizerScoresPerfectly) {
  const auto data = synth_blobs(4, 4, 30, 0.0, 1);
  ModelParams params = testing::identity_features(4, 4);
  params.classifier() = 10.0 * Matrix::Identity(4, 4);
  const auto e = evaluate(params, data);
  EXPECT_DOUBLE_EQ(e.top1, 100.0);
  for (double r : e.recall) EXPECT_DOUBLE_EQ(r, 1.0);
}

TEST(Evaluate, ConfusionColumnsAreRates) {
  const auto test = synth_blobs(5, 6, 40, 2.0, 3);
  const auto e = evaluate(ModelParams::initialize({6, {7}, 4, 5}, 9), test);
  for (Eigen::Index j = 0; j < 5; ++j) EXPECT_NEAR(e.confusion.col(j).sum(), 1.0, 1e-9);
  for (double r : e.recall) {
    EXPECT_GE(r, 0.0);
    EXPECT_LE(r, 1.0);
  }
}

TEST(Simulator, SingleParticipantRoundReturnsItsModel) {
  for (auto algorithm : {Algorithm::kCadis, Algorithm::kFedAvg}) {
    auto config = small_config(algorithm);
    config.clients_per_round = 1;
    const auto fed = load_federation(config);
    Simulator sim(config, fed);
    const auto start = sim.global();
    const auto m = sim.run_round();
    ASSERT_EQ(m.weights.size(), 1u);
    const auto client = m.weights.clients[0];
    TrainingOptions opt;
    opt.epochs = config.local_epochs;
    opt.batch_size = config.batch_size;
    opt.learning_rate = config.learning_rate;
    opt.kd_lambda = uses_kd(algorithm) ? config.kd.lambda : 0.0;
    const auto local = local_train(start, fed.train, fed.partition.shards[client].indices, opt,
                                   derive_seed(config.seed, {static_cast<std::uint64_t>(Stream::kClient), 0, client}));
    EXPECT_EQ(sim.global(), local.params);
  }
}

TEST(Simulator, SingletonClustersMatchFedAvg) {
  auto cadis = small_config(Algorithm::kCadisNoKd);
  cadis.epsilon = ThresholdSchedule{2.0, 2.0, 0};  // nothing ever clusters
  const auto fedavg = small_config(Algorithm::kFedAvg);
  const auto fed = load_federation(cadis);
  Simulator a(cadis, fed);
  Simulator b(fedavg, fed);
  for (int t = 0; t < 6; ++t) {
    const auto ma = a.run_round();
    b.run_round();
    EXPECT_EQ(ma.num_clusters, cadis.num_clients());
    ASSERT_EQ(a.global(), b.global()) << "round " << t;
  }
}

TEST(Simulator, FedAvgIsWeightedAverageOfLocalModels) {
  const auto config = small_config(Algorithm::kFedAvg);
  const auto fed = load_federation(config);
  Simulator sim(config, fed);
  const auto start = sim.global();
  const auto m = sim.run_round();
  TrainingOptions opt;
  opt.epochs = config.local_epochs;
  opt.batch_size = config.batch_size;
  opt.learning_rate = config.learning_rate;
  std::vector<double> expect(start.size(), 0.0);
  double total = 0.0;
  for (auto c : m.weights.clients) total += static_cast<double>(fed.partition.shards[c].num_samples());
  for (auto c : m.weights.clients) {
    const auto local = local_train(start, fed.train, fed.partition.shards[c].indices, opt,
                                   derive_seed(config.seed, {static_cast<std::uint64_t>(Stream::kClient), 0, c}));
    const double w = static_cast<double>(fed.partition.shards[c].num_samples()) / total;
    for (std::size_t i = 0; i < expect.size(); ++i) expect[i] += w * local.params.values()[i];
  }
  for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_NEAR(sim.global().values()[i], expect[i], 1e-12);
}

TEST(Simulator, MetricsAreWellFormed) {
  const auto config = small_config();
  const auto fed = load_federation(config);
  const auto r = run_experiment(config, fed);
  ASSERT_EQ(r.rounds.size(), config.rounds);
  for (std::size_t t = 0; t < r.rounds.size(); ++t) {
    const auto& m = r.rounds[t];
    EXPECT_EQ(m.round, t + 1);
    EXPECT_GE(m.top1, 0.0);
    EXPECT_LE(m.top1, 100.0);
    EXPECT_EQ(m.recall.size(), 5u);
    EXPECT_NEAR(std::accumulate(m.weights.weights.begin(), m.weights.weights.end(), 0.0), 1.0, 1e-12);
    EXPECT_GE(m.cluster_recovery, 0.0);
    EXPECT_LE(m.cluster_recovery, 1.0);
  }
  EXPECT_EQ(r.similarity.round(), config.rounds);
}

TEST(Simulator, ZeroRoundsEvaluatesInitialModelOnly) {
  auto config = small_config();
  config.rounds = 0;
  const auto fed = load_federation(config);
  const auto r = run_experiment(config, fed);
  EXPECT_TRUE(r.rounds.empty());
  EXPECT_EQ(r.final_model, ModelParams::initialize(config.network, config.seed));
  EXPECT_GE(r.initial.top1, 0.0);
}

TEST(Simulator, RerunIsByteIdentical) {
  const auto config = small_config();
  const auto fed = load_federation(config);
  EXPECT_EQ(metrics_csv(run_experiment(config, fed), 5), metrics_csv(run_experiment(config, fed), 5));
  auto other = config;
  other.seed = 12;
  const auto fed2 = load_federation(other);
  EXPECT_NE(metrics_csv(run_experiment(config, fed), 5), metrics_csv(run_experiment(other, fed2), 5));
}

TEST(Simulator, ThreadCountDoesNotChangeResults) {
  auto config = small_config();
  const auto fed = load_federation(config);
  const auto serial = run_experiment(config, fed);
  for (std::size_t threads : {2u, 3u, 8u}) {
    config.threads = threads;
    const auto parallel = run_experiment(config, fed);
    EXPECT_EQ(metrics_csv(parallel, 5), metrics_csv(serial, 5)) << threads;
    EXPECT_EQ(parallel.final_model, serial.final_model);
  }
}

TEST(Simulator, RejectsMismatchedNetwork) {
  auto config = small_config();
  const auto fed = load_federation(config);
  config.network.input_dim = 9;
  EXPECT_THROW(Simulator(config, fed), ConfigError);
}

TEST(ExperimentConfig, Validation) {
  auto c = small_config();
  EXPECT_NO_THROW(c.validate());
  c.clients_per_round = 11;
  EXPECT_ANY_THROW(c.validate());
  c = small_config();
  c.local_epochs = 0;
  EXPECT_ANY_THROW(c.validate());
  c = small_config();
  c.batch_size = 0;
  EXPECT_ANY_THROW(c.validate());
}

TEST(Algorithm, NamesRoundTrip) {
  for (auto a : {Algorithm::kCadis, Algorithm::kFedAvg, Algorithm::kCadisNoKd, Algorithm::kFedAvgKd}) {
    EXPECT_EQ(parse_algorithm(to_string(a)), a);
  }
  EXPECT_THROW(parse_algorithm("fedprox"), ConfigError);
}

}  // namespace
}  // namespace cadis
