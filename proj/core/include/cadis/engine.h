#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cadis/aggregation.h"
#include "cadis/dataset.h"
#include "cadis/kd.h"
#include "cadis/nn.h"
#include "cadis/partition.h"
#include "cadis/rng.h"
#include "cadis/similarity.h"

namespace cadis {

enum class Algorithm { kCadis, kFedAvg, kCadisNoKd, kFedAvgKd };

std::string to_string(Algorithm algorithm);  // "cadis", "fedavg", "cadis-no-kd", "fedavg-kd"
Algorithm parse_algorithm(const std::string& name);
bool uses_clustering(Algorithm algorithm);
bool uses_kd(Algorithm algorithm);

struct DataConfig {
  std::string source = "synthetic";  // "synthetic" or "mnist"
  std::filesystem::path mnist_dir = "data/mnist";
  // synthetic blobs
  int classes = 10;
  int dims = 32;
  int per_class = 600;
  int test_per_class = 100;
  double spread = 1.0;
};

struct ExperimentConfig {
  DataConfig data;
  PartitionSpec partition;
  NetworkShape network;
  std::size_t rounds = 150;
  std::size_t clients_per_round = 10;
  std::size_t local_epochs = 5;
  std::size_t batch_size = 8;
  double learning_rate = 0.001;
  KdConfig kd;
  ThresholdSchedule epsilon;
  TransitiveConfig transitive;
  ClusterCardinality cardinality = ClusterCardinality::kRoundParticipants;
  Algorithm algorithm = Algorithm::kCadis;
  std::uint64_t seed = 1;
  std::size_t threads = 1;
  std::size_t snapshot_every = 0;  // 0 = final snapshot only
  double target_accuracy = 90.0;

  std::size_t num_clients() const { return partition.num_clients; }
  void validate() const;
};

struct TrainingOptions {
  std::size_t epochs = 5;
  std::size_t batch_size = 8;
  double learning_rate = 0.001;
  double kd_lambda = 0.0;
  std::optional<double> kd_bandwidth;  // unset = adaptive
};

struct LocalResult {
  ModelParams params;
  std::size_t num_samples = 0;
  double mean_loss = 0.0;  // mean over all batches of CE + lambda * KL
};

struct Evaluation {
  double top1 = 0.0;  // percent
  // confusion(i, j): fraction of class-j samples predicted as class i.
  Matrix confusion;
  std::vector<double> recall;
};

struct RoundMetrics {
  std::size_t round = 0;
  double top1 = 0.0;
  std::vector<double> recall;
  WeightVector weights;
  std::vector<std::size_t> participant_clusters;  // assigned cluster per participant
  std::size_t num_clusters = 0;
  double cluster_recovery = 0.0;  // NaN when the algorithm does not cluster
  double qmatrix_mse = 0.0;       // NaN when the algorithm does not cluster
  double mean_local_loss = 0.0;
};

// Training data, held-out test data and the client split.
struct Federation {
  Dataset train;
  Dataset test;
  Partition partition;
};

Federation load_federation(const ExperimentConfig& config);

// Uniform k-subset of {0..n-1}, returned sorted.
std::vector<ClientId> sample_clients(std::size_t n, std::size_t k, Rng& rng);

LocalResult local_train(const ModelParams& global, const Dataset& data,
                        std::span<const std::size_t> shard, const TrainingOptions& options,
                        std::uint64_t seed);

// Mean cross-entropy of `params` on the given samples.
double dataset_loss(const ModelParams& params, const Dataset& data, std::span<const std::size_t> indices);

Evaluation evaluate(const ModelParams& params, const Dataset& test);

class Simulator {
 public:
  Simulator(ExperimentConfig config, const Federation& federation);

  RoundMetrics run_round();

  std::size_t round() const { return round_; }
  const ModelParams& global() const { return global_; }
  const SimilarityState& similarity() const { return similarity_; }
  const ClusterAssignment& assignment() const { return assignment_; }
  const ExperimentConfig& config() const { return config_; }

 private:
  TrainingOptions training_options() const;

  ExperimentConfig config_;
  const Federation& federation_;
  std::vector<std::size_t> truth_;
  ModelParams global_;
  SimilarityState similarity_;
  ClusterAssignment assignment_;
  std::size_t round_ = 0;
};

struct ExperimentResult {
  Evaluation initial;
  std::vector<RoundMetrics> rounds;
  ModelParams final_model;
  SimilarityState similarity;
  ClusterAssignment assignment;
};

// Called after each round, e.g. to write snapshots.
using RoundCallback = std::function<void(const Simulator&, const RoundMetrics&)>;

ExperimentResult run_experiment(const ExperimentConfig& config, const Federation& federation,
                                const RoundCallback& on_round = {});

}  // namespace cadis
