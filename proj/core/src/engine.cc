#include "cadis/engine.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <thread>

namespace cadis {

namespace {

constexpr std::size_t kEvalChunk = 2048;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

}  // namespace

std::string to_string(Algorithm algorithm) {
  switch (algorithm) {
    case Algorithm::kCadis: return "cadis";
    case Algorithm::kFedAvg: return "fedavg";
    case Algorithm::kCadisNoKd: return "cadis-no-kd";
    case Algorithm::kFedAvgKd: return "fedavg-kd";
  }
  return "?";
}

Algorithm parse_algorithm(const std::string& name) {
  if (name == "cadis") return Algorithm::kCadis;
  if (name == "fedavg") return Algorithm::kFedAvg;
  if (name == "cadis-no-kd") return Algorithm::kCadisNoKd;
  if (name == "fedavg-kd") return Algorithm::kFedAvgKd;
  throw ConfigError("unknown algorithm '" + name +
                    "' (expected cadis, fedavg, cadis-no-kd or fedavg-kd)");
}

bool uses_clustering(Algorithm a) { return a == Algorithm::kCadis || a == Algorithm::kCadisNoKd; }
bool uses_kd(Algorithm a) { return a == Algorithm::kCadis || a == Algorithm::kFedAvgKd; }

void ExperimentConfig::validate() const {
  partition.validate();
  network.validate();
  kd.validate();
  epsilon.validate();
  if (clients_per_round < 1 || clients_per_round > num_clients()) {
    throw ConfigError("clients_per_round must be in [1, num_clients]");
  }
  if (local_epochs < 1) throw ConfigError("local_epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be >= 0");
  if (threads < 1) throw ConfigError("threads must be >= 1");
  if (data.source != "synthetic" && data.source != "mnist") {
    throw ConfigError("data.source must be 'synthetic' or 'mnist'");
  }
}

Federation load_federation(const ExperimentConfig& config) {
  Federation fed;
  if (config.data.source == "mnist") {
    const auto& dir = config.data.mnist_dir;
    fed.train = load_idx(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte", "mnist-train");
    fed.test = load_idx(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte", "mnist-test");
  } else {
    const auto& d = config.data;
    fed.train = synth_blobs(d.classes, d.dims, d.per_class, d.spread, derive_seed(config.seed, {1}));
    fed.test = synth_blobs(d.classes, d.dims, d.test_per_class, d.spread, derive_seed(config.seed, {2}));
    fed.test.provenance = "synthetic-test";
  }
  fed.partition = partition(fed.train, config.partition);
  return fed;
}

std::vector<ClientId> sample_clients(std::size_t n, std::size_t k, Rng& rng) {
  if (k > n) throw std::invalid_argument("cannot sample more clients than exist");
  // Partial Fisher-Yates.
  std::vector<ClientId> ids(n);
  std::iota(ids.begin(), ids.end(), ClientId{0});
  for (std::size_t i = 0; i < k; ++i) {
    const auto j = i + uniform_index(rng, n - i);
    std::swap(ids[i], ids[j]);
  }
  ids.resize(k);
  std::sort(ids.begin(), ids.end());
  return ids;
}

LocalResult local_train(const ModelParams& global, const Dataset& data,
                        std::span<const std::size_t> shard, const TrainingOptions& options,
                        std::uint64_t seed) {
  if (shard.empty()) throw std::invalid_argument("cannot train on an empty shard");
  Rng rng(seed);
  LocalResult result{global, shard.size(), 0.0};
  std::vector<std::size_t> order(shard.begin(), shard.end());
  const bool with_kd = options.kd_lambda > 0.0;
  KdConfig kd;
  kd.lambda = options.kd_lambda;
  kd.fixed_bandwidth = options.kd_bandwidth;

  double loss_sum = 0.0;
  std::size_t batches = 0;
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      const auto len = std::min(options.batch_size, order.size() - start);
      const Batch batch = data.gather(std::span(order).subspan(start, len));
      const ForwardPass pass = forward(result.params, batch);
      double loss = cross_entropy(pass.probabilities, batch.labels);
      ModelParams grad(global.shape());
      if (with_kd && len >= 3) {
        const ForwardPass teacher_pass = forward(global, batch.features);
        const Matrix& teacher_reps = teacher_pass.representations();
        const double h = resolve_bandwidth(kd, teacher_reps);
        const auto teacher = pairwise_conditional(teacher_reps, h);
        const auto student = pairwise_conditional(pass.representations(), h);
        loss += kd.lambda * kd_loss(teacher, student, kd.probability_floor);
        const Matrix rep_grad = kd.lambda * kd_grad(teacher, pass.representations(), h, kd.probability_floor);
        grad = backward(result.params, batch, pass, rep_grad);
      } else {
        grad = backward(result.params, batch, pass);
      }
      sgd_step(result.params, grad, options.learning_rate);
      loss_sum += loss;
      ++batches;
    }
  }
  result.mean_loss = loss_sum / static_cast<double>(batches);
  return result;
}

double dataset_loss(const ModelParams& params, const Dataset& data, std::span<const std::size_t> indices) {
  double total = 0.0;
  for (std::size_t start = 0; start < indices.size(); start += kEvalChunk) {
    const auto len = std::min(kEvalChunk, indices.size() - start);
    const Batch batch = data.gather(indices.subspan(start, len));
    const ForwardPass pass = forward(params, batch);
    total += cross_entropy(pass.probabilities, batch.labels) * static_cast<double>(len);
  }
  return total / static_cast<double>(indices.size());
}

Evaluation evaluate(const ModelParams& params, const Dataset& test) {
  if (test.size() == 0) throw std::invalid_argument("empty test set");
  const auto v = static_cast<Eigen::Index>(params.shape().num_classes);
  Matrix counts = Matrix::Zero(v, v);
  std::vector<double> per_class(static_cast<std::size_t>(v), 0.0);
  std::size_t correct = 0;
  for (std::size_t start = 0; start < test.size(); start += kEvalChunk) {
    const auto len = std::min(kEvalChunk, test.size() - start);
    const auto rows = static_cast<Eigen::Index>(len);
    const ForwardPass pass =
        forward(params, Matrix(test.features.middleRows(static_cast<Eigen::Index>(start), rows)));
    for (Eigen::Index r = 0; r < rows; ++r) {
      Eigen::Index predicted = 0;
      pass.logits.row(r).maxCoeff(&predicted);
      const int truth = test.labels[start + static_cast<std::size_t>(r)];
      counts(predicted, truth) += 1.0;
      per_class[static_cast<std::size_t>(truth)] += 1.0;
      if (predicted == truth) ++correct;
    }
  }
  Evaluation out;
  out.top1 = 100.0 * static_cast<double>(correct) / static_cast<double>(test.size());
  out.confusion = counts;
  for (Eigen::Index j = 0; j < v; ++j) {
    if (per_class[static_cast<std::size_t>(j)] > 0.0) {
      out.confusion.col(j) /= per_class[static_cast<std::size_t>(j)];
    }
    out.recall.push_back(out.confusion(j, j));
  }
  return out;
}

Simulator::Simulator(ExperimentConfig config, const Federation& federation)
    : config_(std::move(config)), federation_(federation) {
  config_.validate();
  if (federation_.train.dim() != config_.network.input_dim ||
      federation_.test.dim() != config_.network.input_dim) {
    throw ConfigError("network input_dim does not match the dataset feature width");
  }
  if (static_cast<std::size_t>(federation_.train.num_classes) > config_.network.num_classes) {
    throw ConfigError("network has fewer classes than the dataset");
  }
  if (federation_.partition.shards.size() != config_.num_clients()) {
    throw ConfigError("partition does not match the configured client count");
  }
  truth_ = federation_.partition.ground_truth();
  global_ = ModelParams::initialize(config_.network, config_.seed);
  similarity_ = SimilarityState(config_.num_clients(), config_.epsilon, config_.transitive);
  assignment_ = cluster_with_threshold(similarity_.q(), 2.0);  // singletons
}

TrainingOptions Simulator::training_options() const {
  TrainingOptions opt;
  opt.epochs = config_.local_epochs;
  opt.batch_size = config_.batch_size;
  opt.learning_rate = config_.learning_rate;
  opt.kd_lambda = uses_kd(config_.algorithm) ? config_.kd.lambda : 0.0;
  opt.kd_bandwidth = config_.kd.fixed_bandwidth;
  return opt;
}

RoundMetrics Simulator::run_round() {
  const auto t = round_;
  const auto seed = config_.seed;
  Rng sampler = make_rng(seed, {static_cast<std::uint64_t>(Stream::kSampling), t});
  const auto participants = sample_clients(config_.num_clients(), config_.clients_per_round, sampler);

  // (1) local training, one derived stream per (round, client).
  const auto options = training_options();
  std::vector<std::optional<LocalResult>> results(participants.size());
  auto train_one = [&](std::size_t slot) {
    const auto client = participants[slot];
    const auto& shard = federation_.partition.shards[client];
    results[slot] = local_train(global_, federation_.train, shard.indices, options,
                                derive_seed(seed, {static_cast<std::uint64_t>(Stream::kClient), t, client}));
  };
  const auto workers = std::min(config_.threads, participants.size());
  if (workers <= 1) {
    for (std::size_t s = 0; s < participants.size(); ++s) train_one(s);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t s = w; s < participants.size(); s += workers) train_one(s);
      });
    }
    for (auto& th : pool) th.join();
  }

  std::vector<ModelParams> models;
  std::vector<std::size_t> counts;
  double loss_sum = 0.0;
  for (auto& r : results) {
    counts.push_back(r->num_samples);
    loss_sum += r->mean_loss;
    models.push_back(std::move(r->params));
  }

  RoundMetrics metrics;
  metrics.round = t + 1;
  metrics.mean_local_loss = loss_sum / static_cast<double>(models.size());

  if (uses_clustering(config_.algorithm)) {
    // (2) similarity, (3) clustering, (4) cluster-balanced aggregation.
    std::vector<Matrix> classifiers;
    for (const auto& m : models) classifiers.push_back(penultimate(m));
    if (participants.size() >= 2) {
      update_similarity(similarity_, participants, classifiers, penultimate(global_));
    }
    Rng transitive_rng = make_rng(seed, {static_cast<std::uint64_t>(Stream::kTransitive), t});
    transitive_fill(similarity_, participants, transitive_rng);
    rescale_q(similarity_);
    assignment_ = cluster(similarity_, t);
    metrics.weights = cadis_weights(participants, assignment_, counts, std::nullopt, config_.cardinality);
    metrics.cluster_recovery = cluster_recovery(assignment_.cluster_of, truth_);
    metrics.qmatrix_mse = qmatrix_mse(similarity_.q(), truth_);
  } else {
    metrics.weights = fedavg_weights(participants, counts);
    metrics.cluster_recovery = kNaN;
    metrics.qmatrix_mse = kNaN;
  }
  for (auto c : participants) metrics.participant_clusters.push_back(assignment_.cluster_of[c]);
  metrics.num_clusters = assignment_.num_clusters();

  global_ = aggregate(models, metrics.weights);
  similarity_.set_round(t + 1);
  ++round_;

  const auto eval = evaluate(global_, federation_.test);
  metrics.top1 = eval.top1;
  metrics.recall = eval.recall;
  return metrics;
}

ExperimentResult run_experiment(const ExperimentConfig& config, const Federation& federation,
                                const RoundCallback& on_round) {
  Simulator sim(config, federation);
  ExperimentResult result;
  result.initial = evaluate(sim.global(), federation.test);
  for (std::size_t t = 0; t < config.rounds; ++t) {
    result.rounds.push_back(sim.run_round());
    if (on_round) on_round(sim, result.rounds.back());
  }
  result.final_model = sim.global();
  result.similarity = sim.similarity();
  result.assignment = sim.assignment();
  return result;
}

}  // namespace cadis
