#include <benchmark/benchmark.h>

#include "cadis/engine.h"
#include "cadis/kd.h"
#include "cadis/nn.h"
#include "cadis/rng.h"
#include "cadis/similarity.h"

namespace cadis {
namespace {

Batch random_batch(Rng& rng, std::size_t b, const NetworkShape& shape) {
  Batch batch;
  batch.features.resize(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(shape.input_dim));
  for (Eigen::Index i = 0; i < batch.features.size(); ++i) batch.features.data()[i] = uniform01(rng);
  for (std::size_t i = 0; i < b; ++i) batch.labels.push_back(static_cast<int>(uniform_index(rng, shape.num_classes)));
  return batch;
}

// MNIST-sized network, batch size from the range argument.
void BM_ForwardBackward(benchmark::State& state) {
  const NetworkShape shape{784, {128}, 64, 10};
  const auto params = ModelParams::initialize(shape, 1);
  Rng rng = make_rng(2);
  const auto batch = random_batch(rng, static_cast<std::size_t>(state.range(0)), shape);
  for (auto _ : state) {
    const auto pass = forward(params, batch);
    benchmark::DoNotOptimize(backward(params, batch, pass));
  }
}
BENCHMARK(BM_ForwardBackward)->Arg(8)->Arg(64);

void BM_KdLossAndGrad(benchmark::State& state) {
  const auto b = state.range(0);
  Rng rng = make_rng(3);
  Matrix teacher_reps(b, 64), student_reps(b, 64);
  for (Eigen::Index i = 0; i < teacher_reps.size(); ++i) {
    teacher_reps.data()[i] = standard_normal(rng);
    student_reps.data()[i] = standard_normal(rng);
  }
  for (auto _ : state) {
    const double h = median_pairwise_distance(teacher_reps);
    const auto teacher = pairwise_conditional(teacher_reps, h);
    benchmark::DoNotOptimize(kd_loss(teacher, pairwise_conditional(student_reps, h)));
    benchmark::DoNotOptimize(kd_grad(teacher, student_reps, h));
  }
}
BENCHMARK(BM_KdLossAndGrad)->Arg(8)->Arg(64);

// One similarity update, transitive fill, rescale and clustering for n = 100, k = 10.
void BM_SimilarityRound(benchmark::State& state) {
  const std::size_t n = 100;
  Rng rng = make_rng(4);
  auto random_w = [&] {
    Matrix w(10, 64);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = standard_normal(rng);
    return w;
  };
  const Matrix global = random_w();
  SimilarityState sim(n, ThresholdSchedule{}, TransitiveConfig{});
  std::size_t t = 0;
  for (auto _ : state) {
    state.PauseTiming();
    Rng sampler = make_rng(5, {t});
    const auto participants = sample_clients(n, 10, sampler);
    std::vector<Matrix> classifiers;
    for (std::size_t i = 0; i < participants.size(); ++i) classifiers.push_back(random_w());
    state.ResumeTiming();
    update_similarity(sim, participants, classifiers, global);
    Rng transitive = make_rng(6, {t});
    transitive_fill(sim, participants, transitive);
    rescale_q(sim);
    benchmark::DoNotOptimize(cluster(sim, t));
    ++t;
  }
}
BENCHMARK(BM_SimilarityRound);

// Full CADIS round on the synthetic cluster profile.
void BM_SyntheticRound(benchmark::State& state) {
  ExperimentConfig config;
  config.network = NetworkShape{32, {32}, 16, 10};
  config.local_epochs = 2;
  config.learning_rate = 0.01;
  config.partition.seed = 7;
  config.algorithm = state.range(0) == 0 ? Algorithm::kCadis : Algorithm::kFedAvg;
  const auto fed = load_federation(config);
  Simulator sim(config, fed);
  for (auto _ : state) benchmark::DoNotOptimize(sim.run_round());
  state.SetLabel(to_string(config.algorithm));
}
BENCHMARK(BM_SyntheticRound)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace
}  // namespace cadis

BENCHMARK_MAIN();
