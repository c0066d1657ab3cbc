#include "cadis/gradcheck.h"

#include <algorithm>
#include <cmath>

#include "cadis/rng.h"

namespace cadis {

namespace {

bool has_kd(double lambda, const ConditionalMatrix* teacher, std::size_t b) {
  return teacher != nullptr && lambda != 0.0 && b >= 2;
}

std::vector<bool> relu_pattern(const ForwardPass& pass) {
  std::vector<bool> out;
  for (std::size_t k = 1; k < pass.activations.size(); ++k) {
    const auto& a = pass.activations[k];
    for (Eigen::Index i = 0; i < a.size(); ++i) out.push_back(a.data()[i] > 0.0);
  }
  return out;
}

}  // namespace

double regularized_loss(const ModelParams& params, const Batch& batch, double lambda,
                        const ConditionalMatrix* teacher) {
  const auto pass = forward(params, batch);
  double loss = cross_entropy(pass.probabilities, batch.labels);
  if (has_kd(lambda, teacher, batch.size())) {
    const auto student = pairwise_conditional(pass.representations(), teacher->bandwidth);
    loss += lambda * kd_loss(*teacher, student);
  }
  return loss;
}

ModelParams regularized_gradient(const ModelParams& params, const Batch& batch, double lambda,
                                 const ConditionalMatrix* teacher) {
  const auto pass = forward(params, batch);
  if (!has_kd(lambda, teacher, batch.size())) return backward(params, batch, pass);
  const Matrix rep_grad = lambda * kd_grad(*teacher, pass.representations(), teacher->bandwidth);
  return backward(params, batch, pass, rep_grad);
}

GradCheckReport check_gradient(const ModelParams& params, const Batch& batch, double lambda,
                               const ConditionalMatrix* teacher, const GradCheckOptions& options) {
  ModelParams analytic = regularized_gradient(params, batch, lambda, teacher);
  if (options.inject_sign_flip) {
    auto& g = analytic.values()[*options.inject_sign_flip];
    g = g == 0.0 ? 1.0 : -g;
  }

  GradCheckReport report;
  ModelParams probe = params;
  auto theta = probe.values();
  const auto g = analytic.values();
  const double h = options.step;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double saved = theta[i];
    theta[i] = saved + h;
    const auto pattern_plus = relu_pattern(forward(probe, batch));
    const double up = regularized_loss(probe, batch, lambda, teacher);
    theta[i] = saved - h;
    const auto pattern_minus = relu_pattern(forward(probe, batch));
    const double down = regularized_loss(probe, batch, lambda, teacher);
    theta[i] = saved;
    if (pattern_plus != pattern_minus) {
      ++report.skipped_kinks;
      continue;
    }
    const double numeric = (up - down) / (2.0 * h);
    const double err =
        std::abs(g[i] - numeric) / std::max({std::abs(g[i]), std::abs(numeric), options.abs_floor});
    ++report.checked;
    if (err > report.max_relative_error) {
      report.max_relative_error = err;
      report.worst_index = i;
    }
  }
  return report;
}

std::string GradCheckCase::describe() const {
  std::string s = "d=" + std::to_string(shape.input_dim) + " hidden=[";
  for (std::size_t i = 0; i < shape.hidden.size(); ++i) s += (i ? "," : "") + std::to_string(shape.hidden[i]);
  s += "] u=" + std::to_string(shape.representation_dim) + " v=" + std::to_string(shape.num_classes) +
       " b=" + std::to_string(batch_size) + " lambda=" + std::to_string(lambda) +
       " seed=" + std::to_string(seed);
  return s;
}

std::vector<GradCheckCase> run_gradcheck_suite(std::size_t trials, std::uint64_t seed,
                                               std::optional<double> lambda,
                                               const GradCheckOptions& options) {
  std::vector<GradCheckCase> cases;
  for (std::size_t t = 0; t < trials; ++t) {
    GradCheckCase c;
    c.seed = derive_seed(seed, {t});
    Rng rng = make_rng(c.seed);
    c.shape.input_dim = 2 + uniform_index(rng, 5);
    c.shape.hidden.resize(uniform_index(rng, 3));
    for (auto& w : c.shape.hidden) w = 2 + uniform_index(rng, 5);
    c.shape.representation_dim = 2 + uniform_index(rng, 4);
    c.shape.num_classes = 2 + uniform_index(rng, 4);
    c.batch_size = 1 + uniform_index(rng, 8);
    if (lambda) {
      c.lambda = *lambda;
    } else {
      c.lambda = uniform01(rng) < 0.25 ? 0.0 : 0.1 + 1.9 * uniform01(rng);
    }

    // Positive biases keep most units active so the check is not all kinks.
    auto params = ModelParams::initialize(c.shape, derive_seed(c.seed, {1}));
    auto teacher_params = ModelParams::initialize(c.shape, derive_seed(c.seed, {2}));
    for (auto* p : {&params, &teacher_params}) {
      for (std::size_t k = 0; k < c.shape.num_feature_layers(); ++k) {
        for (Eigen::Index j = 0; j < p->bias(k).size(); ++j) p->bias(k)(j) = 0.1 + 0.2 * uniform01(rng);
      }
    }

    Batch batch;
    batch.features.resize(static_cast<Eigen::Index>(c.batch_size), static_cast<Eigen::Index>(c.shape.input_dim));
    for (Eigen::Index i = 0; i < batch.features.size(); ++i) batch.features.data()[i] = standard_normal(rng);
    for (std::size_t i = 0; i < c.batch_size; ++i) {
      batch.labels.push_back(static_cast<int>(uniform_index(rng, c.shape.num_classes)));
    }

    std::optional<ConditionalMatrix> teacher;
    if (c.batch_size >= 2) {
      const auto reps = forward(teacher_params, batch.features).representations();
      teacher = pairwise_conditional(reps, median_pairwise_distance(reps));
    }
    c.report = check_gradient(params, batch, c.lambda, teacher ? &*teacher : nullptr, options);
    cases.push_back(std::move(c));
  }
  return cases;
}

}  // namespace cadis
