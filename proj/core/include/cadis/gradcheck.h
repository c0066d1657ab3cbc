#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cadis/kd.h"
#include "cadis/nn.h"

namespace cadis {

// CE(params; batch) + lambda * KL(teacher || student(params)). The teacher
// conditionals and bandwidth are held fixed.
double regularized_loss(const ModelParams& params, const Batch& batch, double lambda,
                        const ConditionalMatrix* teacher);

// Analytic gradient of regularized_loss.
ModelParams regularized_gradient(const ModelParams& params, const Batch& batch, double lambda,
                                 const ConditionalMatrix* teacher);

struct GradCheckOptions {
  double step = 1e-5;
  // |a - n| / max(|a|, |n|, abs_floor)
  double abs_floor = 1e-6;
  // Flip the sign of the analytic gradient at this flat index (mutation test).
  std::optional<std::size_t> inject_sign_flip;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;  // a ReLU flipped inside [theta - h, theta + h]
};

GradCheckReport check_gradient(const ModelParams& params, const Batch& batch, double lambda,
                               const ConditionalMatrix* teacher, const GradCheckOptions& options = {});

struct GradCheckCase {
  NetworkShape shape;
  std::size_t batch_size = 0;
  double lambda = 0.0;
  std::uint64_t seed = 0;
  GradCheckReport report;

  std::string describe() const;
};

// `trials` random small networks and batches (b in [1, 8]); lambda is drawn
// from {0} or [0.1, 2] unless `lambda` is fixed.
std::vector<GradCheckCase> run_gradcheck_suite(std::size_t trials, std::uint64_t seed,
                                               std::optional<double> lambda = std::nullopt,
                                               const GradCheckOptions& options = {});

}  // namespace cadis
