#pragma once

#include <optional>

#include "cadis/types.h"

namespace cadis {

struct KdConfig {
  double lambda = 1.0;
  // Unset means per-batch adaptive bandwidth (median pairwise teacher distance).
  std::optional<double> fixed_bandwidth;
  double probability_floor = 1e-12;

  void validate() const;
};

// Column-conditional kernel probabilities: entry (i, j) is p_{i|j}, the
// probability of picking sample i as the neighbour of sample j. Columns sum
// to one over i != j; the diagonal is zero.
struct ConditionalMatrix {
  Matrix p;
  double bandwidth = 1.0;

  std::size_t size() const { return static_cast<std::size_t>(p.rows()); }
};

// Median of the b(b-1)/2 pairwise Euclidean distances; 1.0 when that is 0.
double median_pairwise_distance(const Matrix& representations);

double resolve_bandwidth(const KdConfig& config, const Matrix& teacher_representations);

// Gaussian kernel exp(-|a-b|^2 / (2 h^2)). Throws ShapeError for b < 2.
ConditionalMatrix pairwise_conditional(const Matrix& representations, double bandwidth);

// KL(teacher || student) summed over columns:
//   sum_i sum_{j != i} q_{j|i} log(q_{j|i} / p_{j|i}),
// with both probabilities floored inside the log only.
double kd_loss(const ConditionalMatrix& teacher, const ConditionalMatrix& student,
               double probability_floor = 1e-12);

// Gradient of kd_loss with respect to the student representations, using
// the student bandwidth fixed (it depends on the teacher only). Terms whose
// student probability sits below the floor are constant in the loss and
// contribute nothing here.
Matrix kd_grad(const ConditionalMatrix& teacher, const Matrix& student_representations,
               double bandwidth, double probability_floor = 1e-12);

}  // namespace cadis
