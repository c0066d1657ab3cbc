#include "cadis/kd.h"

#include <algorithm>
#include <cmath>
#include <vector>

namespace cadis {

void KdConfig::validate() const {
  if (!(lambda >= 0.0)) throw ConfigError("kd lambda must be >= 0");
  if (fixed_bandwidth && !(*fixed_bandwidth > 0.0)) {
    throw ConfigError("kd bandwidth must be > 0");
  }
  if (!(probability_floor > 0.0)) throw ConfigError("kd probability floor must be > 0");
}

double median_pairwise_distance(const Matrix& reps) {
  const auto b = reps.rows();
  std::vector<double> dist;
  dist.reserve(static_cast<std::size_t>(b * (b - 1) / 2));
  for (Eigen::Index i = 0; i < b; ++i) {
    for (Eigen::Index j = i + 1; j < b; ++j) dist.push_back((reps.row(i) - reps.row(j)).norm());
  }
  if (dist.empty()) return 1.0;
  const auto mid = dist.size() / 2;
  std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(mid), dist.end());
  double median = dist[mid];
  if (dist.size() % 2 == 0) {
    median = 0.5 * (median + *std::max_element(dist.begin(),
                                                dist.begin() + static_cast<std::ptrdiff_t>(mid)));
  }
  return median > 0.0 ? median : 1.0;
}

double resolve_bandwidth(const KdConfig& config, const Matrix& teacher_representations) {
  if (config.fixed_bandwidth) return *config.fixed_bandwidth;
  return median_pairwise_distance(teacher_representations);
}

ConditionalMatrix pairwise_conditional(const Matrix& reps, double bandwidth) {
  const auto b = reps.rows();
  if (b < 2) throw ShapeError("pairwise conditionals need a batch of at least 2 samples");
  if (!(bandwidth > 0.0)) throw ShapeError("kernel bandwidth must be positive");

  const double scale = 1.0 / (2.0 * bandwidth * bandwidth);
  // Work with log-kernels and subtract the column max so that far-apart
  // samples do not underflow the whole column to 0/0.
  Matrix logk(b, b);
  for (Eigen::Index i = 0; i < b; ++i) {
    logk(i, i) = 0.0;
    for (Eigen::Index j = i + 1; j < b; ++j) {
      const double v = -(reps.row(i) - reps.row(j)).squaredNorm() * scale;
      logk(i, j) = v;
      logk(j, i) = v;
    }
  }

  ConditionalMatrix out{Matrix::Zero(b, b), bandwidth};
  for (Eigen::Index j = 0; j < b; ++j) {
    double top = -INFINITY;
    for (Eigen::Index i = 0; i < b; ++i) {
      if (i != j) top = std::max(top, logk(i, j));
    }
    double total = 0.0;
    for (Eigen::Index i = 0; i < b; ++i) {
      if (i == j) continue;
      out.p(i, j) = std::exp(logk(i, j) - top);
      total += out.p(i, j);
    }
    out.p.col(j) /= total;
  }
  return out;
}

double kd_loss(const ConditionalMatrix& teacher, const ConditionalMatrix& student,
               double floor) {
  const auto b = teacher.p.rows();
  if (student.p.rows() != b || student.p.cols() != b || teacher.p.cols() != b) {
    throw ShapeError("conditional matrices differ in size");
  }
  double loss = 0.0;
  for (Eigen::Index i = 0; i < b; ++i) {
    for (Eigen::Index j = 0; j < b; ++j) {
      if (j == i) continue;
      const double q = teacher.p(j, i);
      if (q <= 0.0) continue;
      loss += q * (std::log(std::max(q, floor)) - std::log(std::max(student.p(j, i), floor)));
    }
  }
  return loss;
}

Matrix kd_grad(const ConditionalMatrix& teacher, const Matrix& student_reps, double bandwidth,
               double floor) {
  const auto b = student_reps.rows();
  if (teacher.p.rows() != b) throw ShapeError("teacher and student batch sizes differ");
  Matrix grad = Matrix::Zero(b, student_reps.cols());
  if (b < 3) return grad;

  // -log p_{j|i} = d_ji / (2h^2) + log Z_i, so
  // dL/dx = sum_i sum_{j!=i} (q_{j|i} - c_i p_{j|i}) / (2h^2) * grad d_ji
  // with d_ji = |x_j - x_i|^2 and c_i the teacher mass on the terms that are
  // not floored; a floored term drops its q_{j|i} part as well.
  const ConditionalMatrix student = pairwise_conditional(student_reps, bandwidth);
  const double scale = 1.0 / (2.0 * bandwidth * bandwidth);
  for (Eigen::Index i = 0; i < b; ++i) {
    auto active = [&](Eigen::Index j) {
      return j != i && teacher.p(j, i) > 0.0 && student.p(j, i) >= floor;
    };
    double mass = 0.0;
    for (Eigen::Index j = 0; j < b; ++j) {
      if (active(j)) mass += teacher.p(j, i);
    }
    for (Eigen::Index j = 0; j < b; ++j) {
      if (j == i) continue;
      const double q = active(j) ? teacher.p(j, i) : 0.0;
      const double coeff = 2.0 * scale * (q - mass * student.p(j, i));
      const auto diff = (student_reps.row(j) - student_reps.row(i)).eval();
      grad.row(j) += coeff * diff;
      grad.row(i) -= coeff * diff;
    }
  }
  return grad;
}

}  // namespace cadis
