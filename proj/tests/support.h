#pragma once

#include <cmath>
#include <cstdint>

#include "cadis/nn.h"
#include "cadis/rng.h"

namespace cadis::testing {

// Identity feature layer: R = relu(x), so tests can place representations
// directly.
inline ModelParams identity_features(std::size_t u, std::size_t v) {
  NetworkShape shape{u, {}, u, v};
  ModelParams p(shape);
  p.weight(0).setIdentity();
  return p;
}

inline Matrix random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * standard_normal(rng);
  return m;
}

inline Batch random_batch(Rng& rng, std::size_t b, const NetworkShape& shape) {
  Batch batch;
  batch.features = random_matrix(rng, static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(shape.input_dim));
  for (std::size_t i = 0; i < b; ++i) batch.labels.push_back(static_cast<int>(uniform_index(rng, shape.num_classes)));
  return batch;
}

}  // namespace cadis::testing
