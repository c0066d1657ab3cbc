#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "cadis/types.h"

namespace cadis {

// Dense classifier: input -> (affine + ReLU)* -> representation R (u) -> W (v x u) -> softmax.
// Feature layers carry biases; the classifier W does not.
struct NetworkShape {
  std::size_t input_dim = 784;
  std::vector<std::size_t> hidden = {128};
  std::size_t representation_dim = 64;
  std::size_t num_classes = 10;

  void validate() const;
  std::size_t num_feature_layers() const { return hidden.size() + 1; }
  std::size_t layer_inputs(std::size_t layer) const;
  std::size_t layer_outputs(std::size_t layer) const;
  std::size_t num_params() const;

  bool operator==(const NetworkShape&) const = default;
};

// Flat parameter vector. Layout, per feature layer k: weight (out x in,
// row-major) then bias (out); finally the classifier W (v x u, row-major).
class ModelParams {
 public:
  ModelParams() = default;
  explicit ModelParams(NetworkShape shape);

  // Glorot-uniform weights, zero biases.
  static ModelParams initialize(const NetworkShape& shape, std::uint64_t seed);

  const NetworkShape& shape() const { return shape_; }
  std::size_t size() const { return values_.size(); }
  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  MatrixMap weight(std::size_t layer);
  ConstMatrixMap weight(std::size_t layer) const;
  Eigen::Map<Vector> bias(std::size_t layer);
  Eigen::Map<const Vector> bias(std::size_t layer) const;
  MatrixMap classifier();
  ConstMatrixMap classifier() const;
  std::size_t classifier_offset() const { return offsets_.back(); }

  bool operator==(const ModelParams& other) const {
    return shape_ == other.shape_ && values_ == other.values_;
  }

 private:
  NetworkShape shape_;
  // Aligned so vectorized reductions over the maps peel identically on every
  // allocation; plain operator new only guarantees 16 bytes.
  std::vector<double, Eigen::aligned_allocator<double>> values_;
  // Start of each feature layer's weight block, then the classifier block.
  std::vector<std::size_t> offsets_;
};

struct Batch {
  Matrix features;          // b x d
  std::vector<int> labels;  // b entries in [0, v)

  std::size_t size() const { return labels.size(); }
  void validate(const NetworkShape& shape) const;
};

struct ForwardPass {
  // activations[0] is the input; activations[k + 1] is the ReLU output of
  // feature layer k. The last entry holds the representations R.
  std::vector<Matrix> activations;
  Matrix logits;
  Matrix probabilities;

  const Matrix& representations() const { return activations.back(); }
};

ForwardPass forward(const ModelParams& params, const Matrix& features);
inline ForwardPass forward(const ModelParams& params, const Batch& batch) {
  batch.validate(params.shape());
  return forward(params, batch.features);
}

// Row-wise softmax with max subtraction.
Matrix softmax(const Matrix& logits);

// Mean over the batch of -ln p_y, probabilities floored at 1e-12.
double cross_entropy(const Matrix& probabilities, std::span<const int> labels);

// Gradient of mean cross-entropy, plus any extra loss whose gradient with
// respect to the representations is supplied (already scaled).
ModelParams backward(const ModelParams& params, const Batch& batch, const ForwardPass& pass);
ModelParams backward(const ModelParams& params, const Batch& batch, const ForwardPass& pass,
                     const Matrix& representation_grad);

void sgd_step(ModelParams& params, const ModelParams& gradient, double learning_rate);

// Copy of the classifier matrix W (v x u).
Matrix penultimate(const ModelParams& params);

// Binary format: "CADP", u32 version, u32 layer count, u64 sizes
// (d, h_1..h_L, u, v), then u64 parameter count and little-endian f64 values.
void save_params(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_params(const std::filesystem::path& path);

}  // namespace cadis
