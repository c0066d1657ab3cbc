#include "cadis/nn.h"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <string>

#include "cadis/rng.h"

namespace cadis {

namespace {

constexpr double kProbabilityFloor = 1e-12;
constexpr std::array<char, 4> kMagic = {'C', 'A', 'D', 'P'};
constexpr std::uint32_t kFormatVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "parameter files are written in host order");

}  // namespace

void NetworkShape::validate() const {
  if (input_dim == 0) throw ShapeError("input dimension must be positive");
  for (auto h : hidden) {
    if (h == 0) throw ShapeError("hidden layer width must be positive");
  }
  if (representation_dim < 1) throw ShapeError("representation dimension must be >= 1");
  if (num_classes < 2) throw ShapeError("class count must be >= 2");
}

std::size_t NetworkShape::layer_inputs(std::size_t layer) const {
  return layer == 0 ? input_dim : hidden[layer - 1];
}

std::size_t NetworkShape::layer_outputs(std::size_t layer) const {
  return layer < hidden.size() ? hidden[layer] : representation_dim;
}

std::size_t NetworkShape::num_params() const {
  std::size_t total = 0;
  for (std::size_t k = 0; k < num_feature_layers(); ++k) {
    total += layer_outputs(k) * (layer_inputs(k) + 1);
  }
  return total + num_classes * representation_dim;
}

ModelParams::ModelParams(NetworkShape shape) : shape_(std::move(shape)) {
  shape_.validate();
  std::size_t offset = 0;
  for (std::size_t k = 0; k < shape_.num_feature_layers(); ++k) {
    offsets_.push_back(offset);
    offset += shape_.layer_outputs(k) * (shape_.layer_inputs(k) + 1);
  }
  offsets_.push_back(offset);
  values_.assign(shape_.num_params(), 0.0);
}

ModelParams ModelParams::initialize(const NetworkShape& shape, std::uint64_t seed) {
  ModelParams params(shape);
  Rng rng = make_rng(seed, {static_cast<std::uint64_t>(Stream::kInit)});
  auto fill = [&](MatrixMap m) {
    const double limit = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      m.data()[i] = (2.0 * uniform01(rng) - 1.0) * limit;
    }
  };
  for (std::size_t k = 0; k < shape.num_feature_layers(); ++k) fill(params.weight(k));
  fill(params.classifier());
  return params;
}

MatrixMap ModelParams::weight(std::size_t layer) {
  return MatrixMap(values_.data() + offsets_[layer],
                   static_cast<Eigen::Index>(shape_.layer_outputs(layer)),
                   static_cast<Eigen::Index>(shape_.layer_inputs(layer)));
}

ConstMatrixMap ModelParams::weight(std::size_t layer) const {
  return ConstMatrixMap(values_.data() + offsets_[layer],
                        static_cast<Eigen::Index>(shape_.layer_outputs(layer)),
                        static_cast<Eigen::Index>(shape_.layer_inputs(layer)));
}

Eigen::Map<Vector> ModelParams::bias(std::size_t layer) {
  const auto out = shape_.layer_outputs(layer);
  return Eigen::Map<Vector>(values_.data() + offsets_[layer] + out * shape_.layer_inputs(layer),
                            static_cast<Eigen::Index>(out));
}

Eigen::Map<const Vector> ModelParams::bias(std::size_t layer) const {
  const auto out = shape_.layer_outputs(layer);
  return Eigen::Map<const Vector>(
      values_.data() + offsets_[layer] + out * shape_.layer_inputs(layer),
      static_cast<Eigen::Index>(out));
}

MatrixMap ModelParams::classifier() {
  return MatrixMap(values_.data() + offsets_.back(),
                   static_cast<Eigen::Index>(shape_.num_classes),
                   static_cast<Eigen::Index>(shape_.representation_dim));
}

ConstMatrixMap ModelParams::classifier() const {
  return ConstMatrixMap(values_.data() + offsets_.back(),
                        static_cast<Eigen::Index>(shape_.num_classes),
                        static_cast<Eigen::Index>(shape_.representation_dim));
}

void Batch::validate(const NetworkShape& shape) const {
  if (labels.empty()) throw ShapeError("batch must contain at least one sample");
  if (static_cast<std::size_t>(features.rows()) != labels.size()) {
    throw ShapeError("batch feature rows and label count differ");
  }
  if (static_cast<std::size_t>(features.cols()) != shape.input_dim) {
    throw ShapeError("batch feature width " + std::to_string(features.cols()) +
                     " does not match input dimension " + std::to_string(shape.input_dim));
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= shape.num_classes) {
      throw ShapeError("label " + std::to_string(y) + " out of range");
    }
  }
}

Matrix softmax(const Matrix& logits) {
  Matrix probs(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double top = logits.row(i).maxCoeff();
    probs.row(i) = (logits.row(i).array() - top).exp();
    probs.row(i) /= probs.row(i).sum();
  }
  return probs;
}

ForwardPass forward(const ModelParams& params, const Matrix& features) {
  const auto& shape = params.shape();
  if (static_cast<std::size_t>(features.cols()) != shape.input_dim) {
    throw ShapeError("feature width does not match input dimension");
  }
  ForwardPass pass;
  pass.activations.reserve(shape.num_feature_layers() + 1);
  pass.activations.push_back(features);
  for (std::size_t k = 0; k < shape.num_feature_layers(); ++k) {
    Matrix z = pass.activations.back() * params.weight(k).transpose();
    z.rowwise() += params.bias(k).transpose();
    pass.activations.push_back(z.cwiseMax(0.0));
  }
  pass.logits = pass.representations() * params.classifier().transpose();
  pass.probabilities = softmax(pass.logits);
  return pass;
}

double cross_entropy(const Matrix& probabilities, std::span<const int> labels) {
  if (static_cast<std::size_t>(probabilities.rows()) != labels.size() || labels.empty()) {
    throw ShapeError("probability rows and label count differ");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    if (labels[i] < 0 || labels[i] >= probabilities.cols()) throw ShapeError("label out of range");
    total -= std::log(std::max(probabilities(row, labels[i]), kProbabilityFloor));
  }
  return total / static_cast<double>(labels.size());
}

namespace {

ModelParams backward_impl(const ModelParams& params, const Batch& batch, const ForwardPass& pass,
                          const Matrix* representation_grad) {
  const auto& shape = params.shape();
  batch.validate(shape);
  const auto b = static_cast<Eigen::Index>(batch.size());
  if (pass.probabilities.rows() != b || pass.activations.size() != shape.num_feature_layers() + 1) {
    throw ShapeError("forward pass does not match batch");
  }

  ModelParams grad(shape);

  // dL/dlogits for the batch-mean cross-entropy.
  Matrix delta = pass.probabilities;
  for (Eigen::Index i = 0; i < b; ++i) delta(i, batch.labels[static_cast<std::size_t>(i)]) -= 1.0;
  delta /= static_cast<double>(b);

  grad.classifier() = delta.transpose() * pass.representations();
  Matrix upstream = delta * params.classifier();
  if (representation_grad != nullptr) {
    if (representation_grad->rows() != upstream.rows() ||
        representation_grad->cols() != upstream.cols()) {
      throw ShapeError("representation gradient shape mismatch");
    }
    upstream += *representation_grad;
  }

  for (std::size_t k = shape.num_feature_layers(); k-- > 0;) {
    const Matrix& out = pass.activations[k + 1];
    const Matrix& in = pass.activations[k];
    Matrix dz = (out.array() > 0.0).select(upstream, 0.0);
    grad.weight(k) = dz.transpose() * in;
    grad.bias(k) = dz.colwise().sum().transpose();
    if (k > 0) upstream = dz * params.weight(k);
  }
  return grad;
}

}  // namespace

ModelParams backward(const ModelParams& params, const Batch& batch, const ForwardPass& pass) {
  return backward_impl(params, batch, pass, nullptr);
}

ModelParams backward(const ModelParams& params, const Batch& batch, const ForwardPass& pass,
                     const Matrix& representation_grad) {
  return backward_impl(params, batch, pass, &representation_grad);
}

void sgd_step(ModelParams& params, const ModelParams& gradient, double learning_rate) {
  if (params.size() != gradient.size()) throw ShapeError("gradient size mismatch");
  auto p = params.values();
  auto g = gradient.values();
  for (std::size_t i = 0; i < p.size(); ++i) p[i] -= learning_rate * g[i];
}

Matrix penultimate(const ModelParams& params) { return params.classifier(); }

void save_params(const ModelParams& params, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  const auto& shape = params.shape();
  std::vector<std::uint64_t> sizes;
  sizes.push_back(shape.input_dim);
  sizes.insert(sizes.end(), shape.hidden.begin(), shape.hidden.end());
  sizes.push_back(shape.representation_dim);
  sizes.push_back(shape.num_classes);
  const auto count = static_cast<std::uint32_t>(sizes.size());
  const std::uint64_t n = params.size();
  out.write(kMagic.data(), kMagic.size());
  out.write(reinterpret_cast<const char*>(&kFormatVersion), sizeof kFormatVersion);
  out.write(reinterpret_cast<const char*>(&count), sizeof count);
  out.write(reinterpret_cast<const char*>(sizes.data()),
            static_cast<std::streamsize>(sizes.size() * sizeof(std::uint64_t)));
  out.write(reinterpret_cast<const char*>(&n), sizeof n);
  out.write(reinterpret_cast<const char*>(params.values().data()),
            static_cast<std::streamsize>(n * sizeof(double)));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

ModelParams load_params(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::array<char, 4> magic{};
  std::uint32_t version = 0;
  std::uint32_t count = 0;
  in.read(magic.data(), magic.size());
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&count), sizeof count);
  if (!in || magic != kMagic) throw FormatError("not a CADP parameter file");
  if (version != kFormatVersion) throw FormatError("unsupported CADP version");
  if (count < 3 || count > 1024) throw FormatError("bad layer count");
  std::vector<std::uint64_t> sizes(count);
  in.read(reinterpret_cast<char*>(sizes.data()),
          static_cast<std::streamsize>(count * sizeof(std::uint64_t)));
  std::uint64_t n = 0;
  in.read(reinterpret_cast<char*>(&n), sizeof n);
  if (!in) throw FormatError("truncated CADP header");

  NetworkShape shape;
  shape.input_dim = sizes.front();
  shape.hidden.assign(sizes.begin() + 1, sizes.end() - 2);
  shape.representation_dim = sizes[count - 2];
  shape.num_classes = sizes[count - 1];
  ModelParams params(shape);
  if (n != params.size()) throw FormatError("parameter count does not match shape header");
  in.read(reinterpret_cast<char*>(params.values().data()),
          static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) throw FormatError("truncated CADP payload");
  return params;
}

}  // namespace cadis
