#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include <unistd.h>

#include <gtest/gtest.h>

#include "cadis/gradcheck.h"
#include "cadis/nn.h"
#include "support.h"

namespace cadis {
namespace {

using testing::identity_features;

TEST(NetworkShape, CountsParameters) {
  NetworkShape shape{784, {128}, 64, 10};
  EXPECT_EQ(shape.num_params(), 128u * 785 + 64u * 129 + 10u * 64);
  EXPECT_EQ(ModelParams(shape).size(), shape.num_params());
  EXPECT_EQ(ModelParams(shape).classifier().size(), 640);
}

TEST(NetworkShape, RejectsDegenerate) {
  EXPECT_THROW((NetworkShape{4, {}, 0, 3}.validate()), ShapeError);
  EXPECT_THROW((NetworkShape{4, {}, 2, 1}.validate()), ShapeError);
  EXPECT_THROW((NetworkShape{4, {0}, 2, 3}.validate()), ShapeError);
}

TEST(Forward, ZeroClassifierIsUniform) {
  Rng rng = make_rng(3);
  auto params = ModelParams::initialize({5, {7}, 4, 6}, 11);
  params.classifier().setZero();
  const auto pass = forward(params, testing::random_matrix(rng, 4, 5));
  for (Eigen::Index i = 0; i < pass.probabilities.size(); ++i) {
    EXPECT_DOUBLE_EQ(pass.probabilities.data()[i], 1.0 / 6.0);
  }
}

TEST(Forward, HandEvaluatedSoftmax) {
  auto params = identity_features(2, 2);
  params.classifier() << 1, 0, 0, 0;
  Matrix x(1, 2);
  x << 1, 0;
  const auto pass = forward(params, x);
  EXPECT_DOUBLE_EQ(pass.logits(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(pass.logits(0, 1), 0.0);
  const double e = std::numbers::e;
  EXPECT_NEAR(pass.probabilities(0, 0), e / (e + 1), 1e-15);
  EXPECT_NEAR(pass.probabilities(0, 1), 1 / (e + 1), 1e-15);
}

TEST(Forward, RowsAreDistributionsAndRepsNonNegative) {
  Rng rng = make_rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    NetworkShape shape{3, {5, 4}, 3, 4};
    const auto params = ModelParams::initialize(shape, rng());
    const auto pass = forward(params, testing::random_matrix(rng, 3, 3, 5.0));
    for (Eigen::Index i = 0; i < 3; ++i) EXPECT_NEAR(pass.probabilities.row(i).sum(), 1.0, 1e-9);
    EXPECT_GT(pass.probabilities.minCoeff(), 0.0);
    EXPECT_LT(pass.probabilities.maxCoeff(), 1.0);
    EXPECT_GE(pass.representations().minCoeff(), 0.0);
  }
}

TEST(Forward, SoftmaxStableForLargeLogits) {
  Rng rng = make_rng(8);
  Matrix logits(50, 7);
  for (Eigen::Index i = 0; i < logits.size(); ++i) logits.data()[i] = -50.0 + 100.0 * uniform01(rng);
  const Matrix p = softmax(logits);
  for (Eigen::Index i = 0; i < p.rows(); ++i) EXPECT_NEAR(p.row(i).sum(), 1.0, 1e-9);
}

TEST(Forward, ShapeMismatchThrows) {
  const auto params = ModelParams::initialize({4, {}, 3, 2}, 1);
  EXPECT_THROW(forward(params, Matrix::Zero(2, 5)), ShapeError);
  Batch bad{Matrix::Zero(2, 4), {0}};
  EXPECT_THROW(forward(params, bad), ShapeError);
  Batch out_of_range{Matrix::Zero(1, 4), {2}};
  EXPECT_THROW(forward(params, out_of_range), ShapeError);
}

TEST(CrossEntropy, Examples) {
  Matrix perfect(1, 3);
  perfect << 0, 1, 0;
  EXPECT_DOUBLE_EQ(cross_entropy(perfect, std::vector<int>{1}), 0.0);

  Matrix uniform = Matrix::Constant(2, 10, 0.1);
  EXPECT_NEAR(cross_entropy(uniform, std::vector<int>{3, 7}), std::log(10.0), 1e-12);
  EXPECT_NEAR(cross_entropy(uniform, std::vector<int>{3, 7}), 2.302585, 1e-6);

  Matrix p(1, 3);
  p << 0.5, 0.25, 0.25;
  EXPECT_NEAR(cross_entropy(p, std::vector<int>{1}), std::log(4.0), 1e-15);
  EXPECT_NEAR(cross_entropy(p, std::vector<int>{1}), 1.386294, 1e-6);
}

TEST(CrossEntropy, FloorsZeroProbability) {
  Matrix p(1, 2);
  p << 1, 0;
  EXPECT_NEAR(cross_entropy(p, std::vector<int>{1}), -std::log(1e-12), 1e-9);
}

TEST(Backward, ClassifierClosedFormAtZeroWeights) {
  auto params = identity_features(2, 3);
  Batch batch{Matrix::Ones(1, 2), {1}};
  const auto pass = forward(params, batch);
  const auto grad = backward(params, batch, pass);
  const Matrix w = grad.classifier();
  EXPECT_NEAR(w(1, 0), -2.0 / 3.0, 1e-15);
  EXPECT_NEAR(w(1, 1), -2.0 / 3.0, 1e-15);
  for (int r : {0, 2}) {
    EXPECT_NEAR(w(r, 0), 1.0 / 3.0, 1e-15);
    EXPECT_NEAR(w(r, 1), 1.0 / 3.0, 1e-15);
  }
}

TEST(Backward, ClassifierBlockMatchesPerSampleFormula) {
  Rng rng = make_rng(21);
  const NetworkShape shape{4, {6}, 3, 5};
  const auto params = ModelParams::initialize(shape, 9);
  const auto batch = testing::random_batch(rng, 6, shape);
  const auto pass = forward(params, batch);
  const Matrix w = backward(params, batch, pass).classifier();
  // Batch mean of (p - onehot(y)) R^T.
  Matrix expect = Matrix::Zero(5, 3);
  for (Eigen::Index i = 0; i < 6; ++i) {
    for (Eigen::Index r = 0; r < 5; ++r) {
      const double coeff = pass.probabilities(i, r) - (r == batch.labels[static_cast<std::size_t>(i)] ? 1.0 : 0.0);
      expect.row(r) += coeff * pass.representations().row(i) / 6.0;
    }
  }
  EXPECT_LT((w - expect).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Backward, ZeroRepresentationGradientIsPureCrossEntropy) {
  Rng rng = make_rng(4);
  const NetworkShape shape{3, {4}, 3, 3};
  const auto params = ModelParams::initialize(shape, 2);
  const auto batch = testing::random_batch(rng, 5, shape);
  const auto pass = forward(params, batch);
  EXPECT_EQ(backward(params, batch, pass), backward(params, batch, pass, Matrix::Zero(5, 3)));
}

TEST(GradCheck, CrossEntropyOnlySuite) {
  for (const auto& c : run_gradcheck_suite(20, 101, 0.0)) {
    EXPECT_LT(c.report.max_relative_error, 1e-4) << c.describe();
    EXPECT_GT(c.report.checked, 0u) << c.describe();
  }
}

TEST(GradCheck, WithKdSuite) {
  for (const auto& c : run_gradcheck_suite(20, 202)) {
    EXPECT_LT(c.report.max_relative_error, 1e-4) << c.describe();
  }
}

TEST(GradCheck, DetectsSignFlip) {
  GradCheckOptions options;
  options.inject_sign_flip = 0;
  std::size_t caught = 0;
  const auto cases = run_gradcheck_suite(10, 303, std::nullopt, options);
  for (const auto& c : cases) caught += c.report.max_relative_error > 1e-4 ? 1 : 0;
  EXPECT_EQ(caught, cases.size());
}

TEST(Sgd, Examples) {
  auto p = ModelParams::initialize({2, {}, 2, 2}, 1);
  const auto before = p;
  sgd_step(p, ModelParams(p.shape()), 0.1);
  EXPECT_EQ(p, before);

  ModelParams single({1, {}, 1, 2});
  single.values()[0] = 1.0;
  ModelParams g(single.shape());
  g.values()[0] = 2.0;
  sgd_step(single, g, 0.1);
  EXPECT_DOUBLE_EQ(single.values()[0], 0.8);
}

TEST(Sgd, TwoStepsEqualSummedStep) {
  const NetworkShape shape{2, {}, 2, 2};
  auto a = ModelParams::initialize(shape, 3);
  auto b = a;
  ModelParams g1(shape), g2(shape), sum(shape);
  for (std::size_t i = 0; i < a.size(); ++i) {
    g1.values()[i] = 0.25 * static_cast<double>(i);
    g2.values()[i] = -0.5;
    sum.values()[i] = g1.values()[i] + g2.values()[i];
  }
  sgd_step(a, g1, 0.5);
  sgd_step(a, g2, 0.5);
  sgd_step(b, sum, 0.5);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a.values()[i], b.values()[i], 1e-15);
}

TEST(Penultimate, IsCopyOfClassifier) {
  const NetworkShape shape{3, {4}, 2, 3};
  auto params = ModelParams::initialize(shape, 5);
  Matrix w = penultimate(params);
  EXPECT_EQ(w, Matrix(params.classifier()));
  w.setZero();
  EXPECT_NE(Matrix(params.classifier()), w);

  ModelParams hidden_only(shape);
  hidden_only.weight(0).setOnes();
  hidden_only.bias(1).setOnes();
  const Matrix before = penultimate(params);
  sgd_step(params, hidden_only, 0.1);
  EXPECT_EQ(penultimate(params), before);
}

// One CE step on a single sample with strictly positive representations
// raises every entry of the true-label row and lowers every other row.
TEST(SignProperty, SingleSample) {
  Rng rng = make_rng(77);
  int trials = 0;
  while (trials < 200) {
    NetworkShape shape{4, {6}, 5, 4};
    auto params = ModelParams::initialize(shape, rng());
    for (std::size_t k = 0; k < 2; ++k) params.bias(k).setConstant(0.5);
    Batch batch{testing::random_matrix(rng, 1, 4), {static_cast<int>(uniform_index(rng, 4))}};
    const auto pass = forward(params, batch);
    if (!(pass.representations().minCoeff() > 0.0)) continue;
    ++trials;
    const Matrix before = penultimate(params);
    sgd_step(params, backward(params, batch, pass), 0.05);
    const Matrix after = penultimate(params);
    for (Eigen::Index r = 0; r < 4; ++r) {
      for (Eigen::Index c = 0; c < 5; ++c) {
        if (r == batch.labels[0]) {
          EXPECT_GT(after(r, c), before(r, c));
        } else {
          EXPECT_LT(after(r, c), before(r, c));
        }
      }
    }
  }
}

TEST(SignProperty, RowsOutsideBatchLabelsDecrease) {
  Rng rng = make_rng(78);
  for (int trial = 0; trial < 100; ++trial) {
    const NetworkShape shape{3, {}, 4, 6};
    auto params = ModelParams::initialize(shape, rng());
    params.bias(0).setConstant(5.0);
    Batch batch{testing::random_matrix(rng, 5, 3), {}};
    for (int i = 0; i < 5; ++i) batch.labels.push_back(i % 2 == 0 ? 1 : 4);
    const auto pass = forward(params, batch);
    ASSERT_GT(pass.representations().minCoeff(), 0.0);
    const Matrix before = penultimate(params);
    sgd_step(params, backward(params, batch, pass), 0.05);
    const Matrix after = penultimate(params);
    for (Eigen::Index r : {0, 2, 3, 5}) {
      EXPECT_TRUE((after.row(r).array() < before.row(r).array()).all()) << "row " << r;
    }
  }
}

TEST(Initialize, GlorotBoundsAndZeroBiases) {
  const NetworkShape shape{20, {10}, 6, 4};
  const auto params = ModelParams::initialize(shape, 13);
  const double l0 = std::sqrt(6.0 / 30.0);
  EXPECT_LE(params.weight(0).cwiseAbs().maxCoeff(), l0);
  EXPECT_GT(params.weight(0).cwiseAbs().maxCoeff(), 0.5 * l0);
  EXPECT_LE(params.classifier().cwiseAbs().maxCoeff(), std::sqrt(6.0 / 10.0));
  EXPECT_EQ(params.bias(0).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(params, ModelParams::initialize(shape, 13));
  EXPECT_NE(params, ModelParams::initialize(shape, 14));
}

class ParamFile : public ::testing::Test {
 protected:
  std::filesystem::path path_ = std::filesystem::temp_directory_path() /
                                ("cadis_params_" + std::to_string(::getpid()) + ".bin");
  void TearDown() override { std::filesystem::remove(path_); }
};

TEST_F(ParamFile, RoundTripIsExact) {
  const auto params = ModelParams::initialize({7, {5, 3}, 4, 3}, 99);
  save_params(params, path_);
  EXPECT_EQ(load_params(path_), params);
  EXPECT_EQ(std::filesystem::file_size(path_), 4 + 4 + 4 + 5 * 8 + 8 + params.size() * 8);
}

TEST_F(ParamFile, RejectsCorruption) {
  const auto params = ModelParams::initialize({3, {}, 2, 2}, 1);
  save_params(params, path_);
  std::filesystem::resize_file(path_, std::filesystem::file_size(path_) - 3);
  EXPECT_THROW(load_params(path_), FormatError);
  {
    std::ofstream out(path_, std::ios::binary);
    out << "NOPE and some more bytes";
  }
  EXPECT_THROW(load_params(path_), FormatError);
}

}  // namespace
}  // namespace cadis
