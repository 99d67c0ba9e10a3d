/* Copyright 2026 The coughpoc Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include <gtest/gtest.h>

#include <random>

#include "coughpoc/nn.hpp"

using namespace coughpoc;

namespace {

struct Toy {
  Matrix rows;
  std::vector<int> labels;
};

// Three Gaussian blobs in `dim` dimensions.
Toy blobs(std::size_t per_class, std::size_t dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 0.5);
  Toy t;
  for (int c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < per_class; ++i) {
      std::vector<double> row(dim);
      for (std::size_t d = 0; d < dim; ++d) row[d] = g(rng) + (d % 3 == static_cast<std::size_t>(c) ? 2.0 : 0.0);
      t.rows.append_row(row);
      t.labels.push_back(c);
    }
  }
  return t;
}

std::vector<Matrix> random_images(std::size_t n, std::size_t h, std::size_t w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<Matrix> out;
  for (std::size_t i = 0; i < n; ++i) {
    Matrix m(h, w);
    for (auto& v : m.data()) v = g(rng);
    out.push_back(std::move(m));
  }
  return out;
}

}  // namespace

TEST(Mlp, RequiresTwoHiddenLayers) {
  EXPECT_THROW(MlpModel::create({4, 3}, 1), std::invalid_argument);
  EXPECT_THROW(MlpModel::create({4, 5, 3}, 1), std::invalid_argument);
  EXPECT_THROW(MlpModel::create({4, 0, 5, 3}, 1), std::invalid_argument);
  EXPECT_NO_THROW(MlpModel::create({4, 5, 5, 3}, 1));
}

TEST(Mlp, MembershipsFormAProbabilityVector) {
  const auto m = MlpModel::create({5, 7, 6, 3}, 2);
  const auto t = blobs(4, 5, 3);
  for (std::size_t r = 0; r < t.rows.rows(); ++r) {
    const auto p = predict_memberships(m, t.rows.row(r));
    ASSERT_EQ(p.size(), 3u);
    double s = 0;
    for (double v : p) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Mlp, SoftmaxIsStableForHugeLogits) {
  const std::vector<double> z{1000.0, 999.0, -1000.0};
  const auto p = detail::softmax(z);
  EXPECT_TRUE(std::isfinite(p[0]));
  EXPECT_NEAR(p[0] + p[1] + p[2], 1.0, 1e-12);
  EXPECT_NEAR(p[0] / p[1], std::exp(1.0), 1e-9);
}

TEST(Mlp, RejectsWrongInputWidth) {
  const auto m = MlpModel::create({5, 4, 4, 3}, 2);
  const std::vector<double> x(6, 0.0);
  EXPECT_THROW(m.logits(x), ShapeError);
}

TEST(Mlp, AnalyticGradientMatchesFiniteDifferences) {
  const auto t = blobs(4, 6, 11);
  const auto m = MlpModel::create({6, 8, 5, 3}, 4);
  EXPECT_LT(gradient_check(m, t.rows, t.labels, 0.0, 500), 1e-4);
  EXPECT_LT(gradient_check(m, t.rows, t.labels, 1e-2, 500), 1e-4);
}

TEST(Mlp, LossForAllEqualLogitsIsLogK) {
  auto m = MlpModel::create({3, 4, 4, 3}, 1);
  for (auto& blk : m.params) std::fill(blk.begin(), blk.end(), 0.0);
  const auto t = blobs(2, 3, 1);
  std::vector<std::size_t> idx(t.labels.size());
  std::iota(idx.begin(), idx.end(), 0);
  EXPECT_NEAR(m.loss_and_gradient(t.rows, idx, t.labels, 0.0, nullptr), std::log(3.0), 1e-12);
}

TEST(Training, LossCurveIsNonIncreasingAndLearns) {
  const auto t = blobs(20, 6, 5);
  TrainConfig cfg;
  cfg.epochs = 60;
  cfg.learning_rate = 0.5;
  cfg.seed = 3;
  const auto res = train_mlp(t.rows, t.labels, cfg, {8, 6});
  ASSERT_EQ(res.loss_curve.size(), 61u);
  for (std::size_t e = 1; e < res.loss_curve.size(); ++e) EXPECT_LE(res.loss_curve[e], res.loss_curve[e - 1]);
  EXPECT_LT(res.loss_curve.back(), 0.5 * res.loss_curve.front());
  const auto m = evaluate(res.model, t.rows, t.labels, {"a", "b", "c"});
  EXPECT_GE(m.accuracy, 0.95);
}

TEST(Training, HugeLearningRateIsRolledBack) {
  const auto t = blobs(10, 4, 6);
  TrainConfig cfg;
  cfg.epochs = 20;
  cfg.learning_rate = 1e6;
  const auto res = train_mlp(t.rows, t.labels, cfg, {4, 4});
  EXPECT_GT(res.rejected_epochs, 0);
  EXPECT_LT(res.final_learning_rate, cfg.learning_rate);
  for (std::size_t e = 1; e < res.loss_curve.size(); ++e) EXPECT_LE(res.loss_curve[e], res.loss_curve[e - 1]);
}

TEST(Training, ZeroLearningRateLeavesModelUnchanged) {
  const auto t = blobs(5, 4, 6);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.learning_rate = 0.0;
  cfg.seed = 9;
  const auto res = train_mlp(t.rows, t.labels, cfg, {4, 4});
  EXPECT_EQ(res.model, MlpModel::create({4, 4, 4, 3}, 9));
}

TEST(Training, NonFiniteInputRaisesDivergence) {
  auto t = blobs(5, 4, 6);
  t.rows(0, 0) = std::numeric_limits<double>::quiet_NaN();
  TrainConfig cfg;
  cfg.epochs = 3;
  EXPECT_THROW(train_mlp(t.rows, t.labels, cfg, {4, 4}), DivergenceError);
}

TEST(Training, IsDeterministicForASeed) {
  const auto t = blobs(8, 5, 2);
  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.seed = 21;
  const auto a = train_mlp(t.rows, t.labels, cfg, {6, 4});
  const auto b = train_mlp(t.rows, t.labels, cfg, {6, 4});
  EXPECT_EQ(a.model, b.model);
  EXPECT_EQ(a.loss_curve, b.loss_curve);
}

TEST(Training, RejectsBadInput) {
  const auto t = blobs(5, 4, 6);
  TrainConfig cfg;
  cfg.epochs = 0;
  EXPECT_THROW(train_mlp(t.rows, t.labels, cfg), std::invalid_argument);
  cfg = {};
  cfg.learning_rate = -1.0;
  EXPECT_THROW(train_mlp(t.rows, t.labels, cfg), std::invalid_argument);
  cfg = {};
  std::vector<int> one_class(t.labels.size(), 0);
  EXPECT_THROW(train_mlp(t.rows, one_class, cfg, {4, 4}, 3), std::invalid_argument);
  std::vector<int> short_labels(t.labels.begin(), t.labels.end() - 1);
  EXPECT_THROW(train_mlp(t.rows, short_labels, cfg), std::invalid_argument);
}

TEST(Cnn, ArchValidation) {
  CnnArch a;
  a.channels = {};
  EXPECT_THROW(a.validate(), std::invalid_argument);
  a = {};
  a.kernel = 4;
  EXPECT_THROW(a.validate(), std::invalid_argument);
  a = {};
  a.input_frames = 3;
  a.channels = {2, 2};
  EXPECT_THROW(a.validate(), std::invalid_argument);
  a = {};
  EXPECT_EQ(a.flat_size(), 16u * 16u * 6u);
}

TEST(Cnn, AnalyticGradientMatchesFiniteDifferences) {
  CnnArch a;
  a.input_frames = 12;
  a.input_bands = 10;
  a.channels = {2, 3};
  const auto m = CnnModel::create(a, 5);
  const auto x = random_images(6, 12, 10, 8);
  const std::vector<int> y{0, 1, 2, 0, 1, 2};
  EXPECT_LT(gradient_check(m, x, y, 0.0, 300), 1e-3);
  EXPECT_LT(gradient_check(m, x, y, 1e-3, 300), 1e-3);
}

TEST(Cnn, MembershipsAndShapeChecks) {
  CnnArch a;
  a.input_frames = 8;
  a.input_bands = 8;
  a.channels = {2};
  const auto m = CnnModel::create(a, 1);
  const auto x = random_images(3, 8, 8, 2);
  for (const auto& img : x) {
    const auto p = predict_memberships(m, img);
    EXPECT_NEAR(p[0] + p[1] + p[2], 1.0, 1e-12);
  }
  EXPECT_THROW(m.logits(Matrix(8, 9)), ShapeError);
}

TEST(Cnn, TrainingFitsSeparableImages) {
  // Class is encoded by which horizontal band of the image is bright.
  std::vector<Matrix> x;
  std::vector<int> y;
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g(0.0, 0.3);
  for (int i = 0; i < 30; ++i) {
    const int c = i % 3;
    Matrix m(12, 8);
    for (std::size_t r = 0; r < 12; ++r) {
      for (std::size_t k = 0; k < 8; ++k) m(r, k) = g(rng) + (r / 4 == static_cast<std::size_t>(c) ? 1.5 : 0.0);
    }
    x.push_back(std::move(m));
    y.push_back(c);
  }
  TrainConfig cfg;
  cfg.epochs = 40;
  cfg.learning_rate = 0.1;
  cfg.batch_size = 8;
  CnnArch a;
  a.channels = {4};
  const auto res = train_cnn(x, y, cfg, a);
  EXPECT_EQ(res.model.arch.input_frames, 12u);
  EXPECT_EQ(res.model.arch.input_bands, 8u);
  for (std::size_t e = 1; e < res.loss_curve.size(); ++e) EXPECT_LE(res.loss_curve[e], res.loss_curve[e - 1]);
  EXPECT_GE(evaluate(res.model, x, y, {"a", "b", "c"}).accuracy, 0.9);
}

TEST(Cnn, InconsistentShapesRejected) {
  std::vector<Matrix> x{Matrix(8, 8), Matrix(8, 9)};
  std::vector<int> y{0, 1};
  EXPECT_THROW(train_cnn(x, y, {}, {}), ShapeError);
}

TEST(Metrics, FromHandConfusionMatrix) {
  // rows: actual covid, flu, healthy; columns: predicted
  const std::vector<std::vector<std::size_t>> conf{{8, 1, 1}, {2, 6, 2}, {0, 1, 9}};
  const auto m = metrics_from_confusion(conf, {"covid_like", "flu_like", "healthy"});
  EXPECT_DOUBLE_EQ(m.accuracy, 23.0 / 30.0);
  EXPECT_DOUBLE_EQ(m.sensitivity[0], 0.8);
  EXPECT_DOUBLE_EQ(m.sensitivity[1], 0.6);
  EXPECT_DOUBLE_EQ(m.sensitivity[2], 0.9);
  // covid: fp = 2 + 0, tn = 30 - 8 - 2 - 2 = 18
  EXPECT_DOUBLE_EQ(m.specificity[0], 18.0 / 20.0);
  // healthy: fp = 1 + 2, tn = 30 - 9 - 1 - 3 = 17
  EXPECT_DOUBLE_EQ(m.specificity[2], 17.0 / 20.0);
  ASSERT_TRUE(m.false_alarm_rate.has_value());
  EXPECT_DOUBLE_EQ(*m.false_alarm_rate, 3.0 / 20.0);
}

TEST(Metrics, EmptyDenominatorsReportZero) {
  const std::vector<std::vector<std::size_t>> conf{{3, 0}, {0, 0}};
  const auto m = metrics_from_confusion(conf, {"x", "y"});
  EXPECT_DOUBLE_EQ(m.sensitivity[1], 0.0);
  EXPECT_DOUBLE_EQ(m.specificity[0], 0.0);
  EXPECT_FALSE(m.false_alarm_rate.has_value());
}

TEST(Metrics, FromPredictions) {
  const std::vector<int> actual{0, 0, 1, 1, 2};
  const std::vector<int> pred{0, 1, 1, 1, 0};
  const auto m = metrics_from_predictions(actual, pred, {"a", "b", "c"});
  EXPECT_EQ(m.confusion[0][1], 1u);
  EXPECT_EQ(m.confusion[2][0], 1u);
  EXPECT_DOUBLE_EQ(m.accuracy, 3.0 / 5.0);
  EXPECT_THROW(metrics_from_predictions(actual, std::vector<int>{0}, {"a", "b", "c"}), std::invalid_argument);
  EXPECT_THROW(metrics_from_confusion({}, {}), std::invalid_argument);
  EXPECT_THROW(metrics_from_confusion({{1, 0}}, {"a", "b"}), std::invalid_argument);
}
