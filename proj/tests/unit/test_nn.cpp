#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "engage/error.hpp"
#include "engage/models.hpp"
#include "engage/nn.hpp"
#include "gradient_oracle.hpp"

using namespace engage;
using namespace engage::nn;

namespace {

// Phi(x) = 1/2 + phi(x) * sum_n x^(2n+1) / (1*3*...*(2n+1)), in long double.
long double phi_series(long double x) {
  long double term = x, sum = x;
  for (int n = 1; n < 200; ++n) {
    term *= x * x / (2.0L * n + 1.0L);
    sum += term;
  }
  const long double pdf = std::exp(-0.5L * x * x) / std::sqrt(2.0L * 3.14159265358979323846264338327950288L);
  return 0.5L + pdf * sum;
}

}  // namespace

TEST(Gelu, Examples) {
  EXPECT_EQ(gelu(0.0), 0.0);
  EXPECT_NEAR(gelu(10.0), 10.0, 1e-6);
  const double oracle = static_cast<double>(phi_series(1.0L));
  EXPECT_NEAR(oracle, 0.8413447460685429, 1e-15);
  EXPECT_NEAR(gelu(1.0), oracle, 1e-15);
}

TEST(Gelu, MatchesSeriesOracleOnGrid) {
  for (double x = -6.0; x <= 6.0; x += 0.37) {
    const double expected = static_cast<double>(static_cast<long double>(x) * phi_series(x));
    EXPECT_NEAR(gelu(x), expected, 1e-14 * std::max(1.0, std::abs(x))) << x;
  }
}

TEST(Gelu, DerivativeMatchesDifferences) {
  for (double x = -5.0; x <= 5.0; x += 0.25) {
    const double h = 1e-5;
    const double numeric = (gelu(x + h) - gelu(x - h)) / (2 * h);
    EXPECT_NEAR(gelu_derivative(x), numeric, 1e-9) << x;
  }
}

TEST(Softmax, Examples) {
  Vector z(2);
  z << std::log(2.0), 0.0;
  const auto p = softmax(z);
  EXPECT_NEAR(p[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(p[1], 1.0 / 3.0, 1e-15);

  Vector big(3);
  big << 1000.0, 1000.0, -1000.0;
  const auto q = softmax(big);
  EXPECT_NEAR(q[0], 0.5, 1e-15);
  EXPECT_EQ(q[2], 0.0);
}

TEST(Softmax, ColumnsSumToOne) {
  Rng rng(4);
  Matrix z(2, 200);
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = 30.0 * rng.normal();
  const auto p = softmax_columns(z);
  for (Eigen::Index j = 0; j < p.cols(); ++j) {
    EXPECT_NEAR(p.col(j).sum(), 1.0, 1e-6);
    EXPECT_GE(p.col(j).minCoeff(), 0.0);
  }
}

TEST(CrossEntropy, KnownValues) {
  Matrix p(2, 2);
  p << 0.25, 0.5, 0.75, 0.5;
  const std::vector<int> labels{1, 0};
  EXPECT_NEAR(cross_entropy(p, labels), -(std::log(0.75) + std::log(0.5)) / 2, 1e-15);
  EXPECT_THROW(cross_entropy(p, std::vector<int>{1}), DataError);
}

TEST(MakeDense, GlorotRangeAndDeterminism) {
  Rng a(1), b(1);
  const auto l1 = make_dense(512, 128, Activation::kGelu, 0.1, a);
  const auto l2 = make_dense(512, 128, Activation::kGelu, 0.1, b);
  EXPECT_TRUE(l1.weight == l2.weight);
  const double limit = std::sqrt(6.0 / 640.0);
  EXPECT_LE(l1.weight.cwiseAbs().maxCoeff(), limit);
  EXPECT_GT(l1.weight.cwiseAbs().maxCoeff(), 0.9 * limit);
  EXPECT_TRUE(l1.bias.isZero());
  EXPECT_EQ(l1.parameter_count(), 512u * 128 + 128);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  std::vector<double> p{1.0, -2.0, 3.0};
  const std::vector<double> g(3, 0.0);
  Adam adam;
  for (int i = 0; i < 5; ++i) adam.step({p}, {g});
  EXPECT_EQ(p, (std::vector<double>{1.0, -2.0, 3.0}));
  EXPECT_EQ(adam.steps(), 5u);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  std::vector<double> p{0.0, 0.0, 0.0};
  const std::vector<double> g{0.3, -7.0, 1e-3};
  Adam adam;
  adam.step({p}, {g});
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_NEAR(p[i], -0.005 * (g[i] > 0 ? 1 : -1), 0.005 * 1e-8 / std::abs(g[i]) + 1e-15);
  }
}

TEST(Adam, MatchesScalarRecurrence) {
  const double g = 0.42, lr = 0.005;
  std::vector<double> p{1.0};
  Adam adam;
  long double m = 0, v = 0, x = 1.0L, prev_delta = 1e9;
  for (int t = 1; t <= 20; ++t) {
    m = 0.9L * m + 0.1L * g;
    v = 0.999L * v + 0.001L * g * g;
    const long double mh = m / (1.0L - std::pow(0.9L, t)), vh = v / (1.0L - std::pow(0.999L, t));
    const long double delta = lr * mh / (std::sqrt(vh) + 1e-8L);
    x -= delta;
    const double before = p[0];
    adam.step({p}, {std::vector<double>{g}});
    EXPECT_NEAR(p[0], static_cast<double>(x), 1e-14);
    const double step = std::abs(p[0] - before);
    if (t == 2) EXPECT_LE(step, static_cast<double>(prev_delta) * (1 + 1e-6));
    prev_delta = std::abs(static_cast<double>(delta));
  }
}

TEST(Adam, NonFiniteGradientAbortsBeforeUpdating) {
  std::vector<double> a{1.0, 2.0}, b{3.0};
  const std::vector<double> ga{0.1, 0.1}, gb{std::nan("")};
  Adam adam;
  EXPECT_THROW(adam.step({a, b}, {ga, gb}), NumericError);
  EXPECT_EQ(a, (std::vector<double>{1.0, 2.0}));
  EXPECT_EQ(adam.steps(), 0u);
  const std::vector<double> inf{std::numeric_limits<double>::infinity()};
  EXPECT_THROW(adam.step({b}, {inf}), NumericError);
}

TEST(Adam, ShapeMismatch) {
  std::vector<double> a{1.0, 2.0};
  const std::vector<double> g{0.1};
  Adam adam;
  EXPECT_THROW(adam.step({a}, {g}), DataError);
}

TEST(Pooling, ConstantTensor) {
  const FrameShape shape{30, 4, 7, 7};
  const std::vector<float> maps(shape.size(), 2.5f);
  const auto v = temporal_avg_pool(spatial_max_pool(maps, shape));
  ASSERT_EQ(v.size(), 4);
  for (int c = 0; c < 4; ++c) EXPECT_EQ(v[c], 2.5);
}

TEST(Pooling, SingleNineInGrid) {
  const FrameShape shape{2, 3, 7, 7};
  std::vector<float> maps(shape.size(), 0.0f);
  maps[(1 * 3 + 2) * 49 + 17] = 9.0f;
  const auto pooled = spatial_max_pool(maps, shape);
  EXPECT_EQ(pooled(1, 2), 9.0);
  EXPECT_EQ(pooled(0, 2), 0.0);
  EXPECT_EQ(pooled(1, 1), 0.0);
}

TEST(Pooling, AlternatingFramesAverageHalf) {
  Matrix per_frame(30, 2);
  for (int f = 0; f < 30; ++f) per_frame.row(f) << f % 2, 1.0;
  const auto v = temporal_avg_pool(per_frame);
  EXPECT_DOUBLE_EQ(v[0], 0.5);
  EXPECT_DOUBLE_EQ(v[1], 1.0);
}

TEST(Pooling, PermutationInvariance) {
  Rng rng(12);
  const FrameShape shape{30, 5, 7, 7};
  std::vector<float> maps(shape.size());
  for (auto& x : maps) x = static_cast<float>(rng.normal());
  const auto base_spatial = spatial_max_pool(maps, shape);
  const auto base = temporal_avg_pool(base_spatial);

  std::vector<std::size_t> cells(49);
  std::iota(cells.begin(), cells.end(), 0);
  for (int trial = 0; trial < 10; ++trial) {
    std::shuffle(cells.begin(), cells.end(), rng.engine());
    auto permuted = maps;
    for (std::size_t fc = 0; fc < 30 * 5; ++fc) {
      for (std::size_t k = 0; k < 49; ++k) permuted[fc * 49 + k] = maps[fc * 49 + cells[k]];
    }
    EXPECT_TRUE(spatial_max_pool(permuted, shape) == base_spatial);

    std::vector<Eigen::Index> frames(30);
    std::iota(frames.begin(), frames.end(), 0);
    std::shuffle(frames.begin(), frames.end(), rng.engine());
    Matrix shuffled(30, 5);
    for (Eigen::Index f = 0; f < 30; ++f) shuffled.row(f) = base_spatial.row(frames[static_cast<std::size_t>(f)]);
    EXPECT_LT((temporal_avg_pool(shuffled) - base).cwiseAbs().maxCoeff(), 1e-15);
  }
}

TEST(Pooling, ShapeMismatch) {
  const std::vector<float> maps(10, 0.0f);
  EXPECT_THROW(spatial_max_pool(maps, FrameShape{}), DataError);
}

// ------------------------------------------------------- forward / backward

namespace {

models::Network two_input_identity() {
  models::Network net;
  net.modality = models::Modality::kGamepad;
  models::Stack branch;
  DenseLayer pick;
  pick.activation = Activation::kLinear;
  pick.weight = Matrix::Zero(2, models::kGamepadInputs);
  pick.weight(0, 0) = pick.weight(1, 1) = 1.0;
  pick.bias = Vector::Zero(2);
  branch.layers = {pick};
  branch.conditioning.resize(2);
  net.gamepad = branch;
  DenseLayer identity;
  identity.activation = Activation::kLinear;
  identity.weight = Matrix::Identity(2, 2);
  identity.bias = Vector::Zero(2);
  net.head.layers = {identity};
  net.head.conditioning.resize(2);
  return net;
}

}  // namespace

TEST(Forward, ZeroWeightsGiveHalf) {
  for (auto m : {models::Modality::kGamepad, models::Modality::kFrames, models::Modality::kFusion}) {
    auto net = models::build_model({m});
    for (auto block : net.parameters()) std::fill(block.begin(), block.end(), 0.0);
    const auto batch = engage::testing::random_batch(6, 3);
    const auto p = models::predict(net, batch);
    for (Eigen::Index i = 0; i < p.size(); ++i) EXPECT_EQ(p.data()[i], 0.5);
  }
}

TEST(Forward, LinearIdentityGivesClosedFormSoftmax) {
  const auto net = two_input_identity();
  models::Batch batch;
  batch.gamepad = Matrix::Zero(models::kGamepadInputs, 1);
  batch.gamepad(0, 0) = std::log(2.0);
  batch.levels = {1};
  const auto p = models::predict(net, batch);
  EXPECT_NEAR(p(0, 0), 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(p(1, 0), 1.0 / 3.0, 1e-15);
}

TEST(Forward, TrainModeDropoutReproducible) {
  const auto net = models::build_model({models::Modality::kFrames, timecond::Strategy::kNone, 5});
  const auto batch = engage::testing::random_batch(16, 2);
  Rng r1(77), r2(77), r3(78);
  const auto a = models::forward(net, batch, models::Mode::kTrain, &r1);
  const auto b = models::forward(net, batch, models::Mode::kTrain, &r2);
  const auto c = models::forward(net, batch, models::Mode::kTrain, &r3);
  EXPECT_TRUE(a.probabilities == b.probabilities);
  EXPECT_FALSE(a.probabilities == c.probabilities);
  const auto e1 = models::predict(net, batch), e2 = models::predict(net, batch);
  EXPECT_TRUE(e1 == e2);
  EXPECT_FALSE(e1 == a.probabilities);
  EXPECT_THROW(models::forward(net, batch, models::Mode::kTrain, nullptr), DataError);
}

TEST(Forward, InvertedDropoutMaskValues) {
  const auto net = models::build_model({models::Modality::kFrames, timecond::Strategy::kNone, 5, 0.1});
  const auto batch = engage::testing::random_batch(64, 2);
  Rng rng(1);
  const auto cache = models::forward(net, batch, models::Mode::kTrain, &rng);
  const auto& mask = cache.frames->layers[0].mask;
  ASSERT_EQ(mask.rows(), 128);
  std::size_t dropped = 0;
  for (Eigen::Index i = 0; i < mask.size(); ++i) {
    const double m = mask.data()[i];
    EXPECT_TRUE(m == 0.0 || m == 1.0 / 0.9);
    dropped += m == 0.0;
  }
  const double rate = static_cast<double>(dropped) / static_cast<double>(mask.size());
  EXPECT_NEAR(rate, 0.1, 0.02);
  const auto eval = models::forward(net, batch, models::Mode::kEval);
  EXPECT_EQ(eval.frames->layers[0].mask.size(), 0);
}

TEST(Backward, DuplicatedSampleDoublesContribution) {
  auto net = models::build_model({models::Modality::kGamepad, timecond::Strategy::kSsll, 9});
  engage::testing::randomize_projections(net, 4);
  const auto pair = engage::testing::random_batch(2, 6);
  const std::vector<int> labels{1, 0};

  auto sub = [&](std::vector<Eigen::Index> cols) {
    models::Batch b;
    b.gamepad.resize(models::kGamepadInputs, static_cast<Eigen::Index>(cols.size()));
    std::vector<int> y;
    for (std::size_t j = 0; j < cols.size(); ++j) {
      b.gamepad.col(static_cast<Eigen::Index>(j)) = pair.gamepad.col(cols[j]);
      b.levels.push_back(pair.levels[static_cast<std::size_t>(cols[j])]);
      y.push_back(labels[static_cast<std::size_t>(cols[j])]);
    }
    const auto cache = models::forward(net, b, models::Mode::kEval);
    return models::backward(net, cache, y).grads;
  };
  const auto g_x = sub({0}), g_xy = sub({0, 1}), g_xxy = sub({0, 0, 1});
  const auto px = g_x.parameters(), pxy = g_xy.parameters(), pxxy = g_xxy.parameters();
  for (std::size_t b = 0; b < px.size(); ++b) {
    for (std::size_t i = 0; i < px[b].size(); ++i) {
      // Sum gradients: 3 * mean([x, x, y]) - 2 * mean([x, y]) is the x contribution.
      const double contribution = 3 * pxxy[b][i] - 2 * pxy[b][i];
      EXPECT_NEAR(contribution, px[b][i], 1e-12 * std::max(1.0, std::abs(px[b][i])));
    }
  }
}

TEST(Backward, ConfidentCorrectPredictionHasZeroHeadGradient) {
  auto net = models::build_model({models::Modality::kGamepad, timecond::Strategy::kNone, 2});
  net.head.layers[0].bias << -1000.0, 1000.0;
  models::touch(net);
  const auto batch = engage::testing::random_batch(4, 1);
  const std::vector<int> labels(4, 1);
  const auto cache = models::forward(net, batch, models::Mode::kEval);
  const auto g = models::backward(net, cache, labels);
  // True value is exp(-2000); the vectorized exp bottoms out in the subnormal range.
  EXPECT_LT(g.grads.head.layers[0].weight.cwiseAbs().maxCoeff(), 1e-300);
  EXPECT_LT(g.grads.head.layers[0].bias.cwiseAbs().maxCoeff(), 1e-300);
  EXPECT_EQ(g.loss, 0.0);
}

TEST(Backward, StaleCacheRejected) {
  auto net = models::build_model({models::Modality::kGamepad});
  const auto batch = engage::testing::random_batch(3, 1);
  const auto cache = models::forward(net, batch, models::Mode::kEval);
  const std::vector<int> labels{0, 1, 0};
  EXPECT_NO_THROW(models::backward(net, cache, labels));
  models::touch(net);
  EXPECT_THROW(models::backward(net, cache, labels), DataError);
  const auto other = models::build_model({models::Modality::kGamepad});
  EXPECT_THROW(models::backward(other, models::forward(net, batch, models::Mode::kEval), labels), DataError);
}

TEST(Backward, FiniteDifferencesOnFiveSamples) {
  for (auto m : {models::Modality::kGamepad, models::Modality::kFusion}) {
    auto net = models::build_model({m, timecond::Strategy::kNone, 21});
    std::vector<int> labels;
    const auto batch = engage::testing::random_batch(5, 8, &labels);
    Rng rng(3);
    const auto cache = models::forward(net, batch, models::Mode::kTrain, &rng);
    const auto g = models::backward(net, cache, labels);
    EXPECT_NEAR(engage::testing::reference_loss(net, cache, batch, labels), g.loss, 1e-12);
    const auto rep = engage::testing::finite_difference_check(net, cache, batch, labels, g.grads);
    EXPECT_EQ(rep.failures, 0u) << models::to_string(m) << " worst " << rep.max_relative_error;
  }
}
