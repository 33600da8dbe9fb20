#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "engage/rng.hpp"

namespace engage::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Activation { kGelu, kLinear };

/// Exact GELU, x * Phi(x).
double gelu(double x);
/// d/dx [x * Phi(x)] = Phi(x) + x * phi(x).
double gelu_derivative(double x);
Vector gelu(const Vector& x);

/// Numerically stable softmax of one logit vector / of every column.
Vector softmax(const Vector& logits);
Matrix softmax_columns(const Matrix& logits);

/// Fully connected layer y = act(W x + b); activations are columns.
struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;    // out
  Activation activation = Activation::kGelu;
  double dropout = 0.0;  // inverted dropout, training only

  std::size_t inputs() const { return static_cast<std::size_t>(weight.cols()); }
  std::size_t outputs() const { return static_cast<std::size_t>(weight.rows()); }
  std::size_t parameter_count() const { return static_cast<std::size_t>(weight.size() + bias.size()); }
};

/// Uniform Glorot weights, zero bias.
DenseLayer make_dense(std::size_t in, std::size_t out, Activation act, double dropout, Rng& rng);

/// Mean cross-entropy of softmax columns against integer class labels.
double cross_entropy(const Matrix& probabilities, std::span<const int> labels);

/// Bias-corrected Adam over a flat list of parameter blocks.
class Adam {
 public:
  struct Options {
    double learning_rate = 0.005;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
  };

  Adam() : Adam(Options{}) {}
  explicit Adam(Options options) : opt_(options) {}

  /// Throws NumericError (before touching any parameter) when a gradient is
  /// not finite.
  void step(const std::vector<std::span<double>>& params, const std::vector<std::span<const double>>& grads);

  std::size_t steps() const { return step_; }
  const Options& options() const { return opt_; }

 private:
  Options opt_;
  std::size_t step_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

struct FrameShape {
  std::size_t frames = 30;
  std::size_t channels = 512;
  std::size_t height = 7;
  std::size_t width = 7;

  std::size_t size() const { return frames * channels * height * width; }
};

/// frames x C x H x W (row-major) -> frames x C, max over each H x W grid.
Matrix spatial_max_pool(std::span<const float> maps, const FrameShape& shape);
/// frames x C -> C, mean over frames.
Vector temporal_avg_pool(const Matrix& per_frame);

}  // namespace engage::nn
