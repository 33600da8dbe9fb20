#include "engage/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "engage/error.hpp"

namespace engage::nn {

namespace {
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;
}  // namespace

double gelu(double x) { return 0.5 * x * std::erfc(-x * kInvSqrt2); }

double gelu_derivative(double x) {
  const double cdf = 0.5 * std::erfc(-x * kInvSqrt2);
  const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
  return cdf + x * pdf;
}

Vector gelu(const Vector& x) { return x.unaryExpr([](double v) { return gelu(v); }); }

Vector softmax(const Vector& logits) {
  const double m = logits.maxCoeff();
  Vector e = (logits.array() - m).exp();
  return e / e.sum();
}

Matrix softmax_columns(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index j = 0; j < logits.cols(); ++j) out.col(j) = softmax(logits.col(j));
  return out;
}

DenseLayer make_dense(std::size_t in, std::size_t out, Activation act, double dropout, Rng& rng) {
  DenseLayer layer;
  layer.activation = act;
  layer.dropout = dropout;
  layer.weight.resize(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in));
  layer.bias = Vector::Zero(static_cast<Eigen::Index>(out));
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
    for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) layer.weight(r, c) = rng.uniform(-limit, limit);
  }
  return layer;
}

double cross_entropy(const Matrix& probabilities, std::span<const int> labels) {
  if (static_cast<std::size_t>(probabilities.cols()) != labels.size()) {
    throw DataError("cross_entropy: label count does not match batch");
  }
  double sum = 0.0;
  for (std::size_t j = 0; j < labels.size(); ++j) {
    const double p = probabilities(labels[j], static_cast<Eigen::Index>(j));
    sum -= std::log(std::max(p, std::numeric_limits<double>::min()));
  }
  return sum / static_cast<double>(labels.size());
}

void Adam::step(const std::vector<std::span<double>>& params, const std::vector<std::span<const double>>& grads) {
  if (params.size() != grads.size()) throw DataError("adam: parameter/gradient block count mismatch");
  for (std::size_t b = 0; b < params.size(); ++b) {
    if (params[b].size() != grads[b].size()) throw DataError("adam: block " + std::to_string(b) + " shape mismatch");
    for (double g : grads[b]) {
      if (!std::isfinite(g)) throw NumericError("adam: non-finite gradient in parameter block " + std::to_string(b));
    }
  }
  if (m_.empty()) {
    m_.resize(params.size());
    v_.resize(params.size());
    for (std::size_t b = 0; b < params.size(); ++b) {
      m_[b].assign(params[b].size(), 0.0);
      v_[b].assign(params[b].size(), 0.0);
    }
  } else if (m_.size() != params.size()) {
    throw DataError("adam: parameter layout changed between steps");
  }

  ++step_;
  const double t = static_cast<double>(step_);
  const double c1 = 1.0 - std::pow(opt_.beta1, t);
  const double c2 = 1.0 - std::pow(opt_.beta2, t);
  for (std::size_t b = 0; b < params.size(); ++b) {
    auto& m = m_[b];
    auto& v = v_[b];
    const auto p = params[b];
    const auto g = grads[b];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = opt_.beta1 * m[i] + (1.0 - opt_.beta1) * g[i];
      v[i] = opt_.beta2 * v[i] + (1.0 - opt_.beta2) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      p[i] -= opt_.learning_rate * m_hat / (std::sqrt(v_hat) + opt_.epsilon);
    }
  }
}

Matrix spatial_max_pool(std::span<const float> maps, const FrameShape& shape) {
  if (maps.size() != shape.size()) {
    throw DataError("spatial_max_pool: expected " + std::to_string(shape.size()) + " values, got " +
                    std::to_string(maps.size()));
  }
  const std::size_t cells = shape.height * shape.width;
  Matrix out(static_cast<Eigen::Index>(shape.frames), static_cast<Eigen::Index>(shape.channels));
  for (std::size_t f = 0; f < shape.frames; ++f) {
    for (std::size_t c = 0; c < shape.channels; ++c) {
      const auto grid = maps.subspan((f * shape.channels + c) * cells, cells);
      out(static_cast<Eigen::Index>(f), static_cast<Eigen::Index>(c)) = *std::max_element(grid.begin(), grid.end());
    }
  }
  return out;
}

Vector temporal_avg_pool(const Matrix& per_frame) {
  if (per_frame.rows() == 0) throw DataError("temporal_avg_pool: no frames");
  return per_frame.colwise().mean().transpose();
}

}  // namespace engage::nn
