#include "engage/timecond.hpp"

#include <cmath>
#include <string>

#include "engage/error.hpp"

namespace engage::timecond {

std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::kNone: return "none";
    case Strategy::kSll: return "sll";
    case Strategy::kSsll: return "ssll";
    case Strategy::kSsal: return "ssal";
  }
  return "?";
}

std::string_view report_label(Strategy s) {
  switch (s) {
    case Strategy::kNone: return "M_U";
    case Strategy::kSll: return "M_SLL";
    case Strategy::kSsll: return "M_SSLL";
    case Strategy::kSsal: return "M_SSAL";
  }
  return "?";
}

Strategy parse_strategy(std::string_view s) {
  if (s == "none" || s == "u" || s == "U" || s == "M_U") return Strategy::kNone;
  if (s == "sll" || s == "SLL" || s == "M_SLL") return Strategy::kSll;
  if (s == "ssll" || s == "SSLL" || s == "M_SSLL") return Strategy::kSsll;
  if (s == "ssal" || s == "SSAL" || s == "M_SSAL") return Strategy::kSsal;
  throw UsageError("unknown conditioning strategy '" + std::string(s) + "' (expected none|sll|ssll|ssal)");
}

Vector sinusoidal_embedding(int t_level, int dim, double base) {
  if (dim <= 0 || dim % 2 != 0) throw UsageError("embedding dimension must be a positive even integer");
  Vector e(dim);
  const int half = dim / 2;
  for (int d = 1; d <= half; ++d) {
    const double freq = std::pow(base, -2.0 * d / dim);
    const double angle = static_cast<double>(t_level) * freq;
    e(2 * (d - 1)) = std::cos(angle);
    e(2 * (d - 1) + 1) = std::sin(angle);
  }
  return e;
}

EmbeddingTable::EmbeddingTable(EmbeddingSpec spec) : spec_(spec), table_(spec.dim, kLevelCount) {
  for (int l = 1; l <= kLevelCount; ++l) table_.col(l - 1) = sinusoidal_embedding(l, spec.dim, spec.base);
}

Vector EmbeddingTable::at(int t_level) const {
  if (t_level < 1 || t_level > kLevelCount) throw DataError("time level must be 1, 2 or 3");
  return table_.col(t_level - 1);
}

Projection Projection::zeros(ProjectionKind kind, int width, int embedding_dim) {
  Projection p;
  p.kind = kind;
  const int rows = kind == ProjectionKind::kShift ? width : 2 * width;
  p.weight = Matrix::Zero(rows, embedding_dim);
  p.bias = Vector::Zero(rows);
  return p;
}

Vector project(const Projection& proj, const Vector& embedding) {
  if (embedding.size() != proj.weight.cols()) throw DataError("projection: embedding size mismatch");
  return proj.weight * embedding + proj.bias;
}

Vector condition_sll(const Vector& activation, const Projection& proj, const Vector& embedding) {
  if (proj.kind != ProjectionKind::kShift || activation.size() != proj.weight.rows()) {
    throw DataError("condition_sll: projection does not match activation");
  }
  return activation + project(proj, embedding);
}

Vector condition_ssll(const Vector& activation, const Projection& proj, const Vector& embedding) {
  const auto n = activation.size();
  if (proj.kind != ProjectionKind::kScaleShift || proj.weight.rows() != 2 * n) {
    throw DataError("condition_ssll: projection does not match activation");
  }
  const Vector ls = project(proj, embedding);
  return ((ls.head(n).array() + 1.0) * activation.array() + ls.tail(n).array()).matrix();
}

Vector condition(const Vector& activation, const Projection& proj, const Vector& embedding) {
  return proj.kind == ProjectionKind::kShift ? condition_sll(activation, proj, embedding)
                                             : condition_ssll(activation, proj, embedding);
}

namespace {

void check_batch(const Projection& proj, const Matrix& x, std::span<const int> levels, const EmbeddingTable& table) {
  if (proj.weight.cols() != table.dim()) throw DataError("conditioning: embedding size mismatch");
  if (proj.width() != x.rows()) {
    throw DataError("conditioning: projection width " + std::to_string(proj.width()) + " does not match activation " +
                    std::to_string(x.rows()));
  }
  if (static_cast<std::size_t>(x.cols()) != levels.size()) throw DataError("conditioning: level count mismatch");
  for (int l : levels) {
    if (l < 1 || l > kLevelCount) throw DataError("conditioning: time level must be 1, 2 or 3");
  }
}

}  // namespace

Matrix condition_batch(const Projection& proj, const Matrix& x, std::span<const int> levels,
                       const EmbeddingTable& table, Matrix* projected) {
  check_batch(proj, x, levels, table);
  // Only three distinct embeddings exist, so project each once.
  Matrix per_level = proj.weight * table.columns();
  per_level.colwise() += proj.bias;

  const auto n = x.rows();
  Matrix out(x.rows(), x.cols());
  Matrix proj_cols(proj.weight.rows(), x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const auto col = per_level.col(levels[static_cast<std::size_t>(j)] - 1);
    proj_cols.col(j) = col;
    if (proj.kind == ProjectionKind::kShift) {
      out.col(j) = x.col(j) + col;
    } else {
      out.col(j) = ((col.head(n).array() + 1.0) * x.col(j).array() + col.tail(n).array()).matrix();
    }
  }
  if (projected) *projected = std::move(proj_cols);
  return out;
}

Matrix condition_batch_backward(const Projection& proj, const Matrix& x, const Matrix& projected,
                                const Matrix& grad_out, std::span<const int> levels, const EmbeddingTable& table,
                                Projection& grad) {
  check_batch(proj, x, levels, table);
  const auto n = x.rows();
  const auto rows = proj.weight.rows();
  Matrix grad_x(x.rows(), x.cols());
  Matrix per_level = Matrix::Zero(rows, kLevelCount);
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const int lvl = levels[static_cast<std::size_t>(j)] - 1;
    if (proj.kind == ProjectionKind::kShift) {
      grad_x.col(j) = grad_out.col(j);
      per_level.col(lvl) += grad_out.col(j);
    } else {
      grad_x.col(j) = ((projected.col(j).head(n).array() + 1.0) * grad_out.col(j).array()).matrix();
      per_level.col(lvl).head(n) += (grad_out.col(j).array() * x.col(j).array()).matrix();
      per_level.col(lvl).tail(n) += grad_out.col(j);
    }
  }
  grad.weight.noalias() += per_level * table.columns().transpose();
  grad.bias += per_level.rowwise().sum();
  return grad_x;
}

}  // namespace engage::timecond
