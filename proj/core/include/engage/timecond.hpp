#pragma once

#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace engage::timecond {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline constexpr int kLevelCount = 3;

enum class Strategy { kNone, kSll, kSsll, kSsal };

std::string_view to_string(Strategy s);
/// Accepts none|sll|ssll|ssal (also the report labels U/SLL/SSLL/SSAL).
Strategy parse_strategy(std::string_view s);
/// Label used in reports: M_U, M_SLL, M_SSLL, M_SSAL.
std::string_view report_label(Strategy s);

struct EmbeddingSpec {
  int dim = 512;
  double base = 10000.0;
};

/// Sinusoidal time embedding. For d = 1..D/2, components 2(d-1) and
/// 2(d-1)+1 are cos(t * base^(-2d/D)) and sin(t * base^(-2d/D)).
Vector sinusoidal_embedding(int t_level, int dim = 512, double base = 10000.0);

/// Precomputed e(1), e(2), e(3) as the columns of a D x 3 matrix.
class EmbeddingTable {
 public:
  EmbeddingTable() : EmbeddingTable(EmbeddingSpec{}) {}
  explicit EmbeddingTable(EmbeddingSpec spec);

  const EmbeddingSpec& spec() const { return spec_; }
  int dim() const { return spec_.dim; }
  const Matrix& columns() const { return table_; }
  Vector at(int t_level) const;

 private:
  EmbeddingSpec spec_;
  Matrix table_;
};

enum class ProjectionKind { kShift, kScaleShift };

/// Linear map from the time embedding to per-unit modulation of a width-n
/// activation. SHIFT produces s (n rows); SCALE_SHIFT produces [l; s]
/// (2n rows, scale first).
struct Projection {
  ProjectionKind kind = ProjectionKind::kShift;
  Matrix weight;  // rows x D
  Vector bias;    // rows

  static Projection zeros(ProjectionKind kind, int width, int embedding_dim);

  int width() const { return kind == ProjectionKind::kShift ? static_cast<int>(weight.rows()) : static_cast<int>(weight.rows() / 2); }
  std::size_t parameter_count() const { return static_cast<std::size_t>(weight.size() + bias.size()); }
};

/// P e + b for one embedding vector.
Vector project(const Projection& proj, const Vector& embedding);

/// O + s (shift only).
Vector condition_sll(const Vector& activation, const Projection& proj, const Vector& embedding);
/// (l + 1) * O + s.
Vector condition_ssll(const Vector& activation, const Projection& proj, const Vector& embedding);
/// Dispatches on the projection kind; the per-layer transform used by all strategies.
Vector condition(const Vector& activation, const Projection& proj, const Vector& embedding);

/// Batched forward. Columns of `x` are samples; `levels[j]` selects the
/// embedding for column j. `projected` receives P e + b per column.
Matrix condition_batch(const Projection& proj, const Matrix& x, std::span<const int> levels,
                       const EmbeddingTable& table, Matrix* projected = nullptr);

/// Backward of condition_batch. Accumulates into `grad` (same shape as
/// `proj`) and returns dLoss/dx.
Matrix condition_batch_backward(const Projection& proj, const Matrix& x, const Matrix& projected,
                                const Matrix& grad_out, std::span<const int> levels, const EmbeddingTable& table,
                                Projection& grad);

}  // namespace engage::timecond
