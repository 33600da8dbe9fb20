#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "engage/models.hpp"

namespace engage::testing {

/// Central finite differences of the mean cross-entropy for every
/// trainable parameter, computed by an independent per-sample reference
/// forward pass. A perturbed loss is evaluated exactly by re-running only
/// the part of the network that the perturbed parameter reaches.
/// Dropout masks are taken from `cache` so TRAIN-mode passes can be checked.
struct FiniteDifferenceReport {
  double reference_loss = 0.0;
  std::size_t parameters = 0;
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;  // flat index in Network::parameters() order
  std::size_t failures = 0;     // relative error above the tolerance
  std::vector<double> numeric;  // flat, Network::parameters() order
};

struct FiniteDifferenceOptions {
  double step = 1e-4;
  double tolerance = 1e-3;
  /// Denominator floor for the relative error |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
};

/// Loss of the reference forward pass (for agreement with models::forward).
double reference_loss(const models::Network& net, const models::ForwardCache& cache, const models::Batch& batch,
                      std::span<const int> labels);

FiniteDifferenceReport finite_difference_check(const models::Network& net, const models::ForwardCache& cache,
                                               const models::Batch& batch, std::span<const int> labels,
                                               const models::Network& analytic,
                                               const FiniteDifferenceOptions& options = {});

/// Sets every projection parameter to N(0, sd^2) draws.
void randomize_projections(models::Network& net, std::uint64_t seed, double sd = 0.05);

/// Random batch: gamepad features uniform in [0, 2], pooled frame features
/// N(0, 1), levels cycling 1, 2, 3, labels alternating.
models::Batch random_batch(std::size_t n, std::uint64_t seed, std::vector<int>* labels = nullptr);

}  // namespace engage::testing
