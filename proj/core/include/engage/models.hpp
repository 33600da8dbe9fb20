#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "engage/nn.hpp"
#include "engage/rng.hpp"
#include "engage/timecond.hpp"

namespace engage::models {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline constexpr int kGamepadInputs = 31;
inline constexpr int kFrameChannels = 512;
inline constexpr int kFramesHidden = 128;
inline constexpr int kLatentWidth = 30;
inline constexpr int kFusionHidden = 32;
inline constexpr int kClasses = 2;

enum class Modality { kGamepad, kFrames, kFusion };

std::string_view to_string(Modality m);
Modality parse_modality(std::string_view s);

struct ModelConfig {
  Modality modality = Modality::kFusion;
  timecond::Strategy conditioning = timecond::Strategy::kNone;
  std::uint64_t seed = 0;
  double dropout = 0.1;
  timecond::EmbeddingSpec embedding{};
};

/// Dense layers applied in order. `conditioning[i]` (i < layers.size())
/// modulates the input of layer i; the extra last slot modulates the
/// stack output.
struct Stack {
  std::vector<nn::DenseLayer> layers;
  std::vector<std::optional<timecond::Projection>> conditioning;

  int input_width() const { return static_cast<int>(layers.front().inputs()); }
  int output_width() const { return static_cast<int>(layers.back().outputs()); }
  /// Width of the activation at a conditioning slot.
  int slot_width(std::size_t slot) const {
    return slot < layers.size() ? static_cast<int>(layers[slot].inputs()) : output_width();
  }
  std::size_t dense_parameter_count() const;
  std::size_t projection_parameter_count() const;
};

/// Up to two modality branches whose outputs (the 30-unit latents) are
/// concatenated, gamepad first, and fed to a head that emits 2 logits.
/// Class probabilities are the softmax of the (possibly conditioned) logits.
struct Network {
  Modality modality = Modality::kFusion;
  timecond::Strategy strategy = timecond::Strategy::kNone;
  timecond::EmbeddingTable embeddings;
  std::optional<Stack> gamepad;
  std::optional<Stack> frames;
  Stack head;
  std::uint64_t generation = 0;  // bumped whenever parameters change

  std::size_t parameter_count() const;
  std::size_t dense_parameter_count() const;
  std::size_t projection_parameter_count() const;

  /// Parameter blocks in a fixed order: stacks gamepad, frames, head; in
  /// each stack every layer's W then b, then every projection's W then b.
  std::vector<std::span<double>> parameters();
  std::vector<std::span<const double>> parameters() const;

  /// Same structure, every parameter zero.
  Network zeros_like() const;
};

Network build_gamepad_model(const ModelConfig& config);
Network build_frames_model(const ModelConfig& config);
Network build_fusion_model(const ModelConfig& config);
Network build_model(const ModelConfig& config);

/// Columns are samples. `gamepad` is 31 x B, `frames` is 512 x B (already
/// pooled); a model only reads the modalities it uses.
struct Batch {
  Matrix gamepad;
  Matrix frames;
  std::vector<int> levels;

  std::size_t size() const { return levels.size(); }
};

enum class Mode { kTrain, kEval };

struct LayerCache {
  Matrix input;        // before conditioning
  Matrix conditioned;  // fed to the dense layer
  Matrix projected;    // projection output per column (empty when unconditioned)
  Matrix pre_activation;
  Matrix mask;  // inverted-dropout multipliers, empty when no dropout applied
};

struct StackCache {
  std::vector<LayerCache> layers;
  Matrix output_raw;
  Matrix output_projected;
  Matrix output;
};

struct ForwardCache {
  const Network* network = nullptr;
  std::uint64_t generation = 0;
  std::vector<int> levels;
  std::optional<StackCache> gamepad;
  std::optional<StackCache> frames;
  StackCache head;
  Matrix probabilities;  // 2 x B
};

/// `rng` is required in TRAIN mode (dropout masks) and ignored in EVAL.
ForwardCache forward(const Network& net, const Batch& batch, Mode mode, Rng* rng = nullptr);

struct Gradients {
  Network grads;  // zeros_like(net) filled with dLoss/dparam
  double loss = 0.0;
};

/// Gradients of the mean cross-entropy of the cached forward pass.
/// Throws DataError when the cache is stale (network changed since forward).
Gradients backward(const Network& net, const ForwardCache& cache, std::span<const int> labels);

/// EVAL-mode class probabilities.
Matrix predict(const Network& net, const Batch& batch);

/// Latent vectors of one branch in EVAL mode (30 x B).
Matrix branch_latent(const Network& net, const Batch& batch, Modality branch);

/// EVAL-mode probabilities from externally supplied branch latents (30 x B
/// each; pass an empty matrix for a branch the model does not have). Used
/// for ablations such as zeroing one modality's latent.
Matrix predict_from_latents(const Network& net, const Matrix& gamepad_latent, const Matrix& frames_latent,
                            std::span<const int> levels);

/// Marks the parameters as modified (invalidates outstanding caches).
inline void touch(Network& net) { ++net.generation; }

}  // namespace engage::models
