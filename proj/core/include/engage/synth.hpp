#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "engage/config.hpp"
#include "engage/corpus.hpp"

namespace engage::synth {

/// Synthetic corpus with a latent combat/exploration state that drives the
/// engagement trace and, scaled by `effect_strength`, the gamepad press
/// rates and a direction in frame-feature space.
struct SynthConfig {
  std::size_t n_participants = 20;
  double duration_s = 3600.0;
  double combat_segment_s = 75.0;  // mean length of a latent-state segment
  double effect_strength = 1.0;    // 0 makes features independent of the state
  double time_drift = 0.0;         // rotation of the feature mapping per 20-min block, in quarter turns
  double noise_sd = 1.0;           // per-channel frame feature noise
  double trace_noise_sd = 0.05;
  double annotation_speed = 2.0;
  double poll_hz = 5.0;
  double frame_fps = 3.0;
  std::uint32_t frame_channels = 512;
  double gamepad_gain = 0.26;  // relative press-rate change per unit effect
  double frame_gain = 0.26;    // mean shift along the planted direction per unit effect
  std::uint64_t seed = 1;

  /// Throws UsageError on a degenerate configuration.
  void validate() const;

  static std::vector<std::string> known_keys();
  static SynthConfig from_kv(const KeyValueConfig& kv);
  KeyValueConfig to_kv() const;
};

/// "P01", "P02", ...
std::string participant_id(std::size_t index, std::size_t count);

/// Latent state of one participant: segment boundaries and the state held
/// on each segment (+1 combat, -1 exploration).
struct StateTimeline {
  std::vector<double> starts;  // starts[0] == 0
  std::vector<int> states;

  int at(double t) const;
  /// Mean of the state over [a, b] (states before 0 extend the first segment).
  double mean(double a, double b) const;
  double combat_fraction(double duration) const;
};

struct GeneratedSession {
  corpus::Session session;
  StateTimeline timeline;
};

/// Participant `index` of the corpus; depends only on (config, index).
GeneratedSession generate_session(const SynthConfig& config, std::size_t index);

/// All participants, in memory.
std::vector<corpus::Session> generate(const SynthConfig& config);

/// Generates one participant at a time and writes `<dir>/<id>/` sessions.
/// Returns the manifest paths.
std::vector<std::filesystem::path> write_corpus(const SynthConfig& config, const std::filesystem::path& dir);

}  // namespace engage::synth
