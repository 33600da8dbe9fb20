#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "engage/corpus.hpp"

namespace engage::preprocess {

struct WindowSpec {
  double window_s = 10.0;
  double stride_s = 1.5;
  double stimulus_shift_s = 1.0;  // stimulus window leads the annotation window
  double frame_fps = 3.0;
  double trace_hz = 30.0;
  double epsilon = 0.05;

  /// Throws UsageError when a field is out of range.
  void validate() const;
};

inline constexpr std::size_t kGamepadFeatureCount = 31;
inline constexpr std::size_t kNoKeyFeature = 25;
/// Feature index of the n-button combo counter, n in [2, 6].
constexpr std::size_t combo_feature(std::size_t n) { return 26 + (n - 2); }
inline constexpr std::size_t kFramesPerWindow = 30;

using GamepadFeatures = std::array<double, kGamepadFeatureCount>;

/// Half-open time interval [start, end) in video seconds.
struct Interval {
  double start = 0.0;
  double end = 0.0;
  double length() const { return end - start; }
};

/// Trace resampled onto a uniform grid (sample k at k / hz) spanning the
/// session, min-max normalized to [0, 1].
struct NormalizedTrace {
  double hz = 30.0;
  std::vector<double> v;

  double mean() const;
  double time(std::size_t k) const { return static_cast<double>(k) / hz; }
};

/// Rescales annotation time to video time (t * speed_factor), linearly
/// interpolates onto a `trace_hz` grid over [0, duration_s] and min-max
/// normalizes. Throws DataError("flat trace") when the trace has no range.
NormalizedTrace normalize_and_rescale_trace(const corpus::EngagementTrace& trace, double duration_s,
                                            double trace_hz = 30.0);

struct WindowPair {
  Interval annotation;
  Interval stimulus;
};

struct Segmentation {
  std::vector<WindowPair> windows;
  std::optional<std::string> warning;
};

/// floor((duration - window - shift) / stride) + 1, or 0 when the session
/// cannot hold one shifted window.
std::size_t expected_window_count(double duration_s, const WindowSpec& spec);

/// Annotation windows start at shift, shift + stride, ...; each stimulus
/// window is the annotation window moved `stimulus_shift_s` earlier.
Segmentation segment_windows(double duration_s, const WindowSpec& spec);

/// Per-window press frequencies. A combo of n >= 2 actions counts once for
/// each constituent action and once for its size bucket; an empty poll
/// counts as "no key". Counts are divided by `spec.window_s`.
GamepadFeatures gamepad_features(std::span<const corpus::GamepadEvent> events, Interval stimulus,
                                 const WindowSpec& spec);

/// Frames whose timestamps fall in the stimulus window. `first` is the
/// first record index and `in_window` the number of such records; the
/// selection is padded by repeating the last record or truncated to 30.
struct FrameSelection {
  std::uint32_t first = 0;
  std::uint32_t in_window = 0;

  std::array<std::uint32_t, kFramesPerWindow> indices() const;
};

FrameSelection frame_window(const corpus::FrameFeatureStream& stream, Interval stimulus);

enum class WindowClass { kLow, kHigh, kAmbiguous };
enum class Label : int { kLow = 0, kHigh = 1 };

std::string_view to_string(WindowClass c);
std::string_view to_string(Label l);
Label parse_label(std::string_view s);

/// HIGH iff e_mean > mu + eps, LOW iff e_mean < mu - eps, else AMBIGUOUS.
WindowClass classify(double e_mean, double mu, double epsilon);

/// Mean of the normalized trace samples inside the annotation window.
double window_mean(const NormalizedTrace& trace, Interval annotation);

struct LabelDecision {
  WindowClass cls = WindowClass::kAmbiguous;
  double e_mean = 0.0;
};

LabelDecision label_window(const NormalizedTrace& trace, Interval annotation, double mu, double epsilon);

/// Coarse session timestep: 1 for [0, 20) min, 2 for [20, 40) min, 3 after.
int t_level(double t_start_s);

struct LabeledWindow {
  std::string participant_id;
  double t_start = 0.0;  // annotation window start
  GamepadFeatures gamepad{};
  FrameSelection frames;
  Eigen::VectorXd pooled_frames;  // spatial max then temporal mean, length C
  Label label = Label::kLow;
  int t_level = 1;
  double e_mean = 0.0;
};

/// Pools the 30 selected records of a window into one C-vector.
Eigen::VectorXd pool_selection(const corpus::FrameFeatureStream& stream, const FrameSelection& selection);

struct SessionWindows {
  std::string participant_id;
  double mu = 0.0;
  std::size_t segmented = 0;
  std::size_t ambiguous = 0;
  std::size_t high = 0;
  std::size_t low = 0;
  std::vector<LabeledWindow> windows;
  std::vector<std::string> warnings;
};

/// Full per-session pipeline: normalize, segment, label, featurize.
SessionWindows build_windows(const corpus::Session& session, const WindowSpec& spec);

}  // namespace engage::preprocess
