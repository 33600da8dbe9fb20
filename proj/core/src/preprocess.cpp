#include "engage/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "engage/error.hpp"
#include "engage/nn.hpp"
#include "engage/text.hpp"

namespace engage::preprocess {

namespace {

// Grid comparisons tolerate representation error in k / rate products.
constexpr double kGridTol = 1e-9;

std::size_t grid_ceil(double x) {
  if (x <= 0.0) return 0;
  return static_cast<std::size_t>(std::ceil(x - kGridTol));
}

}  // namespace

void WindowSpec::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v)) throw UsageError(std::string(name) + " must be positive");
  };
  positive(window_s, "window_s");
  positive(stride_s, "stride_s");
  positive(stimulus_shift_s, "stimulus_shift_s");
  positive(frame_fps, "frame_fps");
  positive(trace_hz, "trace_hz");
  if (!(stimulus_shift_s < window_s)) throw UsageError("stimulus_shift_s must be shorter than window_s");
  // 0.5 is admitted so that an operator can probe the degenerate end of the band.
  if (!(epsilon >= 0.0 && epsilon <= 0.5)) throw UsageError("epsilon must lie in [0, 0.5]");
}

double NormalizedTrace::mean() const {
  if (v.empty()) return 0.0;
  double sum = 0.0;
  for (double x : v) sum += x;
  return sum / static_cast<double>(v.size());
}

NormalizedTrace normalize_and_rescale_trace(const corpus::EngagementTrace& trace, double duration_s,
                                            double trace_hz) {
  if (trace.size() < 2 || trace.t.size() != trace.v.size()) throw DataError("trace needs at least 2 samples");
  if (!(duration_s > 0.0)) throw DataError("duration must be positive");
  if (!(trace_hz > 0.0)) throw DataError("trace rate must be positive");

  std::vector<double> times(trace.size());
  for (std::size_t i = 0; i < trace.size(); ++i) times[i] = trace.t[i] * trace.speed_factor;

  NormalizedTrace out;
  out.hz = trace_hz;
  const auto n = static_cast<std::size_t>(std::floor(duration_s * trace_hz + kGridTol)) + 1;
  out.v.resize(n);
  std::size_t seg = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const double t = static_cast<double>(k) / trace_hz;
    double value;
    if (t <= times.front()) {
      value = trace.v.front();
    } else if (t >= times.back()) {
      value = trace.v.back();
    } else {
      while (times[seg + 1] < t) ++seg;
      const double t0 = times[seg], t1 = times[seg + 1];
      const double w = (t - t0) / (t1 - t0);
      value = trace.v[seg] + w * (trace.v[seg + 1] - trace.v[seg]);
    }
    out.v[k] = value;
  }

  const auto [lo_it, hi_it] = std::minmax_element(out.v.begin(), out.v.end());
  const double lo = *lo_it, hi = *hi_it;
  if (!(hi > lo)) throw DataError("flat trace: engagement annotation has no range");
  const double range = hi - lo;
  for (double& x : out.v) x = (x - lo) / range;
  return out;
}

std::size_t expected_window_count(double duration_s, const WindowSpec& spec) {
  const double span = duration_s - spec.window_s - spec.stimulus_shift_s;
  if (span < -kGridTol) return 0;
  return static_cast<std::size_t>(std::floor(std::max(0.0, span) / spec.stride_s + kGridTol)) + 1;
}

Segmentation segment_windows(double duration_s, const WindowSpec& spec) {
  Segmentation seg;
  const auto count = expected_window_count(duration_s, spec);
  if (count == 0) {
    seg.warning = "session of " + text::format_double(duration_s) + " s is shorter than one shifted window";
    return seg;
  }
  seg.windows.reserve(count);
  for (std::size_t j = 0; j < count; ++j) {
    const double t = spec.stimulus_shift_s + static_cast<double>(j) * spec.stride_s;
    WindowPair w;
    w.annotation = {t, t + spec.window_s};
    w.stimulus = {t - spec.stimulus_shift_s, t - spec.stimulus_shift_s + spec.window_s};
    seg.windows.push_back(w);
  }
  return seg;
}

GamepadFeatures gamepad_features(std::span<const corpus::GamepadEvent> events, Interval stimulus,
                                 const WindowSpec& spec) {
  GamepadFeatures counts{};
  auto first = std::lower_bound(events.begin(), events.end(), stimulus.start,
                                [](const corpus::GamepadEvent& e, double t) { return e.t < t; });
  for (auto it = first; it != events.end() && it->t < stimulus.end; ++it) {
    const auto n = it->pressed.size();
    if (n == 0) {
      counts[kNoKeyFeature] += 1.0;
      continue;
    }
    for (auto a : it->pressed) counts[a] += 1.0;
    if (n >= 2) counts[combo_feature(std::min(n, corpus::kMaxComboSize))] += 1.0;
  }
  for (double& c : counts) c /= spec.window_s;
  return counts;
}

std::array<std::uint32_t, kFramesPerWindow> FrameSelection::indices() const {
  std::array<std::uint32_t, kFramesPerWindow> out{};
  for (std::uint32_t i = 0; i < kFramesPerWindow; ++i) {
    out[i] = first + std::min(i, in_window - 1);
  }
  return out;
}

FrameSelection frame_window(const corpus::FrameFeatureStream& stream, Interval stimulus) {
  const std::size_t lo = std::min<std::size_t>(grid_ceil(stimulus.start * stream.fps), stream.frame_count);
  const std::size_t hi = std::min<std::size_t>(grid_ceil(stimulus.end * stream.fps), stream.frame_count);
  if (hi <= lo) {
    throw DataError("frame stream does not overlap window [" + text::format_double(stimulus.start) + ", " +
                    text::format_double(stimulus.end) + ")");
  }
  return FrameSelection{static_cast<std::uint32_t>(lo), static_cast<std::uint32_t>(hi - lo)};
}

std::string_view to_string(WindowClass c) {
  switch (c) {
    case WindowClass::kLow: return "LOW";
    case WindowClass::kHigh: return "HIGH";
    case WindowClass::kAmbiguous: return "AMBIGUOUS";
  }
  return "?";
}

std::string_view to_string(Label l) { return l == Label::kHigh ? "HIGH" : "LOW"; }

Label parse_label(std::string_view s) {
  if (s == "HIGH") return Label::kHigh;
  if (s == "LOW") return Label::kLow;
  throw DataError("invalid label '" + std::string(s) + "'");
}

WindowClass classify(double e_mean, double mu, double epsilon) {
  if (e_mean > mu + epsilon) return WindowClass::kHigh;
  if (e_mean < mu - epsilon) return WindowClass::kLow;
  return WindowClass::kAmbiguous;
}

double window_mean(const NormalizedTrace& trace, Interval annotation) {
  if (annotation.start < 0.0) throw DataError("annotation window starts before the trace");
  const std::size_t lo = grid_ceil(annotation.start * trace.hz);
  const std::size_t hi = grid_ceil(annotation.end * trace.hz);
  if (hi > trace.v.size() || hi <= lo) {
    throw DataError("annotation window [" + text::format_double(annotation.start) + ", " +
                    text::format_double(annotation.end) + ") outside trace support");
  }
  double sum = 0.0;
  for (std::size_t k = lo; k < hi; ++k) sum += trace.v[k];
  return sum / static_cast<double>(hi - lo);
}

LabelDecision label_window(const NormalizedTrace& trace, Interval annotation, double mu, double epsilon) {
  LabelDecision d;
  d.e_mean = window_mean(trace, annotation);
  d.cls = classify(d.e_mean, mu, epsilon);
  return d;
}

int t_level(double t_start_s) {
  if (t_start_s < 1200.0) return 1;
  if (t_start_s < 2400.0) return 2;
  return 3;
}

Eigen::VectorXd pool_selection(const corpus::FrameFeatureStream& stream, const FrameSelection& selection) {
  const auto rec = stream.record_size();
  std::vector<float> gathered(kFramesPerWindow * rec);
  const auto idx = selection.indices();
  for (std::size_t i = 0; i < kFramesPerWindow; ++i) {
    if (idx[i] >= stream.frame_count) throw DataError("frame reference beyond end of feature stream");
    const auto r = stream.record(idx[i]);
    std::copy(r.begin(), r.end(), gathered.begin() + static_cast<std::ptrdiff_t>(i * rec));
  }
  const nn::FrameShape shape{kFramesPerWindow, stream.channels, stream.height, stream.width};
  return nn::temporal_avg_pool(nn::spatial_max_pool(gathered, shape));
}

SessionWindows build_windows(const corpus::Session& session, const WindowSpec& spec) {
  spec.validate();
  SessionWindows out;
  out.participant_id = session.participant_id;
  if (std::abs(session.features.fps - spec.frame_fps) > 1e-9) {
    out.warnings.push_back(session.participant_id + ": feature stream runs at " +
                           text::format_double(session.features.fps) + " fps, windows assume " +
                           text::format_double(spec.frame_fps));
  }

  const auto trace = normalize_and_rescale_trace(session.trace, session.duration_s, spec.trace_hz);
  out.mu = trace.mean();

  const auto seg = segment_windows(session.duration_s, spec);
  if (seg.warning) out.warnings.push_back(session.participant_id + ": " + *seg.warning);
  out.segmented = seg.windows.size();

  for (const auto& w : seg.windows) {
    const auto decision = label_window(trace, w.annotation, out.mu, spec.epsilon);
    if (decision.cls == WindowClass::kAmbiguous) {
      ++out.ambiguous;
      continue;
    }
    LabeledWindow lw;
    lw.participant_id = session.participant_id;
    lw.t_start = w.annotation.start;
    lw.label = decision.cls == WindowClass::kHigh ? Label::kHigh : Label::kLow;
    lw.e_mean = decision.e_mean;
    lw.t_level = t_level(w.annotation.start);
    lw.gamepad = gamepad_features(session.events, w.stimulus, spec);
    lw.frames = frame_window(session.features, w.stimulus);
    lw.pooled_frames = pool_selection(session.features, lw.frames);
    (lw.label == Label::kHigh ? out.high : out.low) += 1;
    out.windows.push_back(std::move(lw));
  }
  return out;
}

}  // namespace engage::preprocess
