#include "engage/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "engage/error.hpp"
#include "engage/preprocess.hpp"
#include "engage/rng.hpp"
#include "engage/text.hpp"

namespace engage::synth {

namespace fs = std::filesystem;

void SynthConfig::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v)) throw UsageError(std::string(name) + " must be positive");
  };
  auto non_negative = [](double v, const char* name) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw UsageError(std::string(name) + " must be non-negative");
  };
  if (n_participants == 0) throw UsageError("n_participants must be positive");
  positive(duration_s, "duration_s");
  positive(combat_segment_s, "combat_segment_s");
  positive(annotation_speed, "annotation_speed");
  positive(poll_hz, "poll_hz");
  positive(frame_fps, "frame_fps");
  non_negative(effect_strength, "effect_strength");
  non_negative(time_drift, "time_drift");
  non_negative(noise_sd, "noise_sd");
  non_negative(trace_noise_sd, "trace_noise_sd");
  non_negative(gamepad_gain, "gamepad_gain");
  non_negative(frame_gain, "frame_gain");
  if (frame_channels < 2) throw UsageError("frame_channels must be at least 2");
  if (duration_s < 11.0) throw UsageError("duration_s must hold at least one 10 s window plus the 1 s shift");
}

std::vector<std::string> SynthConfig::known_keys() {
  return {"n_participants", "duration_s",  "combat_segment_s", "effect_strength", "time_drift",
          "noise_sd",       "trace_noise_sd", "annotation_speed", "poll_hz",      "frame_fps",
          "frame_channels", "gamepad_gain", "frame_gain",       "seed"};
}

SynthConfig SynthConfig::from_kv(const KeyValueConfig& kv) {
  const auto unknown = kv.unknown_keys(known_keys());
  if (!unknown.empty()) throw UsageError("unknown synth config key '" + unknown.front() + "'");
  SynthConfig c;
  try {
    const auto n = kv.get_int("n_participants", static_cast<long long>(c.n_participants));
    if (n < 1) throw UsageError("n_participants must be positive");
    c.n_participants = static_cast<std::size_t>(n);
    c.duration_s = kv.get_double("duration_s", c.duration_s);
    c.combat_segment_s = kv.get_double("combat_segment_s", c.combat_segment_s);
    c.effect_strength = kv.get_double("effect_strength", c.effect_strength);
    c.time_drift = kv.get_double("time_drift", c.time_drift);
    c.noise_sd = kv.get_double("noise_sd", c.noise_sd);
    c.trace_noise_sd = kv.get_double("trace_noise_sd", c.trace_noise_sd);
    c.annotation_speed = kv.get_double("annotation_speed", c.annotation_speed);
    c.poll_hz = kv.get_double("poll_hz", c.poll_hz);
    c.frame_fps = kv.get_double("frame_fps", c.frame_fps);
    const auto ch = kv.get_int("frame_channels", c.frame_channels);
    if (ch < 2 || ch > (1 << 20)) throw UsageError("frame_channels out of range");
    c.frame_channels = static_cast<std::uint32_t>(ch);
    c.gamepad_gain = kv.get_double("gamepad_gain", c.gamepad_gain);
    c.frame_gain = kv.get_double("frame_gain", c.frame_gain);
    const auto seed = kv.get_int("seed", static_cast<long long>(c.seed));
    if (seed < 0) throw UsageError("seed must be non-negative");
    c.seed = static_cast<std::uint64_t>(seed);
  } catch (const DataError& e) {
    throw UsageError(e.what());
  }
  c.validate();
  return c;
}

KeyValueConfig SynthConfig::to_kv() const {
  KeyValueConfig kv;
  kv.set("n_participants", std::to_string(n_participants));
  kv.set("duration_s", text::format_double(duration_s));
  kv.set("combat_segment_s", text::format_double(combat_segment_s));
  kv.set("effect_strength", text::format_double(effect_strength));
  kv.set("time_drift", text::format_double(time_drift));
  kv.set("noise_sd", text::format_double(noise_sd));
  kv.set("trace_noise_sd", text::format_double(trace_noise_sd));
  kv.set("annotation_speed", text::format_double(annotation_speed));
  kv.set("poll_hz", text::format_double(poll_hz));
  kv.set("frame_fps", text::format_double(frame_fps));
  kv.set("frame_channels", std::to_string(frame_channels));
  kv.set("gamepad_gain", text::format_double(gamepad_gain));
  kv.set("frame_gain", text::format_double(frame_gain));
  kv.set("seed", std::to_string(seed));
  return kv;
}

std::string participant_id(std::size_t index, std::size_t count) {
  const auto width = std::max<std::size_t>(2, std::to_string(count).size());
  auto digits = std::to_string(index + 1);
  return "P" + std::string(width - std::min(width, digits.size()), '0') + digits;
}

int StateTimeline::at(double t) const {
  const auto it = std::upper_bound(starts.begin(), starts.end(), t);
  return it == starts.begin() ? states.front() : states[static_cast<std::size_t>(it - starts.begin()) - 1];
}

double StateTimeline::mean(double a, double b) const {
  if (!(b > a)) return at(a);
  double acc = 0.0;
  for (std::size_t i = 0; i < starts.size(); ++i) {
    const double lo = i == 0 ? -std::numeric_limits<double>::infinity() : starts[i];
    const double hi = i + 1 < starts.size() ? starts[i + 1] : std::numeric_limits<double>::infinity();
    const double l = std::max(lo, a), h = std::min(hi, b);
    if (h > l) acc += (h - l) * states[i];
  }
  return acc / (b - a);
}

double StateTimeline::combat_fraction(double duration) const { return 0.5 * (mean(0.0, duration) + 1.0); }

namespace {

constexpr std::size_t kGroupSize = 8;  // actions driven by cos (0..7) and sin (8..15) of the drift angle

// Corpus-wide orthonormal pair spanning the planted frame-feature plane.
std::pair<std::vector<double>, std::vector<double>> planted_plane(const SynthConfig& c) {
  Rng rng = Rng(c.seed).split(0);
  std::vector<double> u(c.frame_channels), v(c.frame_channels);
  for (auto& x : u) x = rng.normal();
  for (auto& x : v) x = rng.normal();
  auto dot = [](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
  };
  const double nu = std::sqrt(dot(u, u));
  for (auto& x : u) x /= nu;
  const double proj = dot(u, v);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] -= proj * u[i];
  const double nv = std::sqrt(dot(v, v));
  for (auto& x : v) x /= nv;
  return {u, v};
}

double drift_angle(const SynthConfig& c, double t) {
  return static_cast<double>(preprocess::t_level(t) - 1) * c.time_drift * std::numbers::pi / 2.0;
}

StateTimeline make_timeline(const SynthConfig& c, Rng& rng) {
  StateTimeline tl;
  int state = rng.uniform() < 0.5 ? 1 : -1;
  double t = 0.0;
  while (t < c.duration_s) {
    tl.starts.push_back(t);
    tl.states.push_back(state);
    t += c.combat_segment_s * rng.uniform(0.5, 1.5);
    state = -state;
  }
  return tl;
}

}  // namespace

GeneratedSession generate_session(const SynthConfig& c, std::size_t index) {
  c.validate();
  if (index >= c.n_participants) throw UsageError("participant index out of range");
  Rng rng = Rng(c.seed).split(1000 + index);
  Rng trace_rng = rng.split(1), pad_rng = rng.split(2), frame_rng = rng.split(3);

  GeneratedSession g;
  auto& s = g.session;
  s.participant_id = participant_id(index, c.n_participants);
  s.duration_s = c.duration_s;
  g.timeline = make_timeline(c, rng);
  const auto& tl = g.timeline;

  // Trace: 5 s moving average of the state, lagging the stimulus by 1 s,
  // plus noise, through a per-participant affine map, at 10 Hz annotation time.
  {
    const double scale = rng.uniform(0.5, 2.0), offset = rng.uniform(-1.0, 1.0);
    const double end = c.duration_s / c.annotation_speed;
    auto& tr = s.trace;
    tr.speed_factor = c.annotation_speed;
    for (std::size_t j = 0;; ++j) {
      double t = static_cast<double>(j) / 10.0;
      if (t > end) break;
      tr.t.push_back(t);
      const double tau = t * c.annotation_speed - 1.0;
      tr.v.push_back(scale * (tl.mean(tau - 2.5, tau + 2.5) + c.trace_noise_sd * trace_rng.normal()) + offset);
    }
    if (tr.t.back() < end) {
      tr.t.push_back(end);
      const double tau = c.duration_s - 1.0;
      tr.v.push_back(scale * (tl.mean(tau - 2.5, tau + 2.5) + c.trace_noise_sd * trace_rng.normal()) + offset);
    }
  }

  // Gamepad: every poll presses each action independently; two groups of
  // actions respond to the state through cos / sin of the drift angle.
  {
    const double activity = rng.uniform(0.85, 1.15);
    std::vector<double> base(corpus::kActionCount);
    for (auto& b : base) b = activity * rng.uniform(0.04, 0.2);
    const double gain = c.gamepad_gain * c.effect_strength;
    std::vector<std::uint8_t> pressed;
    for (std::size_t k = 0;; ++k) {
      const double t = static_cast<double>(k) / c.poll_hz;
      if (t >= c.duration_s) break;
      const double st = tl.at(t), theta = drift_angle(c, t);
      const double wa = std::cos(theta), wb = std::sin(theta);
      pressed.clear();
      for (std::size_t a = 0; a < corpus::kActionCount; ++a) {
        const double w = a < kGroupSize ? wa : a < 2 * kGroupSize ? wb : 0.0;
        const double p = std::clamp(base[a] * (1.0 + gain * st * w), 0.0, 0.95);
        if (pad_rng.uniform() < p) pressed.push_back(static_cast<std::uint8_t>(a));
      }
      while (pressed.size() > corpus::kMaxComboSize) {
        pressed.erase(pressed.begin() + static_cast<std::ptrdiff_t>(pad_rng.below(pressed.size())));
      }
      s.events.push_back({t, pressed});
    }
  }

  // Frames: isotropic noise, a small per-participant offset and a state-driven
  // shift along the planted direction, rotated within the plane by the drift angle.
  {
    const auto [u, v] = planted_plane(c);
    auto& f = s.features;
    f.layout = corpus::FrameLayout::kVectors;
    f.channels = c.frame_channels;
    f.height = f.width = 1;
    f.fps = c.frame_fps;
    f.frame_count = static_cast<std::uint32_t>(std::floor(c.duration_s * c.frame_fps + 1e-9));
    std::vector<double> offset(c.frame_channels);
    for (auto& x : offset) x = 0.05 * c.noise_sd * rng.normal();
    f.data.resize(static_cast<std::size_t>(f.frame_count) * c.frame_channels);
    const double gain = c.frame_gain * c.effect_strength;
    for (std::uint32_t i = 0; i < f.frame_count; ++i) {
      const double t = f.timestamp(i);
      const double shift = gain * tl.at(t), theta = drift_angle(c, t);
      const double cu = shift * std::cos(theta), cv = shift * std::sin(theta);
      float* rec = f.data.data() + static_cast<std::size_t>(i) * c.frame_channels;
      for (std::uint32_t ch = 0; ch < c.frame_channels; ++ch) {
        rec[ch] = static_cast<float>(c.noise_sd * frame_rng.normal() + offset[ch] + cu * u[ch] + cv * v[ch]);
      }
    }
  }
  return g;
}

std::vector<corpus::Session> generate(const SynthConfig& config) {
  std::vector<corpus::Session> out;
  for (std::size_t i = 0; i < config.n_participants; ++i) out.push_back(generate_session(config, i).session);
  return out;
}

std::vector<fs::path> write_corpus(const SynthConfig& config, const fs::path& dir) {
  config.validate();
  std::vector<fs::path> manifests;
  for (std::size_t i = 0; i < config.n_participants; ++i) {
    const auto g = generate_session(config, i);
    manifests.push_back(corpus::write_session(g.session, dir / g.session.participant_id));
  }
  return manifests;
}

}  // namespace engage::synth
