#include <gtest/gtest.h>

#include <cmath>

#include "engage/error.hpp"
#include "engage/preprocess.hpp"
#include "engage/rng.hpp"
#include "engage/synth.hpp"

using namespace engage;
using namespace engage::preprocess;

namespace {

std::size_t action(const char* name) { return *corpus::ActionVocabulary::standard().index_of(name); }

corpus::Session small_session(std::uint64_t seed, double duration = 300.0) {
  synth::SynthConfig cfg;
  cfg.n_participants = 1;
  cfg.duration_s = duration;
  cfg.frame_channels = 8;
  cfg.seed = seed;
  return synth::generate_session(cfg, 0).session;
}

}  // namespace

TEST(NormalizeTrace, LinearRiseOverDoubledTime) {
  corpus::EngagementTrace tr{{0.0, 10.0}, {5.0, 15.0}, 2.0};
  const auto n = normalize_and_rescale_trace(tr, 20.0, 30.0);
  ASSERT_EQ(n.v.size(), 601u);
  EXPECT_DOUBLE_EQ(n.v.front(), 0.0);
  EXPECT_DOUBLE_EQ(n.v.back(), 1.0);
  for (std::size_t k = 0; k < n.v.size(); ++k) EXPECT_NEAR(n.v[k], static_cast<double>(k) / 600.0, 1e-12);
}

TEST(NormalizeTrace, FlatTraceRejected) {
  corpus::EngagementTrace tr{{0.0, 1.0, 2.0}, {7.0, 7.0, 7.0}, 2.0};
  try {
    normalize_and_rescale_trace(tr, 10.0);
    FAIL() << "flat trace accepted";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("flat trace"), std::string::npos);
  }
}

TEST(NormalizeTrace, PeakAndMidpoint) {
  corpus::EngagementTrace tr{{0.0, 1.0, 2.0}, {0.0, 2.0, 1.0}, 1.0};
  const auto n = normalize_and_rescale_trace(tr, 2.0, 30.0);
  ASSERT_EQ(n.v.size(), 61u);
  EXPECT_DOUBLE_EQ(n.v[30], 1.0);
  EXPECT_DOUBLE_EQ(n.v[60], 0.5);
  EXPECT_DOUBLE_EQ(*std::min_element(n.v.begin(), n.v.end()), 0.0);
}

TEST(NormalizeTrace, HoldsEndValuesOutsideSupport) {
  corpus::EngagementTrace tr{{1.0, 2.0}, {0.0, 4.0}, 2.0};  // video time 2..4
  const auto n = normalize_and_rescale_trace(tr, 6.0, 10.0);
  EXPECT_DOUBLE_EQ(n.v[0], 0.0);
  EXPECT_DOUBLE_EQ(n.v[15], 0.0);
  EXPECT_DOUBLE_EQ(n.v[30], 0.5);
  EXPECT_DOUBLE_EQ(n.v[60], 1.0);
}

TEST(SegmentWindows, OneHourGives2393) {
  const WindowSpec spec;
  EXPECT_EQ(expected_window_count(3600.0, spec), 2393u);
  const auto seg = segment_windows(3600.0, spec);
  ASSERT_EQ(seg.windows.size(), 2393u);
  EXPECT_FALSE(seg.warning);
  const auto& last = seg.windows.back();
  EXPECT_LE(last.annotation.end, 3600.0);
  EXPECT_GE(last.stimulus.start, 0.0);
}

TEST(SegmentWindows, ElevenSecondsGivesOneWindow) {
  const auto seg = segment_windows(11.0, WindowSpec{});
  ASSERT_EQ(seg.windows.size(), 1u);
  EXPECT_DOUBLE_EQ(seg.windows[0].annotation.start, 1.0);
  EXPECT_DOUBLE_EQ(seg.windows[0].annotation.end, 11.0);
  EXPECT_DOUBLE_EQ(seg.windows[0].stimulus.start, 0.0);
  EXPECT_DOUBLE_EQ(seg.windows[0].stimulus.end, 10.0);
}

TEST(SegmentWindows, TooShortGivesWarning) {
  const auto seg = segment_windows(10.9, WindowSpec{});
  EXPECT_TRUE(seg.windows.empty());
  ASSERT_TRUE(seg.warning);
}

TEST(SegmentWindows, CountFormulaMatchesEnumeration) {
  Rng rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    WindowSpec spec;
    spec.window_s = rng.uniform(2.0, 15.0);
    spec.stride_s = rng.uniform(0.25, 4.0);
    spec.stimulus_shift_s = rng.uniform(0.1, spec.window_s * 0.9);
    const double duration = rng.uniform(0.0, 4000.0);
    std::size_t enumerated = 0;
    for (double t = spec.stimulus_shift_s; t + spec.window_s <= duration; t = spec.stimulus_shift_s + spec.stride_s * static_cast<double>(++enumerated)) {
    }
    const auto seg = segment_windows(duration, spec);
    EXPECT_EQ(seg.windows.size(), enumerated) << "duration " << duration;
    const double formula = std::floor((duration - spec.window_s - spec.stimulus_shift_s) / spec.stride_s) + 1;
    EXPECT_EQ(static_cast<double>(seg.windows.size()), std::max(0.0, formula));
    for (const auto& w : seg.windows) {
      EXPECT_NEAR(w.annotation.start - w.stimulus.start, spec.stimulus_shift_s, 1e-12);
      EXPECT_LE(w.annotation.end, duration + 1e-9);
    }
  }
}

TEST(WindowSpec, Validation) {
  WindowSpec s;
  EXPECT_NO_THROW(s.validate());
  s.stimulus_shift_s = 10.0;
  EXPECT_THROW(s.validate(), UsageError);
  s = {};
  s.stride_s = 0.0;
  EXPECT_THROW(s.validate(), UsageError);
  s = {};
  s.epsilon = -0.1;
  EXPECT_THROW(s.validate(), UsageError);
}

TEST(GamepadFeatures, SingleButtonFrequency) {
  std::vector<corpus::GamepadEvent> ev;
  for (int i = 0; i < 5; ++i) ev.push_back({1.0 + i, {static_cast<std::uint8_t>(action("btn_a"))}});
  const auto f = gamepad_features(ev, {0.0, 10.0}, WindowSpec{});
  for (std::size_t i = 0; i < kGamepadFeatureCount; ++i) {
    EXPECT_DOUBLE_EQ(f[i], i == action("btn_a") ? 0.5 : 0.0) << i;
  }
}

TEST(GamepadFeatures, ComboCountsConstituentsAndSize) {
  std::vector<corpus::GamepadEvent> ev{
      {2.0, {static_cast<std::uint8_t>(action("btn_a")), static_cast<std::uint8_t>(action("btn_b"))}}};
  const auto f = gamepad_features(ev, {0.0, 10.0}, WindowSpec{});
  EXPECT_DOUBLE_EQ(f[action("btn_a")], 0.1);
  EXPECT_DOUBLE_EQ(f[action("btn_b")], 0.1);
  EXPECT_DOUBLE_EQ(f[combo_feature(2)], 0.1);
  EXPECT_DOUBLE_EQ(f[kNoKeyFeature], 0.0);
}

TEST(GamepadFeatures, NokeyOnly) {
  std::vector<corpus::GamepadEvent> ev{{0.0, {}}, {4.0, {}}, {9.99, {}}, {10.0, {}}};
  const auto f = gamepad_features(ev, {0.0, 10.0}, WindowSpec{});
  for (std::size_t i = 0; i < kGamepadFeatureCount; ++i) EXPECT_DOUBLE_EQ(f[i], i == kNoKeyFeature ? 0.3 : 0.0);
}

TEST(GamepadFeatures, EmptyWindowIsZero) {
  std::vector<corpus::GamepadEvent> ev{{50.0, {1}}};
  const auto f = gamepad_features(ev, {0.0, 10.0}, WindowSpec{});
  for (double x : f) EXPECT_EQ(x, 0.0);
}

TEST(GamepadFeatures, MatchesNaiveRecountAndFrequencyBound) {
  const auto s = small_session(11, 200.0);
  const WindowSpec spec;
  for (const auto& w : segment_windows(s.duration_s, spec).windows) {
    const auto f = gamepad_features(s.events, w.stimulus, spec);
    GamepadFeatures naive{};
    std::size_t in_window = 0;
    for (const auto& e : s.events) {
      if (e.t < w.stimulus.start || e.t >= w.stimulus.end) continue;
      ++in_window;
      if (e.pressed.empty()) naive[25] += 1;
      for (auto a : e.pressed) naive[a] += 1;
      if (e.pressed.size() >= 2) naive[26 + e.pressed.size() - 2] += 1;
    }
    for (std::size_t i = 0; i < kGamepadFeatureCount; ++i) {
      EXPECT_DOUBLE_EQ(f[i], naive[i] / spec.window_s);
      EXPECT_GE(f[i], 0.0);
      EXPECT_LE(f[i], static_cast<double>(in_window) / spec.window_s);
    }
  }
}

TEST(FrameWindow, ExactGrid) {
  corpus::FrameFeatureStream s;
  s.channels = 1;
  s.frame_count = 90;
  s.data.assign(90, 0.0f);
  const auto sel = frame_window(s, {0.0, 10.0});
  EXPECT_EQ(sel.first, 0u);
  EXPECT_EQ(sel.in_window, 30u);
  const auto idx = sel.indices();
  for (std::uint32_t i = 0; i < 30; ++i) EXPECT_EQ(idx[i], i);
}

TEST(FrameWindow, PadsByRepeatingLast) {
  corpus::FrameFeatureStream s;
  s.channels = 1;
  s.frame_count = 29;
  s.data.assign(29, 0.0f);
  const auto sel = frame_window(s, {0.0, 10.0});
  EXPECT_EQ(sel.in_window, 29u);
  const auto idx = sel.indices();
  EXPECT_EQ(idx[28], 28u);
  EXPECT_EQ(idx[29], 28u);
}

TEST(FrameWindow, TruncatesToThirty) {
  corpus::FrameFeatureStream s;
  s.channels = 1;
  s.fps = 3.1;
  s.frame_count = 60;
  s.data.assign(60, 0.0f);
  const auto sel = frame_window(s, {0.0, 10.0});
  EXPECT_EQ(sel.in_window, 31u);
  const auto idx = sel.indices();
  for (std::uint32_t i = 0; i < 30; ++i) EXPECT_EQ(idx[i], i);
}

TEST(FrameWindow, NoOverlapIsError) {
  corpus::FrameFeatureStream s;
  s.channels = 1;
  s.frame_count = 3;
  s.data.assign(3, 0.0f);
  EXPECT_THROW(frame_window(s, {20.0, 30.0}), DataError);
}

TEST(FrameWindow, ShiftedStartUsesCeilingOnGrid) {
  corpus::FrameFeatureStream s;
  s.channels = 1;
  s.frame_count = 300;
  s.data.assign(300, 0.0f);
  const auto sel = frame_window(s, {1.5, 11.5});  // records at 1.6667 ... 11.3333
  EXPECT_EQ(sel.first, 5u);
  EXPECT_EQ(sel.in_window, 30u);
}

TEST(LabelWindow, Examples) {
  EXPECT_EQ(classify(0.70, 0.60, 0.05), WindowClass::kHigh);
  EXPECT_EQ(classify(0.62, 0.60, 0.05), WindowClass::kAmbiguous);
  EXPECT_EQ(classify(0.54, 0.60, 0.05), WindowClass::kLow);
}

TEST(LabelWindow, PartitionIsExhaustiveAndExclusive) {
  Rng rng(77);
  for (int i = 0; i < 1000; ++i) {
    const double e = rng.uniform(), mu = rng.uniform(), eps = rng.uniform(0.0, 0.5);
    const auto c = classify(e, mu, eps);
    const bool high = e > mu + eps, low = e < mu - eps;
    EXPECT_FALSE(high && low);
    EXPECT_EQ(c == WindowClass::kHigh, high);
    EXPECT_EQ(c == WindowClass::kLow, low);
    EXPECT_EQ(c == WindowClass::kAmbiguous, !high && !low);
  }
}

TEST(LabelWindow, WindowMeanUsesGridSamples) {
  NormalizedTrace tr;
  tr.hz = 10.0;
  for (int k = 0; k <= 100; ++k) tr.v.push_back(k % 2);
  EXPECT_DOUBLE_EQ(window_mean(tr, {1.0, 2.0}), 0.5);
  EXPECT_DOUBLE_EQ(window_mean(tr, {0.05, 0.15}), 1.0);  // only sample 1
  EXPECT_THROW(window_mean(tr, {9.5, 10.5}), DataError);
  EXPECT_THROW(window_mean(tr, {-1.0, 1.0}), DataError);
}

TEST(TLevel, Boundaries) {
  EXPECT_EQ(t_level(0.0), 1);
  EXPECT_EQ(t_level(1199.999), 1);
  EXPECT_EQ(t_level(1200.0), 2);
  EXPECT_EQ(t_level(2399.9), 2);
  EXPECT_EQ(t_level(2400.0), 3);
  EXPECT_EQ(t_level(3599.0), 3);
}

TEST(BuildWindows, DeterministicAndLabelsConsistent) {
  const auto s = small_session(5);
  const WindowSpec spec;
  const auto a = build_windows(s, spec);
  const auto b = build_windows(s, spec);
  ASSERT_EQ(a.windows.size(), b.windows.size());
  EXPECT_EQ(a.segmented, expected_window_count(s.duration_s, spec));
  EXPECT_EQ(a.high + a.low + a.ambiguous, a.segmented);
  EXPECT_EQ(a.windows.size(), a.high + a.low);
  EXPECT_GT(a.high, 0u);
  EXPECT_GT(a.low, 0u);
  for (std::size_t i = 0; i < a.windows.size(); ++i) {
    const auto& w = a.windows[i];
    EXPECT_EQ(w.t_start, b.windows[i].t_start);
    EXPECT_EQ(w.gamepad, b.windows[i].gamepad);
    EXPECT_EQ(w.label, b.windows[i].label);
    EXPECT_EQ(w.e_mean, b.windows[i].e_mean);
    EXPECT_TRUE(w.pooled_frames == b.windows[i].pooled_frames);
    EXPECT_EQ(w.t_level, t_level(w.t_start));
    if (w.label == Label::kHigh) {
      EXPECT_GT(w.e_mean, a.mu + spec.epsilon);
    } else {
      EXPECT_LT(w.e_mean, a.mu - spec.epsilon);
    }
    EXPECT_EQ(w.pooled_frames.size(), 8);
  }
}

TEST(BuildWindows, AffineTraceTransformKeepsLabels) {
  const auto s = small_session(9);
  const WindowSpec spec;
  const auto base = build_windows(s, spec);
  Rng rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    auto t = s;
    const double a = std::exp(rng.uniform(-3.0, 3.0)), b = rng.uniform(-100.0, 100.0);
    for (double& v : t.trace.v) v = a * v + b;
    const auto other = build_windows(t, spec);
    ASSERT_EQ(other.windows.size(), base.windows.size());
    for (std::size_t i = 0; i < base.windows.size(); ++i) {
      EXPECT_EQ(other.windows[i].t_start, base.windows[i].t_start);
      EXPECT_EQ(other.windows[i].label, base.windows[i].label);
      EXPECT_NEAR(other.windows[i].e_mean, base.windows[i].e_mean, 1e-9);
    }
  }
}

TEST(BuildWindows, EpsilonZeroDropsNothingEpsilonHalfKeepsMinority) {
  for (std::uint64_t seed : {4, 5, 6, 7}) {
    const auto s = small_session(seed);
    WindowSpec spec;
    spec.epsilon = 0.0;
    const auto all = build_windows(s, spec);
    EXPECT_EQ(all.ambiguous, 0u);
    EXPECT_EQ(all.windows.size(), all.segmented);
    // Window means and mu lie in [0, 1], so a 0.5 band leaves at most one side.
    spec.epsilon = 0.5;
    const auto band = build_windows(s, spec);
    EXPECT_TRUE(band.high == 0 || band.low == 0);
    EXPECT_LT(2 * band.windows.size(), all.windows.size()) << "seed " << seed;
  }
}

TEST(PoolSelection, MapsEqualVectorsAfterSpatialMax) {
  Rng rng(8);
  corpus::FrameFeatureStream maps, vecs;
  maps.layout = corpus::FrameLayout::kMaps;
  maps.channels = vecs.channels = 3;
  maps.height = maps.width = 7;
  maps.frame_count = vecs.frame_count = 40;
  for (std::uint32_t f = 0; f < 40; ++f) {
    for (std::uint32_t c = 0; c < 3; ++c) {
      float hi = -1e30f;
      for (int k = 0; k < 49; ++k) {
        const auto v = static_cast<float>(rng.normal());
        maps.data.push_back(v);
        hi = std::max(hi, v);
      }
      vecs.data.push_back(hi);
    }
  }
  const auto sel = frame_window(maps, {2.0, 12.0});
  const auto a = pool_selection(maps, sel), b = pool_selection(vecs, sel);
  for (int c = 0; c < 3; ++c) EXPECT_EQ(a[c], b[c]);
}
