#include <benchmark/benchmark.h>

#include <cmath>

#include "engage/models.hpp"
#include "engage/preprocess.hpp"
#include "engage/rng.hpp"
#include "engage/stats.hpp"
#include "engage/synth.hpp"

using namespace engage;

namespace {

models::Batch make_batch(std::size_t n, std::uint64_t seed, std::vector<int>& labels) {
  Rng rng(seed);
  models::Batch b;
  b.gamepad.resize(31, static_cast<Eigen::Index>(n));
  b.frames.resize(512, static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < b.gamepad.size(); ++i) b.gamepad.data()[i] = rng.uniform(0.0, 2.0);
  for (Eigen::Index i = 0; i < b.frames.size(); ++i) b.frames.data()[i] = rng.normal();
  labels.clear();
  for (std::size_t j = 0; j < n; ++j) {
    b.levels.push_back(1 + static_cast<int>(rng.below(3)));
    labels.push_back(static_cast<int>(rng.below(2)));
  }
  return b;
}

// Args: modality, strategy.
void BM_ForwardBackward(benchmark::State& state) {
  const auto modality = static_cast<models::Modality>(state.range(0));
  const auto strategy = static_cast<timecond::Strategy>(state.range(1));
  const auto net = models::build_model({modality, strategy, 1});
  std::vector<int> labels;
  const auto batch = make_batch(256, 2, labels);
  Rng rng(3);
  for (auto _ : state) {
    const auto cache = models::forward(net, batch, models::Mode::kTrain, &rng);
    auto g = models::backward(net, cache, labels);
    benchmark::DoNotOptimize(g.loss);
  }
  state.SetItemsProcessed(state.iterations() * 256);
  state.SetLabel(std::string(models::to_string(modality)) + "/" + std::string(timecond::report_label(strategy)));
}
BENCHMARK(BM_ForwardBackward)->ArgsProduct({{0, 1, 2}, {0, 1, 2, 3}})->Unit(benchmark::kMillisecond);

void BM_Predict(benchmark::State& state) {
  const auto net = models::build_model({models::Modality::kFusion, timecond::Strategy::kSsal, 1});
  std::vector<int> labels;
  const auto batch = make_batch(static_cast<std::size_t>(state.range(0)), 4, labels);
  for (auto _ : state) benchmark::DoNotOptimize(models::predict(net, batch).data());
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Predict)->Arg(1)->Arg(256)->Unit(benchmark::kMicrosecond);

void BM_BuildWindows(benchmark::State& state) {
  synth::SynthConfig cfg;
  cfg.n_participants = 1;
  cfg.duration_s = static_cast<double>(state.range(0));
  const auto session = synth::generate_session(cfg, 0).session;
  const preprocess::WindowSpec spec;
  for (auto _ : state) {
    const auto w = preprocess::build_windows(session, spec);
    benchmark::DoNotOptimize(w.windows.data());
  }
}
BENCHMARK(BM_BuildWindows)->Arg(600)->Arg(3600)->Unit(benchmark::kMillisecond);

void BM_Wilcoxon(benchmark::State& state) {
  Rng rng(5);
  std::vector<double> a, b;
  for (int i = 0; i < state.range(0); ++i) {
    a.push_back(rng.normal());
    b.push_back(std::round(4.0 * rng.normal()) / 4.0);
  }
  for (auto _ : state) benchmark::DoNotOptimize(stats::wilcoxon_signed_rank(a, b).p_value);
}
BENCHMARK(BM_Wilcoxon)->Arg(10)->Arg(25)->Arg(40)->Arg(200);

}  // namespace

BENCHMARK_MAIN();
