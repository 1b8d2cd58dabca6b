#include <benchmark/benchmark.h>

#include "depthforge/cues.hpp"
#include "depthforge/geometry.hpp"
#include "depthforge/qanet.hpp"
#include "depthforge/synth.hpp"

using namespace depthforge;

namespace {

SyntheticPair scene(int n, double outliers) {
  SceneSpec s;
  s.n_points = n;
  s.noise_px = 0.5;
  s.outlier_frac = outliers;
  s.seed = 3;
  return generate_scene(s, "bench");
}

CueVector cues_for(int n) { return extract_cues(reconstruct_pair(scene(n, 0.1).pair)); }

}  // namespace

static void BM_EstimateFundamental(benchmark::State& state) {
  const auto sp = scene(static_cast<int>(state.range(0)), 0.3);
  for (auto _ : state) benchmark::DoNotOptimize(estimate_fundamental(sp.pair.matches));
}
BENCHMARK(BM_EstimateFundamental)->Arg(100)->Arg(400)->Unit(benchmark::kMillisecond);

static void BM_SearchFocal(benchmark::State& state) {
  const auto sp = scene(static_cast<int>(state.range(0)), 0.0);
  const SfmConfig cfg;
  const auto fm = estimate_fundamental(sp.pair.matches, cfg);
  const auto grid = cfg.focal_grid(sp.pair.width, sp.pair.height);
  for (auto _ : state) benchmark::DoNotOptimize(search_focal(fm, sp.pair, grid, cfg));
}
BENCHMARK(BM_SearchFocal)->Arg(100)->Arg(400)->Unit(benchmark::kMillisecond);

static void BM_ReconstructPair(benchmark::State& state) {
  const auto sp = scene(200, 0.2);
  for (auto _ : state) benchmark::DoNotOptimize(reconstruct_pair(sp.pair));
}
BENCHMARK(BM_ReconstructPair)->Unit(benchmark::kMillisecond);

static void BM_Score(benchmark::State& state) {
  const CueVector cv = cues_for(static_cast<int>(state.range(0)));
  const QaModel m = init_model(QaArch{}, 1);
  for (auto _ : state) benchmark::DoNotOptimize(score(m, cv));
  state.SetItemsProcessed(state.iterations() * cv.n());
}
BENCHMARK(BM_Score)->Arg(50)->Arg(400);

static void BM_GradStep(benchmark::State& state) {
  std::vector<CueVector> cues;
  for (int k = 0; k < 8; ++k) {
    SceneSpec s;
    s.n_points = 200;
    s.noise_px = 0.2 * k;
    s.seed = static_cast<std::uint64_t>(k);
    cues.push_back(extract_cues(reconstruct_pair(generate_scene(s, "b").pair)));
  }
  std::vector<TrainPair> batch;
  for (int k = 0; k < 32; ++k) batch.push_back({&cues[k % 8], &cues[(k + 3) % 8], 0.1 * (k % 8), 0.1 * ((k + 3) % 8)});
  TrainState st{init_model(QaArch{}, 2), {}};
  const TrainConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(grad_step(st, batch, cfg));
}
BENCHMARK(BM_GradStep)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
