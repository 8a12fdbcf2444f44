#include <benchmark/benchmark.h>

#include "bench_common.hpp"
#include "refdx/confidence.hpp"

namespace {

using namespace refdx;

void BM_Perturb(benchmark::State& state) {
    std::mt19937_64 gen(1);
    const auto e = normalize(bench::gaussian(gen, static_cast<std::size_t>(state.range(0))));
    std::uint64_t key = 0;
    for (auto _ : state) benchmark::DoNotOptimize(perturb(e, 0.1, key++));
}
BENCHMARK(BM_Perturb)->Arg(64)->Arg(512);

// Ensemble construction (E perturbed copies of the library) dominates a cold
// confident diagnosis; per-query cost is E searches.
void BM_EnsembleBuild(benchmark::State& state) {
    const auto lib = bench::random_library(2'000, 128, 11, 2);
    const EnsembleSpec spec{static_cast<std::size_t>(state.range(0)), 0.1, 7};
    for (auto _ : state) benchmark::DoNotOptimize(DropoutEnsemble(lib, spec));
}
BENCHMARK(BM_EnsembleBuild)->Arg(10)->Arg(100)->Unit(benchmark::kMillisecond);

void BM_McPredict(benchmark::State& state) {
    const auto lib = bench::random_library(2'000, 128, 11, 2);
    const DropoutEnsemble ensemble(lib, EnsembleSpec{100, 0.1, 7});
    std::mt19937_64 gen(3);
    const auto q = normalize(bench::gaussian(gen, 128));
    const auto k = static_cast<std::size_t>(state.range(0));
    for (auto _ : state) benchmark::DoNotOptimize(mc_predict(q, ensemble, k));
}
BENCHMARK(BM_McPredict)->Arg(10)->Arg(30)->Unit(benchmark::kMillisecond);

void BM_Calibrate(benchmark::State& state) {
    std::mt19937_64 gen(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<ScoredPrediction> scored;
    for (std::int64_t i = 0; i < state.range(0); ++i) {
        const double s = u(gen);
        scored.push_back({s, u(gen) < s});
    }
    for (auto _ : state) benchmark::DoNotOptimize(calibrate_threshold(scored));
}
BENCHMARK(BM_Calibrate)->Arg(1'000)->Arg(10'000);

}  // namespace
