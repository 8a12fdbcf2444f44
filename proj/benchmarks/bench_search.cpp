#include <benchmark/benchmark.h>

#include "bench_common.hpp"
#include "refdx/diagnosis.hpp"
#include "refdx/index.hpp"

namespace {

using namespace refdx;

// Args: rows, dim, int8 prefilter (0/1), threads.
void BM_Search(benchmark::State& state) {
    const auto rows = static_cast<std::size_t>(state.range(0));
    const auto dim = static_cast<std::size_t>(state.range(1));
    const IndexOptions opts{state.range(2) ? 1 : rows + 1};
    const SearchOptions search{static_cast<std::size_t>(state.range(3))};
    const auto index = VectorIndex::build(bench::random_library(rows, dim, 11, 1), opts);
    std::mt19937_64 gen(2);
    std::vector<Embedding> queries;
    for (int i = 0; i < 16; ++i) queries.push_back(normalize(bench::gaussian(gen, dim)));
    std::size_t i = 0;
    for (auto _ : state) benchmark::DoNotOptimize(index.search(queries[i++ % queries.size()], 10, search));
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * rows));
    state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations() * rows * dim * (state.range(2) ? 1 : 4)));
}
BENCHMARK(BM_Search)
    ->ArgNames({"rows", "dim", "int8", "threads"})
    ->Args({10'000, 512, 0, 1})
    ->Args({10'000, 512, 1, 1})
    ->Args({100'000, 512, 0, 1})
    ->Args({100'000, 512, 1, 1})
    ->Args({100'000, 512, 1, 4})
    ->Unit(benchmark::kMillisecond);

void BM_Predict(benchmark::State& state) {
    const auto k = static_cast<std::size_t>(state.range(0));
    const auto index = VectorIndex::build(bench::random_library(20'000, 512, 11, 3));
    std::mt19937_64 gen(4);
    const auto q = normalize(bench::gaussian(gen, 512));
    for (auto _ : state) benchmark::DoNotOptimize(predict(q, index, k, 5));
}
BENCHMARK(BM_Predict)->Arg(10)->Arg(30)->Arg(50)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
