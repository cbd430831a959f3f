#include <random>

#include <benchmark/benchmark.h>

#include "cldd/data.hpp"
#include "cldd/graph.hpp"

namespace {

struct Operator {
    cldd::NormalizedLaplacian lap;
    cldd::Matrix x;
};

Operator make_operator(std::size_t patients, std::size_t diseases, std::size_t width) {
    cldd::SynthConfig sc;
    sc.patients = patients;
    sc.diseases = diseases;
    sc.density = 0.02;
    const auto data = cldd::synth_generate(sc);
    const auto ds = cldd::temporal_split(data.tables, 0.8);
    Operator op{cldd::normalize(cldd::build_adjacency(ds.train), patients), {}};
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n;
    op.x = cldd::Matrix(op.lap.matrix.rows(), width);
    for (double& v : op.x.values()) v = n(rng);
    return op;
}

void BM_Spmm(benchmark::State& state) {
    const auto op = make_operator(static_cast<std::size_t>(state.range(0)), 500, 64);
    const auto threads = static_cast<unsigned>(state.range(1));
    for (auto _ : state) benchmark::DoNotOptimize(cldd::spmm(op.lap.matrix, op.x, threads));
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(op.lap.matrix.nnz()) * 64);
}

}  // namespace

BENCHMARK(BM_Spmm)->ArgsProduct({{2000, 20000}, {1, 2, 4}})->UseRealTime()->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
