#include <random>

#include <benchmark/benchmark.h>

#include "cldd/data.hpp"
#include "cldd/model.hpp"
#include "cldd/training.hpp"

namespace {

struct Setup {
    cldd::Dataset data;
    cldd::GraphOperators graph;
    cldd::ModelState state;
};

Setup make_setup(std::size_t patients) {
    cldd::SynthConfig sc;
    sc.patients = patients;
    sc.diseases = 500;
    sc.density = 0.02;
    auto data = cldd::temporal_split(cldd::synth_generate(sc).tables, 0.8);
    auto graph = cldd::GraphOperators::build(data.train);
    auto state = cldd::init_state(cldd::ModelConfig{}, data.num_diseases(), data.features);
    return {std::move(data), std::move(graph), std::move(state)};
}

void BM_ForwardEval(benchmark::State& state) {
    auto s = make_setup(static_cast<std::size_t>(state.range(0)));
    for (auto _ : state) benchmark::DoNotOptimize(cldd::forward(s.state, s.graph, false));
}

void BM_ForwardBackward(benchmark::State& state) {
    auto s = make_setup(static_cast<std::size_t>(state.range(0)));
    cldd::TripleSampler sampler(s.data.train);
    std::mt19937_64 rng(5);
    const auto batch = sampler.sample(rng, 1024);
    for (auto _ : state) {
        const auto out = cldd::forward(s.state, s.graph, true);
        benchmark::DoNotOptimize(cldd::backward(batch, out, s.state, s.graph, 1e-5));
    }
}

}  // namespace

BENCHMARK(BM_ForwardEval)->Arg(2000)->Arg(10000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ForwardBackward)->Arg(2000)->Arg(10000)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
