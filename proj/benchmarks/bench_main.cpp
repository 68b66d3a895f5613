#include <benchmark/benchmark.h>

#include <numeric>

#include "nacforge/checkpoint.hpp"
#include "nacforge/compress.hpp"
#include "nacforge/cost_model.hpp"
#include "nacforge/evo_search.hpp"
#include "nacforge/model.hpp"
#include "nacforge/tpe.hpp"
#include "nacforge/train.hpp"

using namespace nac;

namespace {

const char* const kModels[] = {"deepsets_tiny", "deepsets_large", "bragg_tiny"};

void BM_BopsModel(benchmark::State& state) {
    const auto arch = builtin_model(kModels[state.range(0)]);
    BopsOptions opt;
    opt.bits = {8, 8};
    for (auto _ : state) benchmark::DoNotOptimize(bops_model(arch, opt).total);
    state.SetLabel(kModels[state.range(0)]);
}
BENCHMARK(BM_BopsModel)->DenseRange(0, 2);

Dataset data_for(Task task, std::size_t n) {
    return task == Task::SetClassification ? make_dataset(gen_jets(n, 1, 1.0)) : make_dataset(gen_bragg(n, 1, 0.05));
}

void BM_Forward(benchmark::State& state) {
    const auto arch = builtin_model(kModels[state.range(0)]);
    const auto params = init_params(arch, 1);
    const Dataset d = data_for(arch.task, 256);
    std::vector<std::size_t> rows(d.n);
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    const Tensor x = batch_features(d, rows);
    for (auto _ : state) benchmark::DoNotOptimize(forward(arch, params, x));
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(d.n));
    state.SetLabel(kModels[state.range(0)]);
}
BENCHMARK(BM_Forward)->DenseRange(0, 2)->Unit(benchmark::kMicrosecond);

void BM_TrainEpoch(benchmark::State& state) {
    const auto arch = builtin_model(kModels[state.range(0)]);
    const Dataset d = data_for(arch.task, 1024);
    TrainConfig cfg;
    cfg.epochs = 1;
    for (auto _ : state) benchmark::DoNotOptimize(train(arch, init_params(arch, 1), d, cfg).loss_history);
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(d.n));
    state.SetLabel(kModels[state.range(0)]);
}
BENCHMARK(BM_TrainEpoch)->DenseRange(0, 2)->Unit(benchmark::kMillisecond);

void BM_NonDominatedSort(benchmark::State& state) {
    Rng rng(3);
    std::vector<Candidate> pop(static_cast<std::size_t>(state.range(0)));
    for (auto& c : pop) {
        c.error = rng.uniform();
        c.bops = rng.uniform();
    }
    for (auto _ : state) benchmark::DoNotOptimize(non_dominated_sort(pop));
}
BENCHMARK(BM_NonDominatedSort)->RangeMultiplier(4)->Range(16, 1024);

void BM_PruneStep(benchmark::State& state) {
    const auto arch = builtin_model("bragg_tiny");
    const auto fresh = init_params(arch, 1);
    for (auto _ : state) {
        state.PauseTiming();
        ParamStore p = fresh;
        state.ResumeTiming();
        benchmark::DoNotOptimize(prune_step(p, 0.2));
    }
}
BENCHMARK(BM_PruneStep)->Unit(benchmark::kMicrosecond);

void BM_TpeSuggest(benchmark::State& state) {
    const auto space = default_hyper_space();
    Rng rng(4);
    std::vector<TrialRecord> history;
    for (std::int64_t i = 0; i < state.range(0); ++i) {
        TrialRecord r;
        r.assignment = suggest(history, space, rng, TpeSettings{0.25, 1000, 24});
        r.score = rng.uniform();
        history.push_back(r);
    }
    for (auto _ : state) benchmark::DoNotOptimize(suggest(history, space, rng));
}
BENCHMARK(BM_TpeSuggest)->Arg(20)->Arg(100);

void BM_CheckpointRoundTrip(benchmark::State& state) {
    const auto arch = builtin_model("bragg_tiny");
    const Checkpoint ck{arch, init_params(arch, 1)};
    for (auto _ : state) benchmark::DoNotOptimize(decode_checkpoint(encode_checkpoint(ck)));
}
BENCHMARK(BM_CheckpointRoundTrip)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
