#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "memo/encoder.hpp"
#include "memo/geo.hpp"
#include "memo/synth.hpp"
#include "memo/temporal.hpp"
#include "memo/train.hpp"

namespace {

using namespace memo;

data::Dataset bench_dataset(std::size_t users) {
    synth::SynthConfig sc;
    sc.num_users = users;
    sc.events_per_user = 20;
    sc.seed = 3;
    return synth::generate(sc).dataset;
}

void BM_EncoderForward(benchmark::State& st) {
    const auto ds = bench_dataset(static_cast<std::size_t>(st.range(0)));
    const encoder::EncoderGraph graph(encoder::build_graphs(ds, ds.events));
    Rng rng(1);
    const auto params = encoder::EncoderParams::init({ds.num_users + ds.num_pois(), 3, 32, 1}, rng);
    for (auto _ : st) {
        auto out = encoder::encode(graph, params, {});
        benchmark::DoNotOptimize(out.fused.values().data());
    }
}
BENCHMARK(BM_EncoderForward)->Arg(100)->Arg(400)->Unit(benchmark::kMillisecond);

void BM_TBatchPlan(benchmark::State& st) {
    const auto ds = bench_dataset(static_cast<std::size_t>(st.range(0)));
    for (auto _ : st) {
        auto plan = temporal::plan_tbatches(ds.events);
        benchmark::DoNotOptimize(plan.batches.data());
    }
    st.SetItemsProcessed(static_cast<std::int64_t>(st.iterations() * ds.events.size()));
}
BENCHMARK(BM_TBatchPlan)->Arg(200)->Arg(2000);

void BM_Replay(benchmark::State& st) {
    const auto ds = bench_dataset(200);
    const auto plan = temporal::plan_tbatches(ds.events);
    const std::size_t d = static_cast<std::size_t>(st.range(0));
    Rng rng(2);
    const auto params = temporal::TemporalParams::init(d, 3600.0, 200.0, rng, temporal::RecurrentInit::Identity);
    std::vector<double> zeros((ds.num_users + ds.num_pois()) * d, 0.1);
    const ad::Tensor base = ad::Tensor::from({ds.num_users + ds.num_pois(), d}, zeros, false);
    for (auto _ : st) {
        temporal::DynamicState state(base, ds.num_users, ds.num_pois());
        temporal::replay(plan, ds.events, ds.pois, params, state, {});
        benchmark::DoNotOptimize(state.user(0).values().data());
    }
    st.SetItemsProcessed(static_cast<std::int64_t>(st.iterations() * ds.events.size()));
}
BENCHMARK(BM_Replay)->Arg(32)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_TopK(benchmark::State& st) {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> scores(static_cast<std::size_t>(st.range(0)));
    for (auto& x : scores) x = u(rng);
    for (auto _ : st) {
        auto top = train::top_k(scores, 10);
        benchmark::DoNotOptimize(top.data());
    }
}
BENCHMARK(BM_TopK)->Arg(50)->Arg(10'000)->Arg(1'000'000);

void BM_Haversine(benchmark::State& st) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> lat(-80.0, 80.0), lon(-180.0, 180.0);
    std::vector<geo::LatLon> pts(1024);
    for (auto& p : pts) p = {lat(rng), lon(rng)};
    std::size_t i = 0;
    for (auto _ : st) {
        benchmark::DoNotOptimize(geo::haversine_m(pts[i % 1024], pts[(i + 7) % 1024]));
        ++i;
    }
}
BENCHMARK(BM_Haversine);

}  // namespace

BENCHMARK_MAIN();
