#include <benchmark/benchmark.h>
#include <omp.h>

#include "cotsm/meta/cot_task.hpp"
#include "cotsm/models/vision_encoder.hpp"
#include "cotsm/numerics/kernels.hpp"

using namespace cotsm;

namespace {

Tensor random(std::size_t rows, std::size_t cols, Rng& rng) {
    Tensor t = Tensor::zeros(rows, cols);
    for (auto& v : t.data()) v = rng.uniform(-1.0, 1.0);
    return t;
}

using Gemm = void (*)(std::span<const double>, std::span<const double>, std::span<double>, std::size_t, std::size_t,
                      std::size_t);

void run_gemm(benchmark::State& state, Gemm gemm) {
    const auto n = static_cast<std::size_t>(state.range(0));
    Rng rng(1);
    const Tensor a = random(n, n, rng), b = random(n, n, rng);
    Tensor c = Tensor::zeros(n, n);
    for (auto _ : state) {
        gemm(a.data(), b.data(), c.data(), n, n, n);
        benchmark::DoNotOptimize(c.data().data());
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n * n * n));
}

void BM_GemmReference(benchmark::State& s) { run_gemm(s, kernels::reference::gemm); }
void BM_GemmSerial(benchmark::State& s) { run_gemm(s, kernels::gemm_serial); }
void BM_GemmParallel(benchmark::State& s) { run_gemm(s, kernels::gemm_parallel); }
BENCHMARK(BM_GemmReference)->Arg(64)->Arg(256)->Arg(512);
BENCHMARK(BM_GemmSerial)->Arg(64)->Arg(256)->Arg(512);
BENCHMARK(BM_GemmParallel)->Arg(64)->Arg(256)->Arg(512);

void run_softmax(benchmark::State& state, void (*softmax)(std::span<const double>, std::span<double>, std::size_t,
                                                          std::size_t)) {
    const auto n = static_cast<std::size_t>(state.range(0));
    Rng rng(2);
    const Tensor x = random(n, n, rng);
    Tensor y = Tensor::zeros(n, n);
    for (auto _ : state) {
        softmax(x.data(), y.data(), n, n);
        benchmark::DoNotOptimize(y.data().data());
    }
}
void BM_SoftmaxSerial(benchmark::State& s) { run_softmax(s, kernels::softmax_rows_serial); }
void BM_SoftmaxParallel(benchmark::State& s) { run_softmax(s, kernels::softmax_rows_parallel); }
BENCHMARK(BM_SoftmaxSerial)->Arg(256)->Arg(1024);
BENCHMARK(BM_SoftmaxParallel)->Arg(256)->Arg(1024);

// One outer step of 32 episodes on a small captioning world; the argument is the worker count.
struct World {
    world::Grammar grammar;
    models::Tokenizer tokenizer;
    world::Dataset train;
    std::optional<models::TinyLM> lm;
    std::optional<meta::CotObjective> objective;

    World() {
        Rng root(5);
        Rng wr = root.stream("world");
        grammar = world::build_grammar({}, wr);
        tokenizer = models::Tokenizer::from_grammar(grammar);
        const auto codes = models::semantic_codes(tokenizer, grammar, 16, 5);
        Rng vr = root.stream("vision");
        const models::VisionEncoder vision(tokenizer, grammar, codes, {}, vr);
        Rng sr = root.stream("split");
        const auto split = world::make_split(20, 5, sr);
        Rng dr = root.stream("data");
        train = world::make_dataset(grammar, split, {}, [&](const world::Scene& s) { return vision.encode(s); }, dr).first;
        models::LmConfig lc;
        lc.vocab = tokenizer.size();
        Rng lr = root.stream("lm");
        lm.emplace(lc, codes, lr);
        lm->freeze();
        objective.emplace(*lm, tokenizer, adaptor::AdaptorConfig{}, train);
    }
};

void BM_OuterStep(benchmark::State& state) {
    static const World w;
    meta::MetaConfig config;
    config.workers = static_cast<std::size_t>(state.range(0));
    Rng rng(6);
    const auto init = meta::init_meta_state(w.objective->slots(), config, rng);
    std::vector<meta::Episode> batch;
    for (std::size_t b = 0; b < config.batch; ++b) batch.push_back(meta::sample_episode(w.train, {}, rng));
    for (auto _ : state) benchmark::DoNotOptimize(meta::outer_step(init, *w.objective, batch));
}
BENCHMARK(BM_OuterStep)->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond)->UseRealTime();

}  // namespace

BENCHMARK_MAIN();
