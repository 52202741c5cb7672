#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "amao/align.hpp"
#include "amao/corpus.hpp"
#include "amao/kernels.hpp"

using namespace amao;

namespace {

std::vector<double> random_vec(std::size_t n, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<double> v(n);
    for (auto& x : v)
        x = g(rng);
    return v;
}

// First convolution of the default CNN: 1 -> 8 channels on a 64x64 canvas.
const nn::ConvShape kConv{1, 8, 64, 64, 5};

template <bool Serial>
void BM_ConvForward(benchmark::State& state)
{
    const auto in = random_vec(kConv.cin * kConv.h * kConv.w, 1);
    const auto w = random_vec(kConv.cout * kConv.cin * kConv.k * kConv.k, 2);
    const auto b = random_vec(kConv.cout, 3);
    std::vector<double> out(kConv.cout * kConv.oh() * kConv.ow());
    for (auto _ : state) {
        if constexpr (Serial)
            nn::conv_forward_serial(kConv, in, w, b, out);
        else
            nn::conv_forward(kConv, in, w, b, out);
        benchmark::DoNotOptimize(out.data());
    }
}

template <bool Serial>
void BM_ConvBackward(benchmark::State& state)
{
    const auto in = random_vec(kConv.cin * kConv.h * kConv.w, 1);
    const auto w = random_vec(kConv.cout * kConv.cin * kConv.k * kConv.k, 2);
    const auto go = random_vec(kConv.cout * kConv.oh() * kConv.ow(), 3);
    std::vector<double> gi(in.size()), gw(w.size()), gb(kConv.cout);
    for (auto _ : state) {
        if constexpr (Serial)
            nn::conv_backward_serial(kConv, in, w, go, gi, gw, gb);
        else
            nn::conv_backward(kConv, in, w, go, gi, gw, gb);
        benchmark::DoNotOptimize(gi.data());
    }
}

align::AlignmentProblem problem()
{
    const auto corpus = synth_corpus(default_templates(), 1, 3, WidthPolicy::default_table());
    const auto prog = isa::program_from_bytes(corpus.back().bytes);
    std::mt19937_64 rng(5);
    Bytes target(prog.text.size() * 5 / 4 + 1);
    for (auto& b : target)
        b = static_cast<std::uint8_t>(rng());
    return align::make_problem(target, prog, isa::default_vocabulary(), align::Metric::pixel_l2);
}

template <bool Serial>
void BM_Align(benchmark::State& state)
{
    const auto p = problem();
    for (auto _ : state) {
        auto a = Serial ? align::align_serial(p) : align::align(p);
        benchmark::DoNotOptimize(a.trace.raw_cost);
    }
}

} // namespace

BENCHMARK(BM_ConvForward<true>)->Name("conv_forward/serial");
BENCHMARK(BM_ConvForward<false>)->Name("conv_forward/omp");
BENCHMARK(BM_ConvBackward<true>)->Name("conv_backward/serial");
BENCHMARK(BM_ConvBackward<false>)->Name("conv_backward/omp");
BENCHMARK(BM_Align<true>)->Name("align/serial");
BENCHMARK(BM_Align<false>)->Name("align/omp");

BENCHMARK_MAIN();
