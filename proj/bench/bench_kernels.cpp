// SPDX-License-Identifier: Apache-2.0
// Serial reference vs OpenMP kernels, and staircase single pass vs the K-pass reference.
#include <benchmark/benchmark.h>

#include <random>

#include "sdrl/diffusion.hpp"
#include "sdrl/kernels.hpp"
#include "sdrl/rng.hpp"
#include "sdrl/staircase.hpp"

using namespace sdrl;
using kernels::Exec;

namespace {

std::vector<double> draw(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::normal_distribution<double> d(0.0, 1.0);
    std::vector<double> v(n);
    for (double& x : v) x = d(rng);
    return v;
}

Exec exec_arg(const benchmark::State& s) { return s.range(1) ? Exec::parallel : Exec::serial; }

void BM_matmul(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    auto a = draw(n * n, 1), b = draw(n * n, 2);
    std::vector<double> out(n * n);
    for (auto _ : state) {
        kernels::matmul(exec_arg(state), a, b, out, n, n, n);
        benchmark::DoNotOptimize(out.data());
    }
    state.SetLabel(state.range(1) ? "parallel" : "serial");
}

void BM_attention(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const std::size_t d = 32;
    auto q = draw(n * d, 3), k = draw(n * d, 4), v = draw(n * d, 5);
    auto mask = BinaryMask::causal(n);
    std::vector<double> out(n * d), probs(n * n);
    for (auto _ : state) {
        kernels::attention_forward(exec_arg(state), {n, n, d}, q, k, v, mask, out, probs);
        benchmark::DoNotOptimize(out.data());
    }
    state.SetLabel(state.range(1) ? "parallel" : "serial");
}

struct StairCase {
    DenoiserParams params;
    TokenSequence clean;
    CorruptedSequence target;
};

StairCase stair_case(std::size_t blocks) {
    DenoiserConfig c; // default toy model
    c.max_seq_len = 64;
    c.block_size = 64 / blocks;
    c.seed = 7;
    c.head_init_scale = 0.5;
    StairCase s{init_denoiser(c), {}, {}};
    Rng rng(11);
    for (int i = 0; i < 64; ++i) s.clean.tokens.push_back(static_cast<int>(rng() % 32));
    s.target = corrupt(s.clean, 0.5, MaskPolicy::uniform, 3, s.params.mask_token()).corrupted;
    return s;
}

void BM_staircase_single_pass(benchmark::State& state) {
    auto s = stair_case(static_cast<std::size_t>(state.range(0)));
    for (auto _ : state) benchmark::DoNotOptimize(staircase_block_logprobs(s.params, s.clean, s.target));
}

void BM_staircase_iterative(benchmark::State& state) {
    auto s = stair_case(static_cast<std::size_t>(state.range(0)));
    for (auto _ : state) benchmark::DoNotOptimize(iterative_reference(s.params, s.clean, s.target));
}

} // namespace

BENCHMARK(BM_matmul)->ArgsProduct({{32, 128, 256}, {0, 1}});
BENCHMARK(BM_attention)->ArgsProduct({{64, 256}, {0, 1}});
BENCHMARK(BM_staircase_single_pass)->Arg(4)->Arg(16);
BENCHMARK(BM_staircase_iterative)->Arg(4)->Arg(16);

BENCHMARK_MAIN();
