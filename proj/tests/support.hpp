// SPDX-License-Identifier: Apache-2.0
#pragma once
// Shared helpers for the unit tests.
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "sdrl/autodiff.hpp"
#include "sdrl/denoiser.hpp"
#include "sdrl/rng.hpp"

namespace sdrl::test {

inline Tensor random_tensor(Rng& rng, std::size_t rows, std::size_t cols, double sd = 1.0) {
    std::normal_distribution<double> n(0.0, sd);
    Tensor t = Tensor::zeros(rows, cols);
    for (double& v : t.values) v = n(rng);
    return t;
}

// Relative error with the absolute fallback for tiny analytic values.
inline double fd_error(double analytic, double numeric) {
    if (std::abs(analytic) < 1e-8) return std::abs(analytic - numeric) < 1e-8 ? 0.0 : 1.0;
    return std::abs(analytic - numeric) / std::abs(analytic);
}

// Builds a scalar on a fresh tape from parameter leaves.
using ScalarGraph = std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>&)>;

inline double eval_scalar(const ScalarGraph& f, const std::vector<Tensor>& inputs) {
    ad::Tape tape;
    std::vector<ad::Var> vars;
    for (const auto& t : inputs) vars.push_back(tape.parameter(t));
    return f(tape, vars).value().values[0];
}

// Max per-coordinate error between reverse mode and central differences.
inline double max_fd_error(const ScalarGraph& f, std::vector<Tensor> inputs, double h = 1e-5) {
    ad::Tape tape;
    std::vector<ad::Var> vars;
    for (const auto& t : inputs) vars.push_back(tape.parameter(t));
    auto grads = tape.backward(f(tape, vars));
    double worst = 0.0;
    for (std::size_t k = 0; k < inputs.size(); ++k)
        for (std::size_t i = 0; i < inputs[k].size(); ++i) {
            const double keep = inputs[k].values[i];
            inputs[k].values[i] = keep + h;
            const double up = eval_scalar(f, inputs);
            inputs[k].values[i] = keep - h;
            const double dn = eval_scalar(f, inputs);
            inputs[k].values[i] = keep;
            worst = std::max(worst, fd_error(grads[k].values[i], (up - dn) / (2.0 * h)));
        }
    return worst;
}

inline DenoiserParams small_model(std::uint64_t seed, std::size_t vocab = 6, std::size_t dim = 8,
                                  std::size_t max_len = 8, std::size_t block = 2, double head = 0.7) {
    DenoiserConfig c;
    c.vocab_size = vocab;
    c.embed_dim = dim;
    c.max_seq_len = max_len;
    c.block_size = block;
    c.seed = seed;
    c.head_init_scale = head;
    return init_denoiser(c);
}

inline TokenSequence random_sequence(Rng& rng, std::size_t prompt, std::size_t response, std::size_t symbols) {
    TokenSequence x;
    x.prompt_len = prompt;
    for (std::size_t i = 0; i < prompt + response; ++i)
        x.tokens.push_back(static_cast<int>(rng() % symbols));
    return x;
}

} // namespace sdrl::test
