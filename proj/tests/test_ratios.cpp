// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "sdrl/ratios.hpp"
#include "support.hpp"

using namespace sdrl;

namespace {
// min(rho A, clip(rho) A) / A, transcribed literally.
double grpo_transcribed(double rho, double a, double eps) {
    const double c = std::clamp(rho, 1.0 - eps, 1.0 + eps);
    return std::min(rho * a, c * a) / a;
}

std::vector<double> softmax(std::vector<double> x) {
    double mx = *std::max_element(x.begin(), x.end()), z = 0.0;
    for (double& v : x) z += (v = std::exp(v - mx));
    for (double& v : x) v /= z;
    return x;
}
} // namespace

TEST_CASE("conditional multiplier") {
    CHECK(effective_multiplier_grpo(1.0, 1.0, 0.2) == 1.0);
    CHECK(effective_multiplier_grpo(1.0, -1.0, 0.2) == 1.0);
    CHECK(effective_multiplier_grpo(2.0, 1.0, 0.2) == doctest::Approx(1.2).epsilon(1e-15));
    CHECK(effective_multiplier_grpo(2.0, -1.0, 0.2) == 2.0);
    CHECK(effective_multiplier_grpo(1e5, -1.0, 0.2) == 1e5);
    Rng rng(1);
    for (int i = 0; i < 10000; ++i) {
        const double rho = std::exp(8.0 * (uniform01(rng) - 0.5));
        const double a = (uniform01(rng) - 0.5) * 4.0;
        if (a == 0.0) continue;
        const double eps = 0.05 + 0.9 * uniform01(rng);
        CHECK(effective_multiplier_grpo(rho, a, eps) == doctest::Approx(grpo_transcribed(rho, a, eps)).epsilon(1e-14));
        ClipConfig lin{ClipSpace::linear, eps};
        CHECK(effective_multiplier(std::log(rho), a, lin) ==
              doctest::Approx(effective_multiplier_grpo(rho, a, eps)).epsilon(1e-12));
    }
    CHECK_THROWS_AS(effective_multiplier_grpo(0.0, 1.0, 0.2), ValidationError);
}

TEST_CASE("unconditional clip") {
    CHECK(clip_unconditional(1.1, 0.2, ClipSpace::linear) == 1.1);
    CHECK(clip_unconditional(3.0, 5.0, ClipSpace::log_symmetric) == 3.0);
    CHECK(clip_unconditional(1e5, 5.0, ClipSpace::log_symmetric) == doctest::Approx(148.4131591025766).epsilon(1e-12));
    CHECK(clip_unconditional(0.5, 0.2, ClipSpace::linear) == doctest::Approx(0.8).epsilon(1e-15));
    CHECK(clip_unconditional(1e-9, 5.0, ClipSpace::log_symmetric) == doctest::Approx(std::exp(-5.0)).epsilon(1e-12));
    CHECK_THROWS_AS(clip_unconditional(2.0, 1.0, ClipSpace::linear), ConfigError);
    CHECK_THROWS_AS(clip_unconditional(2.0, 5.0, ClipSpace::linear), ConfigError);
    ClipConfig asym{ClipSpace::log_asymmetric, 5.0, 2.0};
    CHECK(clip_log(10.0, asym) == 5.0);
    CHECK(clip_log(-10.0, asym) == -2.0);
    ClipConfig open{ClipSpace::log_asymmetric, 5.0, 0.0};
    CHECK(clip_log(-40.0, open) == -40.0);
}

TEST_CASE("clip-then-softmax examples") {
    LogRatioSet eq{{0.3, 0.3, 0.3, 0.3, 0.3}, {ClipSpace::log_symmetric, 5.0}};
    for (double a : clip_then_softmax(eq).alphas) CHECK(a == 0.2);

    LogRatioSet three{{2.0, 0.0, 0.0}, {ClipSpace::linear, 0.5}};
    auto w = clip_then_softmax(three);
    CHECK(w.weights[0] == doctest::Approx(1.5).epsilon(1e-15));
    CHECK(w.alphas[0] == doctest::Approx(3.0 / 7.0).epsilon(1e-14));
    CHECK(w.alphas[1] == doctest::Approx(2.0 / 7.0).epsilon(1e-14));
    CHECK(w.alphas[2] == doctest::Approx(2.0 / 7.0).epsilon(1e-14));

    LogRatioSet wild{{1e4, -1e4, 0.0}, {ClipSpace::log_symmetric, 5.0}};
    auto x = clip_then_softmax(wild);
    auto ref = softmax({5.0, -5.0, 0.0});
    double sum = 0.0;
    for (std::size_t j = 0; j < 3; ++j) {
        CHECK(std::isfinite(x.alphas[j]));
        CHECK(x.alphas[j] == doctest::Approx(ref[j]).epsilon(1e-14));
        sum += x.alphas[j];
    }
    CHECK(std::abs(sum - 1.0) <= 1e-12);

    CHECK_THROWS_AS(clip_then_softmax(LogRatioSet{{0.0}, {}}), ValidationError);
    CHECK_THROWS_AS(clip_then_softmax(LogRatioSet{{0.0, NAN}, {}}), ValidationError);
}

TEST_CASE("softmax properties on random groups") {
    Rng rng(2);
    for (int trial = 0; trial < 2000; ++trial) {
        const std::size_t g = 2 + rng() % 15;
        ClipConfig clip = trial % 2 ? ClipConfig{ClipSpace::linear, 0.2} : ClipConfig{ClipSpace::log_symmetric, 5.0};
        LogRatioSet s{std::vector<double>(g), clip};
        for (double& l : s.log_ratios) l = (uniform01(rng) - 0.5) * 2e6;
        auto w = clip_then_softmax(s);
        double sum = 0.0, wsum = 0.0;
        for (std::size_t j = 0; j < g; ++j) {
            CHECK(std::isfinite(w.alphas[j]));
            CHECK(w.alphas[j] >= 0.0);
            CHECK(w.weights[j] >= std::exp(clip.log_lower()) * (1 - 1e-15));
            CHECK(w.weights[j] <= clip.upper_weight() * (1 + 1e-15));
            sum += w.alphas[j];
            wsum += w.weights[j];
        }
        CHECK(std::abs(sum - 1.0) <= 1e-12);
        for (std::size_t j = 0; j < g; ++j) CHECK(std::abs(w.alphas[j] - w.weights[j] / wsum) <= 1e-12);

        // monotone in each entry
        const std::size_t k = rng() % g;
        auto up = s;
        up.log_ratios[k] = clip_log(s.log_ratios[k], clip) + 0.1 * uniform01(rng);
        CHECK(clip_then_softmax(up).alphas[k] >= w.alphas[k] - 1e-15);

        // shift after clipping
        LogRatioSet clipped{w.clipped_logs, ClipConfig{ClipSpace::log_symmetric, 1e9}};
        auto shifted = clipped;
        for (double& l : shifted.log_ratios) l += 3.7;
        auto a = clip_then_softmax(clipped), b = clip_then_softmax(shifted);
        for (std::size_t j = 0; j < g; ++j) CHECK(std::abs(a.alphas[j] - b.alphas[j]) <= 1e-12);
    }
}

TEST_CASE("ratio decomposition") {
    std::vector<double> zeros(100, 0.0);
    for (double r : decompose_ratio_statistics(0.0, zeros).ratios) CHECK(r == 1.0);

    Rng rng(3);
    std::normal_distribution<double> n(0.0, 0.5);
    std::vector<double> eta(100000);
    for (double& e : eta) e = n(rng);
    auto st = decompose_ratio_statistics(0.0, eta);
    const double se = std::sqrt(st.variance / static_cast<double>(eta.size()));
    CHECK(std::abs(st.mean - std::exp(0.125)) <= 3.0 * se);

    auto sh = decompose_ratio_statistics(1.25, eta);
    auto la = st.ratios, lb = sh.ratios;
    for (auto& v : la) v = std::log(v);
    for (auto& v : lb) v = std::log(v);
    std::sort(la.begin(), la.end());
    std::sort(lb.begin(), lb.end());
    for (std::size_t q : {1000u, 50000u, 99000u}) CHECK(lb[q] - la[q] == doctest::Approx(1.25).epsilon(1e-12));
}
