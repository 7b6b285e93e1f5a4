// SPDX-License-Identifier: Apache-2.0
#pragma once

// Drift state, relative spike detection, tail envelopes for the log-ratio
// noise, Monte-Carlo checks of the ratio-exceedance and dominance lemmas, and
// the exploding-weight stress protocol.

#include <cstddef>
#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sdrl/diffusion.hpp"
#include "sdrl/estimators.hpp"
#include "sdrl/rng.hpp"

namespace sdrl {

// ---- relative gradient spikes ----

struct SpikeResult {
    bool spike = false;
    bool warm_up = false;
    double threshold = 0.0; // (1 + delta) * mean(last W); NaN during warm-up
};

/// spike iff current > (1 + delta) * mean of the last `window` entries of history.
SpikeResult spike_indicator(std::span<const double> history, double current, std::size_t window, double delta);

/// Rolling form used during training; only accepted steps enter the window.
class SpikeTracker {
public:
    SpikeTracker(std::size_t window = 50, double delta = 0.3) : window_(window), delta_(delta) {}
    /// Classifies `norm`; it enters the window only when `record` is set.
    SpikeResult observe(double norm, bool record = true);

private:
    std::size_t window_;
    double delta_;
    std::deque<double> recent_;
};

/// Indicator for every element of a norm series (warm-up entries are false).
std::vector<SpikeResult> spike_series(std::span<const double> norms, std::size_t window, double delta);

// ---- tail envelopes ----

enum class NoiseFamily { gaussian, laplace, student_t };
const char* to_string(NoiseFamily f);

struct TailEnvelope {
    NoiseFamily family = NoiseFamily::gaussian;
    double scale = 1.0;
    double nu = 4.0; // student_t degrees of freedom

    /// P(eta >= z).
    double survival(double z) const;
    double sample(Rng& rng) const;
    std::string describe() const;
};

/// Pointwise minimum of the component survival functions.
double envelope_lower(std::span<const TailEnvelope> components, double z);

struct ExceedanceReport {
    double empirical = 0.0;
    double analytic = 0.0;
    double std_error = 0.0;
    double z_score = 0.0;
    std::size_t trials = 0;
};

/// Draws eta, forms rho = exp(drift + eta) and compares P(rho >= u) with
/// survival(log u - drift). Throws ValidationError for u <= 0 or trials < 10^4.
ExceedanceReport verify_exceedance_identity(const TailEnvelope& envelope, double drift, double u, std::size_t trials,
                                            std::uint64_t seed);

// ---- dominance of the drift-maximizer ----

enum class ResidualLaw { zero, exponential, constant };

struct DominanceConfig {
    std::size_t group_size = 8;
    std::size_t dim = 16;
    double bound_b = 1.0;  // ||A_j h_j|| of residual samples
    double moment_w = 1.0; // E[sum of residual multipliers]
    double a0 = 0.5;
    double b0 = 1.0;
    double drift = 0.0; // drift of the maximizer
    ResidualLaw residual = ResidualLaw::exponential;
    std::size_t trials = 100000;
    std::uint64_t seed = 0;
};

struct DominanceRow {
    double u = 0.0;
    std::size_t conditioned = 0;
    double probability = 0.0; // P(||r|| <= lambda u a0 b0 / G | rho >= u)
    double std_error = 0.0;
    double markov_bound = 0.0; // 1 - W/t, clamped at 0
    bool in_regime = false;    // u >= u0
    bool holds = true;         // probability >= 1/2 - 3 se (only meaningful in regime)
};

struct DominanceReport {
    double u0 = 0.0;
    std::vector<DominanceRow> rows;
};

/// u0 = 2 B W / (lambda a0 b0); lambda = 0 gives ConfigError.
double dominance_threshold(const DominanceConfig& config, double lambda);

DominanceReport verify_dominance_lemma(const TailEnvelope& envelope, const DominanceConfig& config, double lambda,
                                       std::span<const double> u_grid);

// ---- spike-probability lower bound ----

struct SpikeBoundInputs {
    std::size_t group_size = 8;
    double spike_h = 1.0;
    double lambda = 0.5;
    double a0 = 0.5;
    double b0 = 1.0;
    double bound_b = 1.0;
    double moment_w = 1.0;
    double clip_upper = 1.2; // 1 + eps
};

double spike_threshold_u(const SpikeBoundInputs& in);
/// 1/2 * survival(log u_H - D).
double spike_probability_lower_bound(const TailEnvelope& envelope, double drift_state, const SpikeBoundInputs& in);

struct SpikeSimulation {
    double bound = 0.0;
    double empirical = 0.0;
    double std_error = 0.0;
    std::size_t trials = 0;
};

/// Simulates GRPO groups that satisfy the lemma conditions by construction and
/// estimates P(||g_grpo|| >= H) next to the analytic lower bound.
SpikeSimulation simulate_spike_probability(const TailEnvelope& envelope, double drift_state, const SpikeBoundInputs& in,
                                           std::size_t dim, std::size_t trials, std::uint64_t seed);

// ---- stress protocol ----

enum class StressPolicy { block, random };
const char* to_string(StressPolicy p);
StressPolicy parse_stress_policy(const std::string& s);

struct StressConfig {
    double gamma = 0.7;
    double beta = 6.0;
    std::size_t t_min = 1;
    std::size_t t_max = 0; // 0 = whole response
    StressPolicy policy = StressPolicy::random;

    /// Throws ConfigError unless 0 <= gamma <= 1, beta >= 0 and t_min <= t_max.
    void validate() const;
};

/// ceil(gamma * G) distinct indices chosen from the seed; flags per member.
std::vector<std::uint8_t> select_stressed(std::size_t group_size, double gamma, std::uint64_t seed);

enum class StressRole { numerator, denominator };

/// Mask patterns for one stressed sample: easy (tail / last block, t_min
/// tokens) for the numerator, hard (head / first block, t_max tokens) for the
/// denominator. Each pattern keeps the 1/t weight of a regular noise draw.
std::vector<MaskPattern> stressed_patterns(std::size_t response_len, StressRole role, const StressConfig& stress,
                                           const ElboOptions& options, std::uint64_t seed);

struct ElboPairs {
    std::vector<double> elbo_new;
    std::vector<double> elbo_old;
    std::vector<std::uint8_t> stressed;
};

/// Pairwise ELBOs for every rollout; stressed members use the biased patterns,
/// the rest the regular `coupling` estimate.
ElboPairs stress_weights(const DenoiserParams& params_new, const DenoiserParams& params_old,
                         std::span<const TokenSequence> rollouts, const StressConfig& stress,
                         const ElboOptions& options, Coupling coupling, std::uint64_t seed);

// ---- drift state ----

struct DriftState {
    bool present = false;
    double d = 0.0;
    double s = 0.0;
    std::size_t argmax = 0;
    std::vector<double> deltas; // per member; NaN outside the negative set
};

/// D = max and S = max - min of L_new - L_old over {j : A_j <= -a0}, using
/// shared-mask estimates with `options.m` patterns (m >= 64 recommended).
DriftState measure_drift_state(std::span<const TokenSequence> rollouts, std::span<const double> advantages,
                               const DenoiserParams& params_new, const DenoiserParams& params_old, double a0,
                               const ElboOptions& options, std::uint64_t seed);

} // namespace sdrl
