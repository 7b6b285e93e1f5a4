// SPDX-License-Identifier: Apache-2.0
#pragma once

// Sequence-level importance ratios rho = exp(l), l = L_new(x) - L_old(x), and
// the three clipping regimes. Everything is carried in log space; a raw
// ratio is only exponentiated where the estimator itself is unbounded.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace sdrl {

enum class ClipSpace { linear, log_symmetric, log_asymmetric };

const char* to_string(ClipSpace s);
ClipSpace parse_clip_space(const std::string& s);

struct ClipConfig {
    ClipSpace space = ClipSpace::log_symmetric;
    double epsilon = 5.0;     // linear: rho in [1-eps, 1+eps]; log: l <= eps nats
    double epsilon_low = 0.0; // log_asymmetric lower threshold in nats (l >= -epsilon_low); 0 = unbounded below

    /// Throws ConfigError for eps <= 0, or eps >= 1 in linear space.
    void validate() const;
    double log_lower() const;
    double log_upper() const;
    /// Largest clipped weight exp(log_upper()), i.e. the (1+eps) of the saturation bound.
    double upper_weight() const;
};

/// Conditional-clip multiplier: min(rho, 1+eps) for A >= 0, max(rho, 1-eps) for A < 0.
/// Throws ValidationError unless rho > 0.
double effective_multiplier_grpo(double rho, double advantage, double epsilon);
/// Same rule from a log-ratio under any clip space; the negative branch is exp(l), unbounded.
double effective_multiplier(double log_ratio, double advantage, const ClipConfig& clip);

/// Clamp rho into the clip interval. Linear space needs eps < 1 (ConfigError otherwise).
double clip_unconditional(double rho, double epsilon, ClipSpace space);
double clip_log(double log_ratio, const ClipConfig& clip);

struct LogRatioSet {
    std::vector<double> log_ratios;
    ClipConfig clip;

    std::size_t size() const { return log_ratios.size(); }
    /// Throws ValidationError for G < 2 or a non-finite entry.
    void validate() const;
};

struct ClippedWeightSet {
    std::vector<double> clipped_logs;
    std::vector<double> weights; // exp(clipped_logs)
    std::vector<double> alphas;  // softmax(clipped_logs)
};

ClippedWeightSet clip_then_softmax(const LogRatioSet& logs);

struct RatioStatistics {
    std::vector<double> ratios;
    double mean = 0.0;
    double variance = 0.0;
    double log_mean = 0.0;
    double log_variance = 0.0;
};

/// rho = exp(drift + eta) for each noise draw, with moments.
RatioStatistics decompose_ratio_statistics(double drift, std::span<const double> noise);

} // namespace sdrl
