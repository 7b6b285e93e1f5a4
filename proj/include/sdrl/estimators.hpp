// SPDX-License-Identifier: Apache-2.0
#pragma once

// Group-relative update estimators. With per-sample score vectors
// h_j = grad L(x_j) and advantages A_j the update is sum_j c_j A_j h_j:
//
//   pg         c_j = 1/G
//   grpo       c_j = m_j/G     (conditional clip, unbounded when A_j < 0)
//   uc_grpo    c_j = w_j/G     (w_j = clip(rho_j))
//   stabledrl  c_j = w_j / sum_k w_k
//
// Weights are constants with respect to the parameters.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sdrl/denoiser.hpp"
#include "sdrl/ratios.hpp"

namespace sdrl {

enum class Estimator { pg, grpo, uc_grpo, stabledrl };
const char* to_string(Estimator e);
Estimator parse_estimator(const std::string& s);

enum class AdvantageMode { standardized, raw_centered };
const char* to_string(AdvantageMode m);
AdvantageMode parse_advantage_mode(const std::string& s);

/// Throws ValidationError for fewer than two rewards.
std::vector<double> compute_advantages(std::span<const double> rewards, AdvantageMode mode);

struct RolloutGroup {
    TokenSequence prompt;
    std::vector<TokenSequence> rollouts;
    std::vector<double> rewards;
    std::vector<double> advantages;
    std::vector<double> elbo_new;
    std::vector<double> elbo_old;
    std::vector<std::uint8_t> stressed; // members on the exploding-weight protocol
    std::size_t inner_step = 0;

    std::size_t size() const { return rollouts.size(); }
    std::vector<double> log_ratios() const;
};

struct UpdateVector {
    std::vector<double> direction;
    double norm = 0.0;
    Estimator estimator = Estimator::pg;
    std::vector<double> per_sample_norms;  // |A_j| * ||h_j||
    std::vector<double> effective_weights; // 1, m_j, w_j or alpha_j
    std::vector<double> coefficients;      // c_j * A_j as applied to h_j

    bool finite() const;
};

/// Throws DimensionError when the inputs disagree in length.
UpdateVector group_update(std::span<const double> advantages, std::span<const double> log_ratios,
                          std::span<const std::span<const double>> score_vectors, Estimator estimator,
                          const ClipConfig& clip);

UpdateVector group_update(const RolloutGroup& group, std::span<const std::vector<double>> score_vectors,
                          Estimator estimator, const ClipConfig& clip);

/// Mean of per-group updates (several prompts per step); norms are recomputed.
UpdateVector average_updates(std::span<const UpdateVector> updates);

double euclidean_norm(std::span<const double> v);

} // namespace sdrl
