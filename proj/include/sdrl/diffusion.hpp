// SPDX-License-Identifier: Apache-2.0
#pragma once

// Forward masking process and Monte-Carlo ELBO estimates
//
//     L(x) ~ w(t) * sum_i 1[x_t^i = mask] log pi(x_0^i | x_t),   w(t) = 1/t

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sdrl/denoiser.hpp"
#include "sdrl/rng.hpp"

namespace sdrl {

enum class MaskPolicy { uniform, blockwise, head_biased, tail_biased };

const char* to_string(MaskPolicy p);
MaskPolicy parse_mask_policy(const std::string& s);

struct MaskPattern {
    double t = 1.0;
    std::vector<std::uint8_t> masked; // over the response region only
    MaskPolicy policy = MaskPolicy::uniform;
    double mc_weight = 1.0;

    std::size_t count() const;
    bool operator==(const MaskPattern&) const = default;
};

struct CorruptOptions {
    std::size_t block_size = 4; // decoding block grid for blockwise masking
    double beta = 6.0;          // position bias for head/tail policies
    std::size_t count = 0;      // head/tail: forced number of masked tokens (0 = round(t * L), at least 1)
};

/// Draws a mask over `response_len` positions. The uniform and blockwise
/// draws are conditioned on at least one masked unit.
MaskPattern sample_mask(std::size_t response_len, double t, MaskPolicy policy, Rng& rng,
                        const CorruptOptions& options = {});

/// Mask covering exactly [first, first + count) of the response.
MaskPattern span_mask(std::size_t response_len, std::size_t first, std::size_t count, double t);

CorruptedSequence apply_mask(const TokenSequence& clean, const MaskPattern& pattern, int mask_token);

struct Corruption {
    CorruptedSequence corrupted;
    MaskPattern pattern;
};

/// Throws ValidationError unless 0 < t <= 1 and the response is nonempty.
Corruption corrupt(const TokenSequence& clean, double t, MaskPolicy policy, std::uint64_t seed, int mask_token,
                   const CorruptOptions& options = {});

struct ElboOptions {
    std::size_t m = 2;
    MaskPolicy policy = MaskPolicy::uniform;
    double t_floor = 0.15; // noise level t ~ U[t_floor, 1]
    Arch arch = Arch::full;
    CorruptOptions corrupt;
    std::uint64_t offset = 0; // index of the first pattern stream
};

struct ElboEstimate {
    double value = 0.0;
    std::size_t num_samples = 0;
    std::vector<double> per_sample_values;
    std::vector<MaskPattern> patterns;
};

/// Pattern tau uses the stream derive_seed(seed, "elbo", {offset + tau}).
std::vector<MaskPattern> sample_patterns(std::size_t response_len, const ElboOptions& options, std::uint64_t seed);

/// Weighted masked log-likelihood of one pattern.
double pattern_value(const DenoiserParams& params, const TokenSequence& x, const MaskPattern& pattern, Arch arch);

ElboEstimate evaluate_patterns(const DenoiserParams& params, const TokenSequence& x, std::vector<MaskPattern> patterns,
                               Arch arch);

/// Throws ValidationError if x contains the mask token or m == 0.
ElboEstimate estimate_elbo(const DenoiserParams& params, const TokenSequence& x, const ElboOptions& options,
                           std::uint64_t seed);

enum class Coupling { shared_masks, independent };

std::pair<ElboEstimate, ElboEstimate> estimate_elbo_pairwise(const DenoiserParams& params_new,
                                                            const DenoiserParams& params_old, const TokenSequence& x,
                                                            const ElboOptions& options, std::uint64_t seed,
                                                            Coupling coupling);

/// Differentiable mean over `patterns` built on `tape`.
ad::Var elbo_graph(ad::Tape& tape, const ParamVars& pv, const DenoiserParams& params, const TokenSequence& x,
                   std::span<const MaskPattern> patterns, Arch arch);

/// Gradient of the pattern-mean ELBO, flattened in parameter order.
std::vector<double> elbo_gradient(const DenoiserParams& params, const TokenSequence& x,
                                  std::span<const MaskPattern> patterns, Arch arch, double* value = nullptr);

} // namespace sdrl
