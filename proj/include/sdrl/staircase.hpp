// SPDX-License-Identifier: Apache-2.0
#pragma once

// Dual-stream block-diffusion evaluation. The input is [clean ; corrupted]
// (length 2n) and the mask
//
//     [ causal   0     ]
//     [ stair    intra ]
//
// lets target block k see clean blocks < k and its own corrupted block only.

#include <cstddef>
#include <memory>
#include <string>

#include "sdrl/denoiser.hpp"

namespace sdrl {

struct AttentionMask {
    std::size_t n = 0;
    std::size_t block_size = 0;
    std::size_t num_blocks = 0;
    BinaryMask bits; // 2n x 2n; rows [0, n) clean stream, rows [n, 2n) target stream

    std::uint8_t causal(std::size_t i, std::size_t j) const { return bits(i, j); }
    std::uint8_t top_right(std::size_t i, std::size_t j) const { return bits(i, n + j); }
    std::uint8_t stair(std::size_t i, std::size_t j) const { return bits(n + i, j); }
    std::uint8_t intra(std::size_t i, std::size_t j) const { return bits(n + i, n + j); }
};

/// Throws ValidationError unless block_size divides n (both positive).
AttentionMask build_staircase_mask(std::size_t n, std::size_t block_size);

/// Text grid of 0/1, one row per line.
std::string render_mask(const AttentionMask& mask);

/// Positional index assigned to target-stream token i.
enum class StreamPositions {
    shared, // reuse index i of the clean counterpart
    offset  // n + i
};

struct DualStreamGraph {
    ad::Var embeddings;         // 2n x d zero leaf added to the embeddings; its gradient is d(out)/d(embeddings)
    ad::Var target_log_probs;   // n x classes, read from the target stream
};

/// Builds the single-pass graph on `tape`. The embedding matrix is exposed as
/// a differentiable input so leakage can be checked by gradient.
DualStreamGraph build_staircase_graph(ad::Tape& tape, const ParamVars& params, const DenoiserParams& values,
                                      const TokenSequence& clean, const CorruptedSequence& target,
                                      StreamPositions positions = StreamPositions::shared);

/// Single-pass block log-probabilities; rows are sequence positions.
LogProbTable staircase_block_logprobs(const DenoiserParams& params, const TokenSequence& clean,
                                      const CorruptedSequence& target,
                                      StreamPositions positions = StreamPositions::shared);

/// K separate passes; pass k sees clean blocks < k plus corrupted block k.
LogProbTable iterative_reference(const DenoiserParams& params, const TokenSequence& clean,
                                 const CorruptedSequence& target,
                                 StreamPositions positions = StreamPositions::shared);

/// Validates matching lengths / prompts and the block grid.
void validate_dual_stream(const DenoiserParams& params, const TokenSequence& clean, const CorruptedSequence& target);

} // namespace sdrl
