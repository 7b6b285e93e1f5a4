// SPDX-License-Identifier: Apache-2.0
#pragma once

// Toy masked denoiser: token + position embeddings, one masked self-attention
// layer with a residual, a tanh feed-forward with a residual, and a linear
// head over the non-mask vocabulary.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "sdrl/autodiff.hpp"
#include "sdrl/tensor.hpp"

namespace sdrl {

struct DenoiserConfig {
    std::size_t vocab_size = 33; // includes the mask token, which is always id vocab_size - 1
    std::size_t embed_dim = 32;
    std::size_t max_seq_len = 64;
    std::size_t block_size = 4;
    std::uint64_t seed = 0;
    double init_scale = 0.5;      // std of embeddings
    double head_init_scale = 0.0; // std of the output head; 0 gives a uniform initial policy
};

enum class ParamId : std::size_t { token_embed, pos_embed, wq, wk, wv, w_ff, b_ff, w_out, b_out, count };

struct DenoiserParams {
    DenoiserConfig config;
    std::vector<Tensor> tensors; // indexed by ParamId

    int mask_token() const { return static_cast<int>(config.vocab_size) - 1; }
    std::size_t num_classes() const { return config.vocab_size - 1; }
    std::size_t parameter_count() const;

    Tensor& operator[](ParamId id) { return tensors[static_cast<std::size_t>(id)]; }
    const Tensor& operator[](ParamId id) const { return tensors[static_cast<std::size_t>(id)]; }

    std::vector<double> flatten() const;
    void assign_flat(std::span<const double> flat);
};

const char* param_name(ParamId id);

/// Seeded initialization. Throws ValidationError if the configuration is
/// degenerate or exceeds the desk-scale budget of 10^5 parameters.
DenoiserParams init_denoiser(const DenoiserConfig& config);

struct TokenSequence {
    std::vector<int> tokens;
    std::size_t prompt_len = 0;

    std::size_t size() const { return tokens.size(); }
    std::size_t response_len() const { return tokens.size() - prompt_len; }
    bool operator==(const TokenSequence&) const = default;
};

/// A TokenSequence in which some response positions hold the mask token.
struct CorruptedSequence {
    std::vector<int> tokens;
    std::size_t prompt_len = 0;

    std::size_t size() const { return tokens.size(); }
};

/// Checks ids < vocab_size, no mask token in the prompt, and (when
/// `allow_mask` is false) none anywhere.
void validate_sequence(const DenoiserParams& params, std::span<const int> tokens, std::size_t prompt_len,
                       bool allow_mask);

/// Parameter leaves registered on a tape.
struct ParamVars {
    std::vector<ad::Var> vars;
    ad::Var operator[](ParamId id) const { return vars[static_cast<std::size_t>(id)]; }
};
ParamVars register_params(ad::Tape& tape, const DenoiserParams& params);

/// Embeds tokens at positions (token + position table rows).
ad::Var embed(const ParamVars& p, std::span<const int> tokens, std::span<const int> positions);

/// Network body from input embeddings to per-row log-probabilities.
ad::Var forward_from_embeddings(const ParamVars& p, ad::Var embeddings, std::shared_ptr<const BinaryMask> mask);

/// Full graph: tokens -> log-probabilities (rows x num_classes).
ad::Var forward_log_probs(const ParamVars& p, std::span<const int> tokens, std::span<const int> positions,
                          std::shared_ptr<const BinaryMask> mask);

LogProbTable to_table(const Tensor& log_probs);

/// Full-attention log-probability table for a corrupted sequence.
LogProbTable token_log_probs(const DenoiserParams& params, const CorruptedSequence& corrupted);

enum class Arch { full, block };

struct DecodeOptions {
    std::size_t gen_len = 8;
    std::size_t block_size = 4;
    std::size_t steps_per_block = 4;
    double temperature = 1.0;
    Arch arch = Arch::full;
};

/// Confidence-based semi-autoregressive decoding. Blocks are filled left to
/// right; each step samples every still-masked position of the current block
/// from the tempered distribution and commits the ceil(B / steps) positions
/// whose tempered max-probability is highest.
TokenSequence sample_rollout(const DenoiserParams& params, const TokenSequence& prompt, const DecodeOptions& options,
                             std::uint64_t seed);

} // namespace sdrl
