// SPDX-License-Identifier: Apache-2.0
#include "sdrl/staircase.hpp"

#include <string>

namespace sdrl {

AttentionMask build_staircase_mask(std::size_t n, std::size_t block_size) {
    if (n == 0 || block_size == 0 || n % block_size != 0)
        throw ValidationError("staircase mask: block size " + std::to_string(block_size) + " does not divide n = " +
                              std::to_string(n));
    AttentionMask m;
    m.n = n;
    m.block_size = block_size;
    m.num_blocks = n / block_size;
    m.bits = BinaryMask(2 * n, 2 * n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t bi = i / block_size;
        for (std::size_t j = 0; j < n; ++j) {
            const std::size_t bj = j / block_size;
            if (j <= i) m.bits(i, j) = 1;               // causal clean stream
            if (bj < bi) m.bits(n + i, j) = 1;          // staircase: strictly earlier clean blocks
            if (bj == bi) m.bits(n + i, n + j) = 1;     // intra-block target attention
        }
    }
    return m;
}

std::string render_mask(const AttentionMask& mask) {
    std::string out;
    const std::size_t size = 2 * mask.n;
    out.reserve(size * (size + 1));
    for (std::size_t i = 0; i < size; ++i) {
        for (std::size_t j = 0; j < size; ++j) out.push_back(mask.bits(i, j) ? '1' : '0');
        out.push_back('\n');
    }
    return out;
}

void validate_dual_stream(const DenoiserParams& params, const TokenSequence& clean, const CorruptedSequence& target) {
    if (clean.size() != target.size() || clean.prompt_len != target.prompt_len)
        throw ValidationError("dual stream: clean and corrupted sequences differ in layout");
    const std::size_t b = params.config.block_size;
    if (clean.size() == 0 || clean.size() % b != 0)
        throw ValidationError("dual stream: block size " + std::to_string(b) + " does not divide length " +
                              std::to_string(clean.size()));
    validate_sequence(params, clean.tokens, clean.prompt_len, false);
    validate_sequence(params, target.tokens, target.prompt_len, true);
}

DualStreamGraph build_staircase_graph(ad::Tape& tape, const ParamVars& pv, const DenoiserParams& params,
                                      const TokenSequence& clean, const CorruptedSequence& target,
                                      StreamPositions positions) {
    validate_dual_stream(params, clean, target);
    const std::size_t n = clean.size();
    if (positions == StreamPositions::offset && 2 * n > params.config.max_seq_len)
        throw ValidationError("dual stream: offset positions need max_seq_len >= 2n");
    auto mask = build_staircase_mask(n, params.config.block_size);

    std::vector<int> tokens(clean.tokens);
    tokens.insert(tokens.end(), target.tokens.begin(), target.tokens.end());
    std::vector<int> pos(2 * n);
    for (std::size_t i = 0; i < n; ++i) {
        pos[i] = static_cast<int>(i);
        pos[n + i] = static_cast<int>(positions == StreamPositions::shared ? i : n + i);
    }
    // A zero input leaf added to the embeddings receives exactly d(out)/d(embeddings).
    auto embedded = embed(pv, tokens, pos);
    auto x = tape.input(Tensor::zeros(2 * n, params.config.embed_dim));
    auto lp = forward_from_embeddings(pv, ad::add(embedded, x), std::make_shared<const BinaryMask>(std::move(mask.bits)));
    return DualStreamGraph{x, ad::slice_rows(lp, n, n)};
}

LogProbTable staircase_block_logprobs(const DenoiserParams& params, const TokenSequence& clean,
                                      const CorruptedSequence& target, StreamPositions positions) {
    ad::Tape tape;
    auto pv = register_params(tape, params);
    auto g = build_staircase_graph(tape, pv, params, clean, target, positions);
    return to_table(g.target_log_probs.value());
}

LogProbTable iterative_reference(const DenoiserParams& params, const TokenSequence& clean,
                                 const CorruptedSequence& target, StreamPositions positions) {
    validate_dual_stream(params, clean, target);
    const std::size_t n = clean.size(), b = params.config.block_size, k_blocks = n / b;
    if (positions == StreamPositions::offset && 2 * n > params.config.max_seq_len)
        throw ValidationError("dual stream: offset positions need max_seq_len >= 2n");
    LogProbTable out{n, params.num_classes(), std::vector<double>(n * params.num_classes(), 0.0)};
    const int mask_tok = params.mask_token();

    for (std::size_t k = 0; k < k_blocks; ++k) {
        // Length-n pass: clean blocks < k, corrupted block k, later blocks hidden.
        const std::size_t lo = k * b, hi = lo + b;
        std::vector<int> tokens(n, mask_tok), pos(n);
        for (std::size_t i = 0; i < n; ++i) {
            if (i < lo) tokens[i] = clean.tokens[i];
            else if (i < hi) tokens[i] = target.tokens[i];
            pos[i] = static_cast<int>(i);
            if (i >= lo && i < hi && positions == StreamPositions::offset) pos[i] = static_cast<int>(n + i);
        }
        auto mask = std::make_shared<BinaryMask>(n, n);
        for (std::size_t i = 0; i < lo; ++i)
            for (std::size_t j = 0; j <= i; ++j) (*mask)(i, j) = 1;
        for (std::size_t i = lo; i < hi; ++i) {
            for (std::size_t j = 0; j < lo; ++j) (*mask)(i, j) = 1;
            for (std::size_t j = lo; j < hi; ++j) (*mask)(i, j) = 1;
        }
        ad::Tape tape;
        auto pv = register_params(tape, params);
        auto lp = forward_log_probs(pv, tokens, pos, mask);
        const Tensor& t = lp.value();
        for (std::size_t i = lo; i < hi; ++i)
            for (std::size_t c = 0; c < out.cols; ++c) out.values[i * out.cols + c] = t(i, c);
    }
    return out;
}

} // namespace sdrl
