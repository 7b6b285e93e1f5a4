// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "sdrl/denoiser.hpp"
#include "sdrl/rng.hpp"

namespace sdrl {

namespace {

// Attention for decoding block [lo, hi): the committed prefix is causal,
// the current block sees the prefix and itself, later positions are hidden.
std::shared_ptr<const BinaryMask> decode_mask(std::size_t n, std::size_t lo, std::size_t hi, Arch arch) {
    if (arch == Arch::full) return std::make_shared<const BinaryMask>(BinaryMask::ones(n));
    auto m = std::make_shared<BinaryMask>(n, n);
    for (std::size_t i = 0; i < lo; ++i)
        for (std::size_t j = 0; j <= i; ++j) (*m)(i, j) = 1;
    for (std::size_t i = lo; i < hi; ++i)
        for (std::size_t j = 0; j < hi; ++j) (*m)(i, j) = 1;
    return m;
}

} // namespace

TokenSequence sample_rollout(const DenoiserParams& params, const TokenSequence& prompt, const DecodeOptions& opt,
                             std::uint64_t seed) {
    if (!(opt.temperature > 0.0)) throw ValidationError("sample_rollout: temperature must be > 0");
    if (opt.block_size == 0 || opt.gen_len % opt.block_size != 0)
        throw ValidationError("sample_rollout: gen_len " + std::to_string(opt.gen_len) +
                              " is not divisible by block_size " + std::to_string(opt.block_size));
    if (opt.steps_per_block == 0) throw ValidationError("sample_rollout: steps_per_block must be >= 1");

    const std::size_t p = prompt.tokens.size(), n = p + opt.gen_len;
    const int mask = params.mask_token();
    std::vector<int> tokens(prompt.tokens);
    tokens.resize(n, mask);
    validate_sequence(params, tokens, p, true);

    std::vector<int> positions(n);
    std::iota(positions.begin(), positions.end(), 0);
    const std::size_t per_step = (opt.block_size + opt.steps_per_block - 1) / opt.steps_per_block;
    const std::size_t classes = params.num_classes();
    Rng rng(derive_seed(seed, "rollout"));

    struct Candidate {
        std::size_t pos;
        int token;
        double confidence;
    };
    std::vector<double> probs(classes);

    for (std::size_t lo = p; lo < n; lo += opt.block_size) {
        const std::size_t hi = lo + opt.block_size;
        auto mask_bits = decode_mask(n, lo, hi, opt.arch);
        std::size_t remaining = opt.block_size;
        while (remaining > 0) {
            ad::Tape tape;
            auto pv = register_params(tape, params);
            const Tensor& lp = forward_log_probs(pv, tokens, positions, mask_bits).value();

            std::vector<Candidate> cands;
            for (std::size_t i = lo; i < hi; ++i) {
                if (tokens[i] != mask) continue;
                double top = -std::numeric_limits<double>::infinity();
                for (std::size_t c = 0; c < classes; ++c) top = std::max(top, lp(i, c) / opt.temperature);
                double z = 0.0;
                for (std::size_t c = 0; c < classes; ++c) {
                    probs[c] = std::exp(lp(i, c) / opt.temperature - top);
                    z += probs[c];
                }
                double u = uniform01(rng) * z, acc = 0.0;
                std::size_t pick = classes - 1;
                for (std::size_t c = 0; c < classes; ++c) {
                    acc += probs[c];
                    if (u < acc) {
                        pick = c;
                        break;
                    }
                }
                cands.push_back({i, static_cast<int>(pick), 1.0 / z}); // tempered max-probability
            }
            std::stable_sort(cands.begin(), cands.end(),
                             [](const Candidate& a, const Candidate& b) { return a.confidence > b.confidence; });
            const std::size_t take = std::min(per_step, cands.size());
            for (std::size_t k = 0; k < take; ++k) tokens[cands[k].pos] = cands[k].token;
            remaining -= take;
        }
    }
    return TokenSequence{std::move(tokens), p};
}

} // namespace sdrl
