// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <numeric>

#include "sdrl/staircase.hpp"
#include "support.hpp"

using namespace sdrl;
using test::random_sequence;
using test::small_model;

namespace {
CorruptedSequence mask_some(const TokenSequence& x, int mask_token, std::initializer_list<std::size_t> at) {
    CorruptedSequence c{x.tokens, x.prompt_len};
    for (auto i : at) c.tokens[i] = mask_token;
    return c;
}
} // namespace

TEST_CASE("zero output head gives uniform rows") {
    auto p = small_model(1, 9, 8, 8, 2, 0.0);
    Rng rng(1);
    auto x = random_sequence(rng, 3, 5, 8);
    auto lp = token_log_probs(p, mask_some(x, p.mask_token(), {4, 6}));
    for (double v : lp.values) CHECK(v == doctest::Approx(std::log(1.0 / 8.0)).epsilon(1e-14));
}

TEST_CASE("rows are normalized and replay is bit-exact") {
    for (std::uint64_t s = 0; s < 20; ++s) {
        auto p = small_model(s, 7, 8, 10, 2, 2.0);
        Rng rng(s);
        auto x = random_sequence(rng, 2, 8, 6);
        auto c = mask_some(x, p.mask_token(), {2, 5, 9});
        auto lp = token_log_probs(p, c);
        for (std::size_t i = 0; i < lp.rows; ++i) {
            double z = 0.0;
            for (std::size_t j = 0; j < lp.cols; ++j) z += std::exp(lp(i, j));
            CHECK(std::abs(z - 1.0) <= 1e-12);
        }
        ad::Tape tape;
        auto pv = register_params(tape, p);
        std::vector<int> pos(c.size());
        std::iota(pos.begin(), pos.end(), 0);
        auto out = forward_log_probs(pv, c.tokens, pos, std::make_shared<const BinaryMask>(BinaryMask::ones(c.size())));
        const auto first = out.value().values;
        tape.replay();
        CHECK(out.value().values == first);
        CHECK(first == lp.values);
    }
}

TEST_CASE("parameter budget and sequence validation") {
    auto p = small_model(2);
    CHECK(p.parameter_count() < 100000);
    CHECK(p.flatten().size() == p.parameter_count());
    DenoiserConfig big;
    big.embed_dim = 512;
    CHECK_THROWS_AS(init_denoiser(big), ValidationError);
    CHECK(init_denoiser(DenoiserConfig{}).parameter_count() < 100000);

    Rng rng(3);
    auto x = random_sequence(rng, 4, 6, 5); // longer than max_seq_len 8
    CHECK_THROWS_AS(token_log_probs(p, mask_some(x, p.mask_token(), {5})), ValidationError);
    TokenSequence bad{{0, 99, 1}, 1};
    CHECK_THROWS_AS(validate_sequence(p, bad.tokens, 1, true), ValidationError);
    TokenSequence masked_prompt{{p.mask_token(), 1, 1}, 1};
    CHECK_THROWS_AS(validate_sequence(p, masked_prompt.tokens, 1, true), ValidationError);
}

TEST_CASE("rollout decoding") {
    auto p = small_model(4, 7, 12, 12, 2, 3.0);
    TokenSequence prompt{{1, 0, 3, 2}, 4};
    DecodeOptions o;
    o.gen_len = 8;
    o.block_size = 4;

    SUBCASE("greedy one-token-at-a-time matches left-to-right argmax decoding") {
        o.steps_per_block = 4;
        o.temperature = 1e-9;
        auto a = sample_rollout(p, prompt, o, 1);
        CHECK(a == sample_rollout(p, prompt, o, 99));
        std::vector<int> tok(prompt.tokens);
        tok.resize(12, p.mask_token());
        for (std::size_t lo = 4; lo < 12; lo += 4)
            for (int step = 0; step < 4; ++step) {
                auto lp = token_log_probs(p, CorruptedSequence{tok, 4});
                // tempered confidences all round to 1, so the leftmost masked slot commits
                std::size_t i = lo;
                while (tok[i] != p.mask_token()) ++i;
                std::size_t arg = 0;
                for (std::size_t c = 1; c < lp.cols; ++c)
                    if (lp(i, c) > lp(i, arg)) arg = c;
                tok[i] = static_cast<int>(arg);
            }
        CHECK(a.tokens == tok);
    }
    SUBCASE("one step fills the block in parallel") {
        o.steps_per_block = 1;
        o.temperature = 1e-9;
        auto a = sample_rollout(p, prompt, o, 2);
        std::vector<int> tok(prompt.tokens);
        tok.resize(12, p.mask_token());
        auto lp = token_log_probs(p, CorruptedSequence{tok, 4});
        for (std::size_t i = 4; i < 8; ++i) {
            std::size_t arg = 0;
            for (std::size_t c = 1; c < lp.cols; ++c)
                if (lp(i, c) > lp(i, arg)) arg = c;
            CHECK(a.tokens[i] == static_cast<int>(arg));
        }
    }
    SUBCASE("seeded sampling replays and keeps the prompt") {
        o.temperature = 1.0;
        for (Arch arch : {Arch::full, Arch::block})
            for (std::size_t steps : {1u, 2u, 3u, 4u}) {
                o.arch = arch;
                o.steps_per_block = steps;
                for (std::uint64_t s = 0; s < 10; ++s) {
                    auto a = sample_rollout(p, prompt, o, s);
                    CHECK(a == sample_rollout(p, prompt, o, s));
                    CHECK(std::equal(prompt.tokens.begin(), prompt.tokens.end(), a.tokens.begin()));
                    CHECK(std::count(a.tokens.begin(), a.tokens.end(), p.mask_token()) == 0);
                    CHECK(a.size() == 12);
                }
            }
    }
    SUBCASE("errors") {
        o.temperature = 0.0;
        CHECK_THROWS_AS(sample_rollout(p, prompt, o, 0), ValidationError);
        o.temperature = 1.0;
        o.gen_len = 6;
        CHECK_THROWS_AS(sample_rollout(p, prompt, o, 0), ValidationError);
    }
}

TEST_CASE("single-block staircase equals full attention") {
    for (std::uint64_t s = 0; s < 10; ++s) {
        auto p = small_model(s, 6, 8, 8, 4, 1.0);
        Rng rng(s + 100);
        auto x = random_sequence(rng, 0, 4, 5);
        auto c = mask_some(x, p.mask_token(), {1, 3});
        auto st = staircase_block_logprobs(p, x, c);
        auto full = token_log_probs(p, c);
        for (std::size_t i = 0; i < st.values.size(); ++i) CHECK(std::abs(st.values[i] - full.values[i]) <= 1e-10);
    }
}
