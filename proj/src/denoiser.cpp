// SPDX-License-Identifier: Apache-2.0
#include "sdrl/denoiser.hpp"

#include <cmath>
#include <random>
#include <string>

#include "sdrl/rng.hpp"

namespace sdrl {

namespace {
constexpr std::size_t kParamBudget = 100000;
constexpr std::size_t kNumParams = static_cast<std::size_t>(ParamId::count);
} // namespace

const char* param_name(ParamId id) {
    switch (id) {
    case ParamId::token_embed: return "token_embed";
    case ParamId::pos_embed: return "pos_embed";
    case ParamId::wq: return "wq";
    case ParamId::wk: return "wk";
    case ParamId::wv: return "wv";
    case ParamId::w_ff: return "w_ff";
    case ParamId::b_ff: return "b_ff";
    case ParamId::w_out: return "w_out";
    case ParamId::b_out: return "b_out";
    case ParamId::count: break;
    }
    return "?";
}

std::size_t DenoiserParams::parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.size();
    return n;
}

std::vector<double> DenoiserParams::flatten() const {
    std::vector<double> flat;
    flat.reserve(parameter_count());
    for (const auto& t : tensors) flat.insert(flat.end(), t.values.begin(), t.values.end());
    return flat;
}

void DenoiserParams::assign_flat(std::span<const double> flat) {
    if (flat.size() != parameter_count()) throw DimensionError("assign_flat: length does not match parameter count");
    std::size_t off = 0;
    for (auto& t : tensors) {
        std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), t.size(), t.values.begin());
        off += t.size();
    }
}

DenoiserParams init_denoiser(const DenoiserConfig& config) {
    if (config.vocab_size < 3) throw ValidationError("denoiser: vocab_size must be >= 3 (two symbols plus mask)");
    if (config.embed_dim == 0 || config.max_seq_len == 0 || config.block_size == 0)
        throw ValidationError("denoiser: dimensions must be positive");
    const std::size_t v = config.vocab_size, d = config.embed_dim, c = v - 1;
    DenoiserParams p;
    p.config = config;
    p.tensors.resize(kNumParams);
    p[ParamId::token_embed] = Tensor::zeros(v, d);
    p[ParamId::pos_embed] = Tensor::zeros(config.max_seq_len, d);
    p[ParamId::wq] = Tensor::zeros(d, d);
    p[ParamId::wk] = Tensor::zeros(d, d);
    p[ParamId::wv] = Tensor::zeros(d, d);
    p[ParamId::w_ff] = Tensor::zeros(d, d);
    p[ParamId::b_ff] = Tensor::vector(std::vector<double>(d, 0.0));
    p[ParamId::w_out] = Tensor::zeros(d, c);
    p[ParamId::b_out] = Tensor::vector(std::vector<double>(c, 0.0));
    if (p.parameter_count() >= kParamBudget)
        throw ValidationError("denoiser: " + std::to_string(p.parameter_count()) +
                              " parameters exceeds the desk-scale budget");

    auto fill = [&](ParamId id, double std_dev) {
        if (std_dev == 0.0) return;
        Rng rng(derive_seed(config.seed, "init", {static_cast<std::uint64_t>(id)}));
        std::normal_distribution<double> normal(0.0, std_dev);
        for (double& x : p[id].values) x = normal(rng);
    };
    const double proj = 1.0 / std::sqrt(static_cast<double>(d));
    fill(ParamId::token_embed, config.init_scale);
    fill(ParamId::pos_embed, config.init_scale);
    fill(ParamId::wq, proj);
    fill(ParamId::wk, proj);
    fill(ParamId::wv, proj);
    fill(ParamId::w_ff, proj);
    fill(ParamId::w_out, config.head_init_scale);
    return p;
}

void validate_sequence(const DenoiserParams& params, std::span<const int> tokens, std::size_t prompt_len,
                       bool allow_mask) {
    if (tokens.size() > params.config.max_seq_len)
        throw ValidationError("sequence of length " + std::to_string(tokens.size()) + " exceeds max_seq_len " +
                              std::to_string(params.config.max_seq_len));
    if (prompt_len > tokens.size()) throw ValidationError("prompt_len exceeds sequence length");
    const int mask = params.mask_token();
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const int t = tokens[i];
        if (t < 0 || static_cast<std::size_t>(t) >= params.config.vocab_size)
            throw ValidationError("token id " + std::to_string(t) + " outside vocabulary");
        if (t == mask && (i < prompt_len || !allow_mask))
            throw ValidationError("mask token at position " + std::to_string(i) + " is not allowed here");
    }
}

ParamVars register_params(ad::Tape& tape, const DenoiserParams& params) {
    ParamVars pv;
    pv.vars.reserve(params.tensors.size());
    for (const auto& t : params.tensors) pv.vars.push_back(tape.parameter(t));
    return pv;
}

ad::Var embed(const ParamVars& p, std::span<const int> tokens, std::span<const int> positions) {
    if (tokens.size() != positions.size()) throw DimensionError("embed: tokens and positions differ in length");
    auto tok = ad::gather_rows(p[ParamId::token_embed], std::vector<int>(tokens.begin(), tokens.end()));
    auto pos = ad::gather_rows(p[ParamId::pos_embed], std::vector<int>(positions.begin(), positions.end()));
    return ad::add(tok, pos);
}

ad::Var forward_from_embeddings(const ParamVars& p, ad::Var x, std::shared_ptr<const BinaryMask> mask) {
    auto q = ad::matmul(x, p[ParamId::wq]);
    auto k = ad::matmul(x, p[ParamId::wk]);
    auto v = ad::matmul(x, p[ParamId::wv]);
    auto h = ad::add(x, ad::masked_attention(q, k, v, std::move(mask)));
    auto f = ad::tanh(ad::add_row(ad::matmul(h, p[ParamId::w_ff]), p[ParamId::b_ff]));
    auto h2 = ad::add(h, f);
    auto logits = ad::add_row(ad::matmul(h2, p[ParamId::w_out]), p[ParamId::b_out]);
    return ad::log_softmax_rows(logits);
}

ad::Var forward_log_probs(const ParamVars& p, std::span<const int> tokens, std::span<const int> positions,
                          std::shared_ptr<const BinaryMask> mask) {
    return forward_from_embeddings(p, embed(p, tokens, positions), std::move(mask));
}

LogProbTable to_table(const Tensor& lp) {
    return LogProbTable{lp.rows(), lp.cols(), lp.values};
}

LogProbTable token_log_probs(const DenoiserParams& params, const CorruptedSequence& corrupted) {
    validate_sequence(params, corrupted.tokens, corrupted.prompt_len, true);
    const std::size_t n = corrupted.size();
    std::vector<int> positions(n);
    for (std::size_t i = 0; i < n; ++i) positions[i] = static_cast<int>(i);
    ad::Tape tape;
    auto pv = register_params(tape, params);
    auto out = forward_log_probs(pv, corrupted.tokens, positions, std::make_shared<const BinaryMask>(BinaryMask::ones(n)));
    return to_table(out.value());
}

} // namespace sdrl
