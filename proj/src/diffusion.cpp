// SPDX-License-Identifier: Apache-2.0
#include "sdrl/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "sdrl/rng.hpp"
#include "sdrl/staircase.hpp"

namespace sdrl {

const char* to_string(MaskPolicy p) {
    switch (p) {
    case MaskPolicy::uniform: return "uniform";
    case MaskPolicy::blockwise: return "blockwise";
    case MaskPolicy::head_biased: return "head_biased";
    case MaskPolicy::tail_biased: return "tail_biased";
    }
    return "?";
}

MaskPolicy parse_mask_policy(const std::string& s) {
    if (s == "uniform") return MaskPolicy::uniform;
    if (s == "blockwise") return MaskPolicy::blockwise;
    if (s == "head_biased") return MaskPolicy::head_biased;
    if (s == "tail_biased") return MaskPolicy::tail_biased;
    throw ConfigError("unknown mask policy '" + s + "'");
}

std::size_t MaskPattern::count() const {
    return static_cast<std::size_t>(std::count(masked.begin(), masked.end(), std::uint8_t{1}));
}

namespace {

// n independent Bernoulli(t) draws conditioned on at least one success.
// The first success index is drawn from its exact conditional law, the rest
// are unconstrained; this is the law that resampling until success gives.
std::vector<std::uint8_t> bernoulli_nonempty(std::size_t n, double t, Rng& rng) {
    std::vector<std::uint8_t> bits(n, 0);
    if (t >= 1.0) {
        std::fill(bits.begin(), bits.end(), 1);
        return bits;
    }
    const double lq = std::log1p(-t);
    const double total = -std::expm1(static_cast<double>(n) * lq);
    const double u = uniform01(rng) * total;
    std::size_t first = n - 1;
    for (std::size_t k = 0; k < n; ++k)
        if (-std::expm1(static_cast<double>(k + 1) * lq) > u) {
            first = k;
            break;
        }
    bits[first] = 1;
    for (std::size_t k = first + 1; k < n; ++k) bits[k] = uniform01(rng) < t ? 1 : 0;
    return bits;
}

// Weighted sampling without replacement (exponential keys).
std::vector<std::uint8_t> biased_subset(std::size_t n, std::size_t count, double beta, double sign, Rng& rng) {
    std::vector<double> key(n);
    for (std::size_t k = 0; k < n; ++k) {
        const double w = std::exp(sign * beta * static_cast<double>(k) / static_cast<double>(n));
        double u = uniform01(rng);
        if (u == 0.0) u = 0x1.0p-60;
        key[k] = std::log(u) / w;
    }
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(count), idx.end(),
                      [&](std::size_t a, std::size_t b) { return key[a] > key[b] || (key[a] == key[b] && a < b); });
    std::vector<std::uint8_t> bits(n, 0);
    for (std::size_t k = 0; k < count; ++k) bits[idx[k]] = 1;
    return bits;
}

void check_t(double t) {
    if (!(t > 0.0 && t <= 1.0)) throw ValidationError("noise level t = " + std::to_string(t) + " outside (0, 1]");
}

} // namespace

MaskPattern sample_mask(std::size_t len, double t, MaskPolicy policy, Rng& rng, const CorruptOptions& opt) {
    check_t(t);
    if (len == 0) throw ValidationError("mask: empty response region");
    MaskPattern p;
    p.t = t;
    p.policy = policy;
    p.mc_weight = 1.0 / t;
    switch (policy) {
    case MaskPolicy::uniform: p.masked = bernoulli_nonempty(len, t, rng); break;
    case MaskPolicy::blockwise: {
        if (opt.block_size == 0) throw ValidationError("mask: block_size must be positive");
        const std::size_t nb = (len + opt.block_size - 1) / opt.block_size;
        auto blocks = bernoulli_nonempty(nb, t, rng);
        p.masked.assign(len, 0);
        for (std::size_t k = 0; k < len; ++k) p.masked[k] = blocks[k / opt.block_size];
        break;
    }
    case MaskPolicy::head_biased:
    case MaskPolicy::tail_biased: {
        std::size_t count = opt.count;
        if (count == 0) count = static_cast<std::size_t>(std::llround(t * static_cast<double>(len)));
        count = std::clamp<std::size_t>(count, 1, len);
        p.masked = biased_subset(len, count, opt.beta, policy == MaskPolicy::tail_biased ? 1.0 : -1.0, rng);
        break;
    }
    }
    return p;
}

MaskPattern span_mask(std::size_t len, std::size_t first, std::size_t count, double t) {
    check_t(t);
    if (count == 0 || first + count > len) throw ValidationError("span mask outside the response region");
    MaskPattern p;
    p.t = t;
    p.policy = MaskPolicy::blockwise;
    p.mc_weight = 1.0 / t;
    p.masked.assign(len, 0);
    std::fill_n(p.masked.begin() + static_cast<std::ptrdiff_t>(first), count, 1);
    return p;
}

CorruptedSequence apply_mask(const TokenSequence& clean, const MaskPattern& pattern, int mask_token) {
    if (pattern.masked.size() != clean.response_len())
        throw DimensionError("mask pattern length differs from the response length");
    CorruptedSequence c{clean.tokens, clean.prompt_len};
    for (std::size_t k = 0; k < pattern.masked.size(); ++k)
        if (pattern.masked[k]) c.tokens[clean.prompt_len + k] = mask_token;
    return c;
}

Corruption corrupt(const TokenSequence& clean, double t, MaskPolicy policy, std::uint64_t seed, int mask_token,
                   const CorruptOptions& options) {
    Rng rng(derive_seed(seed, "corrupt"));
    auto pattern = sample_mask(clean.response_len(), t, policy, rng, options);
    auto corrupted = apply_mask(clean, pattern, mask_token);
    return {std::move(corrupted), std::move(pattern)};
}

std::vector<MaskPattern> sample_patterns(std::size_t response_len, const ElboOptions& opt, std::uint64_t seed) {
    if (opt.m == 0) throw ValidationError("elbo: m must be >= 1");
    if (!(opt.t_floor > 0.0 && opt.t_floor <= 1.0)) throw ValidationError("elbo: t_floor must lie in (0, 1]");
    std::vector<MaskPattern> out;
    out.reserve(opt.m);
    for (std::size_t tau = 0; tau < opt.m; ++tau) {
        Rng rng(derive_seed(seed, "elbo", {opt.offset + tau}));
        const double t = opt.t_floor + (1.0 - opt.t_floor) * (1.0 - uniform01(rng)); // (t_floor, 1]
        out.push_back(sample_mask(response_len, t, opt.policy, rng, opt.corrupt));
    }
    return out;
}

double pattern_value(const DenoiserParams& params, const TokenSequence& x, const MaskPattern& pattern, Arch arch) {
    auto corrupted = apply_mask(x, pattern, params.mask_token());
    const LogProbTable lp =
        arch == Arch::full ? token_log_probs(params, corrupted) : staircase_block_logprobs(params, x, corrupted);
    double s = 0.0;
    for (std::size_t k = 0; k < pattern.masked.size(); ++k) {
        if (!pattern.masked[k]) continue;
        const std::size_t i = x.prompt_len + k;
        s += lp(i, static_cast<std::size_t>(x.tokens[i]));
    }
    return pattern.mc_weight * s;
}

ElboEstimate evaluate_patterns(const DenoiserParams& params, const TokenSequence& x, std::vector<MaskPattern> patterns,
                               Arch arch) {
    if (patterns.empty()) throw ValidationError("elbo: no mask patterns");
    validate_sequence(params, x.tokens, x.prompt_len, false);
    ElboEstimate e;
    e.num_samples = patterns.size();
    e.per_sample_values.reserve(patterns.size());
    for (const auto& p : patterns) e.per_sample_values.push_back(pattern_value(params, x, p, arch));
    double s = 0.0;
    for (double v : e.per_sample_values) s += v;
    e.value = s / static_cast<double>(e.num_samples);
    e.patterns = std::move(patterns);
    return e;
}

ElboEstimate estimate_elbo(const DenoiserParams& params, const TokenSequence& x, const ElboOptions& options,
                           std::uint64_t seed) {
    validate_sequence(params, x.tokens, x.prompt_len, false);
    return evaluate_patterns(params, x, sample_patterns(x.response_len(), options, seed), options.arch);
}

std::pair<ElboEstimate, ElboEstimate> estimate_elbo_pairwise(const DenoiserParams& params_new,
                                                            const DenoiserParams& params_old, const TokenSequence& x,
                                                            const ElboOptions& options, std::uint64_t seed,
                                                            Coupling coupling) {
    validate_sequence(params_new, x.tokens, x.prompt_len, false);
    if (coupling == Coupling::shared_masks) {
        auto patterns = sample_patterns(x.response_len(), options, seed);
        auto a = evaluate_patterns(params_new, x, patterns, options.arch);
        auto b = evaluate_patterns(params_old, x, std::move(patterns), options.arch);
        return {std::move(a), std::move(b)};
    }
    return {estimate_elbo(params_new, x, options, derive_seed(seed, "new")),
            estimate_elbo(params_old, x, options, derive_seed(seed, "old"))};
}

ad::Var elbo_graph(ad::Tape& tape, const ParamVars& pv, const DenoiserParams& params, const TokenSequence& x,
                   std::span<const MaskPattern> patterns, Arch arch) {
    if (patterns.empty()) throw ValidationError("elbo: no mask patterns");
    validate_sequence(params, x.tokens, x.prompt_len, false);
    const double inv_m = 1.0 / static_cast<double>(patterns.size());
    const std::size_t n = x.size();
    std::vector<int> positions(n);
    std::iota(positions.begin(), positions.end(), 0);
    auto full = std::make_shared<const BinaryMask>(BinaryMask::ones(n));

    ad::Var total{};
    bool first = true;
    for (const auto& p : patterns) {
        auto corrupted = apply_mask(x, p, params.mask_token());
        ad::Var lp = arch == Arch::full ? forward_log_probs(pv, corrupted.tokens, positions, full)
                                        : build_staircase_graph(tape, pv, params, x, corrupted).target_log_probs;
        std::vector<ad::PickEntry> picks;
        for (std::size_t k = 0; k < p.masked.size(); ++k)
            if (p.masked[k]) {
                const std::size_t i = x.prompt_len + k;
                picks.push_back({i, static_cast<std::size_t>(x.tokens[i]), p.mc_weight * inv_m});
            }
        auto term = ad::pick_sum(lp, std::move(picks));
        total = first ? term : ad::add(total, term);
        first = false;
    }
    return total;
}

std::vector<double> elbo_gradient(const DenoiserParams& params, const TokenSequence& x,
                                  std::span<const MaskPattern> patterns, Arch arch, double* value) {
    ad::Tape tape;
    auto pv = register_params(tape, params);
    auto out = elbo_graph(tape, pv, params, x, patterns, arch);
    if (value) *value = out.value().values[0];
    auto grads = tape.backward(out);
    std::vector<double> flat;
    flat.reserve(params.parameter_count());
    for (const auto& g : grads) flat.insert(flat.end(), g.values.begin(), g.values.end());
    return flat;
}

} // namespace sdrl
