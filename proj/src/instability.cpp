// SPDX-License-Identifier: Apache-2.0
#include "sdrl/instability.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include <boost/math/distributions/students_t.hpp>

#include "sdrl/kernels.hpp"

namespace sdrl {

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr std::size_t kChunk = 8192;

std::size_t chunk_count(std::size_t trials) { return (trials + kChunk - 1) / kChunk; }
} // namespace

// ---- spikes ----

SpikeResult spike_indicator(std::span<const double> history, double current, std::size_t window, double delta) {
    SpikeResult r;
    if (window == 0 || history.size() < window) {
        r.warm_up = true;
        r.threshold = kNaN;
        return r;
    }
    double sum = 0.0;
    for (std::size_t i = history.size() - window; i < history.size(); ++i) sum += history[i];
    r.threshold = (1.0 + delta) * (sum / static_cast<double>(window));
    r.spike = current > r.threshold;
    return r;
}

SpikeResult SpikeTracker::observe(double norm, bool record) {
    std::vector<double> h(recent_.begin(), recent_.end());
    auto r = spike_indicator(h, norm, window_, delta_);
    if (!record) return r;
    recent_.push_back(norm);
    if (recent_.size() > window_) recent_.pop_front();
    return r;
}

std::vector<SpikeResult> spike_series(std::span<const double> norms, std::size_t window, double delta) {
    std::vector<SpikeResult> out;
    out.reserve(norms.size());
    for (std::size_t i = 0; i < norms.size(); ++i) out.push_back(spike_indicator(norms.first(i), norms[i], window, delta));
    return out;
}

// ---- envelopes ----

const char* to_string(NoiseFamily f) {
    switch (f) {
    case NoiseFamily::gaussian: return "gaussian";
    case NoiseFamily::laplace: return "laplace";
    case NoiseFamily::student_t: return "student_t";
    }
    return "?";
}

double TailEnvelope::survival(double z) const {
    const double x = z / scale;
    switch (family) {
    case NoiseFamily::gaussian: return 0.5 * std::erfc(x / std::sqrt(2.0));
    case NoiseFamily::laplace: return x >= 0.0 ? 0.5 * std::exp(-x) : 1.0 - 0.5 * std::exp(x);
    case NoiseFamily::student_t: {
        boost::math::students_t dist(nu);
        return boost::math::cdf(boost::math::complement(dist, x));
    }
    }
    return kNaN;
}

double TailEnvelope::sample(Rng& rng) const {
    switch (family) {
    case NoiseFamily::gaussian: return scale * std::normal_distribution<double>(0.0, 1.0)(rng);
    case NoiseFamily::laplace: {
        const double u = uniform01(rng) - 0.5; // [-0.5, 0.5)
        const double a = std::max(1.0 - 2.0 * std::abs(u), 0x1.0p-60);
        return -scale * std::copysign(std::log(a), u);
    }
    case NoiseFamily::student_t: return scale * std::student_t_distribution<double>(nu)(rng);
    }
    return kNaN;
}

std::string TailEnvelope::describe() const {
    std::ostringstream os;
    os << to_string(family);
    if (family == NoiseFamily::student_t) os << "(" << nu << ")";
    os << " scale=" << scale;
    return os.str();
}

double envelope_lower(std::span<const TailEnvelope> components, double z) {
    double lo = 1.0;
    for (const auto& c : components) lo = std::min(lo, c.survival(z));
    return lo;
}

ExceedanceReport verify_exceedance_identity(const TailEnvelope& env, double drift, double u, std::size_t trials,
                                            std::uint64_t seed) {
    if (!(u > 0.0)) throw ValidationError("exceedance: u must be > 0");
    if (trials < 10000) throw ValidationError("exceedance: at least 10^4 trials are required");
    const std::size_t chunks = chunk_count(trials);
    std::vector<std::size_t> hits(chunks, 0);
    kernels::parallel_for(kernels::choose(trials * 8), chunks, [&](std::size_t c) {
        Rng rng(derive_seed(seed, "exceedance", {c}));
        const std::size_t end = std::min(trials, (c + 1) * kChunk);
        std::size_t h = 0;
        for (std::size_t i = c * kChunk; i < end; ++i)
            if (std::exp(drift + env.sample(rng)) >= u) ++h;
        hits[c] = h;
    });
    ExceedanceReport r;
    r.trials = trials;
    r.empirical = static_cast<double>(std::accumulate(hits.begin(), hits.end(), std::size_t{0})) /
                  static_cast<double>(trials);
    r.analytic = env.survival(std::log(u) - drift);
    r.std_error = std::sqrt(r.analytic * (1.0 - r.analytic) / static_cast<double>(trials));
    if (r.std_error > 0.0) r.z_score = (r.empirical - r.analytic) / r.std_error;
    else r.z_score = r.empirical == r.analytic ? 0.0 : std::numeric_limits<double>::infinity();
    return r;
}

// ---- dominance ----

namespace {

double residual_multiplier(ResidualLaw law, double mean, Rng& rng) {
    switch (law) {
    case ResidualLaw::zero: return 0.0;
    case ResidualLaw::constant: return mean;
    case ResidualLaw::exponential: return -mean * std::log1p(-uniform01(rng));
    }
    return 0.0;
}

void random_direction(std::span<double> out, double norm, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    double s = 0.0;
    for (double& x : out) {
        x = normal(rng);
        s += x * x;
    }
    const double f = norm / std::sqrt(s);
    for (double& x : out) x *= f;
}

// ||(1/G) sum_{j != dagger} m_j g_j|| with ||g_j|| = B.
double residual_norm(const DominanceConfig& c, std::size_t g, Rng& rng, std::vector<double>& acc,
                     std::vector<double>& dir) {
    std::fill(acc.begin(), acc.end(), 0.0);
    const double mean = g > 1 ? c.moment_w / static_cast<double>(g - 1) : 0.0;
    for (std::size_t j = 1; j < g; ++j) {
        const double m = residual_multiplier(c.residual, mean, rng);
        random_direction(dir, c.bound_b, rng);
        for (std::size_t p = 0; p < acc.size(); ++p) acc[p] += m * dir[p];
    }
    double s = 0.0;
    for (double x : acc) s += x * x;
    return std::sqrt(s) / static_cast<double>(g);
}

} // namespace

double dominance_threshold(const DominanceConfig& c, double lambda) {
    if (!(lambda > 0.0 && lambda < 1.0))
        throw ConfigError("dominance: lambda must lie in (0, 1); lambda = 0 makes u0 infinite");
    return 2.0 * c.bound_b * c.moment_w / (lambda * c.a0 * c.b0);
}

DominanceReport verify_dominance_lemma(const TailEnvelope& env, const DominanceConfig& c, double lambda,
                                       std::span<const double> u_grid) {
    DominanceReport rep;
    rep.u0 = dominance_threshold(c, lambda);
    if (c.group_size < 2 || c.dim == 0) throw ConfigError("dominance: need G >= 2 and dim >= 1");

    const std::size_t trials = c.trials, chunks = chunk_count(trials);
    std::vector<double> log_rho(trials), rnorm(trials);
    kernels::parallel_for(kernels::choose(trials * c.group_size * c.dim), chunks, [&](std::size_t ch) {
        Rng rng(derive_seed(c.seed, "dominance", {ch}));
        std::vector<double> acc(c.dim), dir(c.dim);
        const std::size_t end = std::min(trials, (ch + 1) * kChunk);
        for (std::size_t i = ch * kChunk; i < end; ++i) {
            log_rho[i] = c.drift + env.sample(rng);
            rnorm[i] = residual_norm(c, c.group_size, rng, acc, dir);
        }
    });

    const double g = static_cast<double>(c.group_size);
    for (double u : u_grid) {
        DominanceRow row;
        row.u = u;
        row.in_regime = u >= rep.u0;
        const double lu = std::log(u), limit = lambda * u * c.a0 * c.b0 / g;
        std::size_t good = 0;
        for (std::size_t i = 0; i < trials; ++i) {
            if (log_rho[i] < lu) continue;
            ++row.conditioned;
            if (rnorm[i] <= limit) ++good;
        }
        const double t = lambda * u * c.a0 * c.b0 / c.bound_b;
        row.markov_bound = std::max(0.0, 1.0 - c.moment_w / t);
        if (row.conditioned > 0) {
            const double n = static_cast<double>(row.conditioned);
            row.probability = static_cast<double>(good) / n;
            row.std_error = std::sqrt(0.25 / n);
            row.holds = row.probability >= 0.5 - 3.0 * row.std_error;
        } else {
            row.probability = kNaN;
            row.std_error = kNaN;
        }
        rep.rows.push_back(row);
    }
    return rep;
}

// ---- spike-probability bound ----

double spike_threshold_u(const SpikeBoundInputs& in) {
    DominanceConfig c;
    c.bound_b = in.bound_b;
    c.moment_w = in.moment_w;
    c.a0 = in.a0;
    c.b0 = in.b0;
    const double u0 = dominance_threshold(c, in.lambda);
    const double uh = static_cast<double>(in.group_size) * in.spike_h / ((1.0 - in.lambda) * in.a0 * in.b0);
    return std::max({in.clip_upper, uh, u0});
}

double spike_probability_lower_bound(const TailEnvelope& env, double drift_state, const SpikeBoundInputs& in) {
    return 0.5 * env.survival(std::log(spike_threshold_u(in)) - drift_state);
}

SpikeSimulation simulate_spike_probability(const TailEnvelope& env, double drift_state, const SpikeBoundInputs& in,
                                           std::size_t dim, std::size_t trials, std::uint64_t seed) {
    if (in.group_size < 2 || dim == 0 || trials == 0) throw ConfigError("spike simulation: degenerate configuration");
    if (in.a0 * in.b0 > in.bound_b) throw ConfigError("spike simulation: a0 * b0 must not exceed B");
    DominanceConfig c;
    c.group_size = in.group_size;
    c.dim = dim;
    c.bound_b = in.bound_b;
    c.moment_w = in.moment_w;
    c.a0 = in.a0;
    c.b0 = in.b0;
    c.residual = ResidualLaw::exponential;

    const std::size_t chunks = chunk_count(trials);
    std::vector<std::size_t> hits(chunks, 0);
    const double g = static_cast<double>(in.group_size);
    const double lower_clip = 2.0 - in.clip_upper;
    kernels::parallel_for(kernels::choose(trials * in.group_size * dim), chunks, [&](std::size_t ch) {
        Rng rng(derive_seed(seed, "spike-sim", {ch}));
        std::vector<double> acc(dim), dir(dim), h(dim);
        const double mean = c.moment_w / (g - 1.0);
        std::size_t hit = 0;
        const std::size_t end = std::min(trials, (ch + 1) * kChunk);
        for (std::size_t i = ch * kChunk; i < end; ++i) {
            const double rho = std::exp(drift_state + env.sample(rng));
            const double m = std::max(rho, lower_clip);
            random_direction(h, in.b0, rng);
            for (std::size_t p = 0; p < dim; ++p) acc[p] = -m * in.a0 * h[p];
            for (std::size_t j = 1; j < in.group_size; ++j) {
                const double mj = residual_multiplier(c.residual, mean, rng);
                random_direction(dir, in.bound_b, rng);
                for (std::size_t p = 0; p < dim; ++p) acc[p] += mj * dir[p];
            }
            double s = 0.0;
            for (double x : acc) s += x * x;
            if (std::sqrt(s) / g >= in.spike_h) ++hit;
        }
        hits[ch] = hit;
    });
    SpikeSimulation out;
    out.trials = trials;
    out.bound = spike_probability_lower_bound(env, drift_state, in);
    out.empirical =
        static_cast<double>(std::accumulate(hits.begin(), hits.end(), std::size_t{0})) / static_cast<double>(trials);
    out.std_error = std::sqrt(std::max(out.empirical * (1.0 - out.empirical), 0.25 / static_cast<double>(trials)) /
                              static_cast<double>(trials));
    return out;
}

// ---- stress protocol ----

const char* to_string(StressPolicy p) { return p == StressPolicy::block ? "block" : "random"; }

StressPolicy parse_stress_policy(const std::string& s) {
    if (s == "block") return StressPolicy::block;
    if (s == "random") return StressPolicy::random;
    throw ConfigError("unknown stress policy '" + s + "'");
}

void StressConfig::validate() const {
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("stress: gamma must lie in [0, 1]");
    if (!(beta >= 0.0)) throw ConfigError("stress: beta must be >= 0");
    if (t_min == 0) throw ConfigError("stress: t_min must be >= 1");
    if (t_max != 0 && t_min > t_max) throw ConfigError("stress: t_min must not exceed t_max");
}

std::vector<std::uint8_t> select_stressed(std::size_t g, double gamma, std::uint64_t seed) {
    // The small slack keeps products such as 0.7 * 10 from rounding up.
    const double raw = std::ceil(gamma * static_cast<double>(g) - 1e-9);
    const std::size_t k = std::min(g, static_cast<std::size_t>(std::max(raw, 0.0)));
    std::vector<std::size_t> idx(g);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(derive_seed(seed, "stress-select"));
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(uniform01(rng) * static_cast<double>(g - i));
        std::swap(idx[i], idx[std::min(j, g - 1)]);
    }
    std::vector<std::uint8_t> flags(g, 0);
    for (std::size_t i = 0; i < k; ++i) flags[idx[i]] = 1;
    return flags;
}

std::vector<MaskPattern> stressed_patterns(std::size_t len, StressRole role, const StressConfig& stress,
                                           const ElboOptions& opt, std::uint64_t seed) {
    stress.validate();
    if (opt.m == 0) throw ValidationError("elbo: m must be >= 1");
    const bool num = role == StressRole::numerator;
    std::vector<MaskPattern> out;
    out.reserve(opt.m);
    for (std::size_t tau = 0; tau < opt.m; ++tau) {
        Rng rng(derive_seed(seed, num ? "stress-num" : "stress-den", {opt.offset + tau}));
        const double t = opt.t_floor + (1.0 - opt.t_floor) * (1.0 - uniform01(rng));
        if (stress.policy == StressPolicy::block) {
            const std::size_t b = std::min(std::max<std::size_t>(opt.corrupt.block_size, 1), len);
            const std::size_t nb = (len + b - 1) / b;
            out.push_back(num ? span_mask(len, (nb - 1) * b, len - (nb - 1) * b, t) : span_mask(len, 0, b, t));
        } else {
            CorruptOptions co = opt.corrupt;
            co.beta = stress.beta;
            co.count = num ? stress.t_min : (stress.t_max == 0 ? len : stress.t_max);
            co.count = std::min(co.count, len);
            out.push_back(sample_mask(len, t, num ? MaskPolicy::tail_biased : MaskPolicy::head_biased, rng, co));
        }
    }
    return out;
}

ElboPairs stress_weights(const DenoiserParams& params_new, const DenoiserParams& params_old,
                         std::span<const TokenSequence> rollouts, const StressConfig& stress,
                         const ElboOptions& options, Coupling coupling, std::uint64_t seed) {
    stress.validate();
    const std::size_t g = rollouts.size();
    ElboPairs out;
    out.stressed = select_stressed(g, stress.gamma, derive_seed(seed, "select"));
    out.elbo_new.assign(g, 0.0);
    out.elbo_old.assign(g, 0.0);
    kernels::parallel_for(kernels::choose(g << 14), g, [&](std::size_t j) {
        const auto& x = rollouts[j];
        const std::uint64_t sj = derive_seed(seed, "member", {j});
        if (out.stressed[j]) {
            out.elbo_new[j] = evaluate_patterns(params_new, x,
                                                stressed_patterns(x.response_len(), StressRole::numerator, stress,
                                                                  options, sj),
                                                options.arch)
                                  .value;
            out.elbo_old[j] = evaluate_patterns(params_old, x,
                                                stressed_patterns(x.response_len(), StressRole::denominator, stress,
                                                                  options, sj),
                                                options.arch)
                                  .value;
        } else {
            auto [a, b] = estimate_elbo_pairwise(params_new, params_old, x, options, sj, coupling);
            out.elbo_new[j] = a.value;
            out.elbo_old[j] = b.value;
        }
    });
    return out;
}

// ---- drift ----

DriftState measure_drift_state(std::span<const TokenSequence> rollouts, std::span<const double> advantages,
                               const DenoiserParams& params_new, const DenoiserParams& params_old, double a0,
                               const ElboOptions& options, std::uint64_t seed) {
    if (rollouts.size() != advantages.size()) throw DimensionError("drift state: rollouts and advantages differ");
    if (!(a0 > 0.0)) throw ConfigError("drift state: a0 must be > 0");
    const std::size_t g = rollouts.size();
    DriftState st;
    st.deltas.assign(g, kNaN);
    kernels::parallel_for(kernels::choose(g << 14), g, [&](std::size_t j) {
        if (advantages[j] > -a0) return;
        auto [a, b] = estimate_elbo_pairwise(params_new, params_old, rollouts[j], options,
                                             derive_seed(seed, "drift", {j}), Coupling::shared_masks);
        st.deltas[j] = a.value - b.value;
    });
    double hi = -std::numeric_limits<double>::infinity(), lo = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < g; ++j) {
        if (std::isnan(st.deltas[j])) continue;
        st.present = true;
        if (st.deltas[j] > hi) {
            hi = st.deltas[j];
            st.argmax = j;
        }
        lo = std::min(lo, st.deltas[j]);
    }
    if (st.present) {
        st.d = hi;
        st.s = hi - lo;
    } else {
        st.d = st.s = kNaN;
    }
    return st;
}

} // namespace sdrl
