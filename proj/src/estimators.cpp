// SPDX-License-Identifier: Apache-2.0
#include "sdrl/estimators.hpp"

#include <cmath>

#include "sdrl/kernels.hpp"

namespace sdrl {

const char* to_string(Estimator e) {
    switch (e) {
    case Estimator::pg: return "pg";
    case Estimator::grpo: return "grpo";
    case Estimator::uc_grpo: return "uc_grpo";
    case Estimator::stabledrl: return "stabledrl";
    }
    return "?";
}

Estimator parse_estimator(const std::string& s) {
    if (s == "pg") return Estimator::pg;
    if (s == "grpo") return Estimator::grpo;
    if (s == "uc_grpo") return Estimator::uc_grpo;
    if (s == "stabledrl") return Estimator::stabledrl;
    throw ConfigError("unknown estimator '" + s + "'");
}

const char* to_string(AdvantageMode m) { return m == AdvantageMode::standardized ? "standardized" : "raw_centered"; }

AdvantageMode parse_advantage_mode(const std::string& s) {
    if (s == "standardized") return AdvantageMode::standardized;
    if (s == "raw_centered") return AdvantageMode::raw_centered;
    throw ConfigError("unknown advantage mode '" + s + "'");
}

std::vector<double> compute_advantages(std::span<const double> rewards, AdvantageMode mode) {
    const std::size_t g = rewards.size();
    if (g < 2) throw ValidationError("advantages need a group of at least two rewards");
    double mean = 0.0;
    for (double r : rewards) mean += r;
    mean /= static_cast<double>(g);
    std::vector<double> a(g);
    for (std::size_t j = 0; j < g; ++j) a[j] = rewards[j] - mean;
    if (mode == AdvantageMode::raw_centered) return a;
    double var = 0.0;
    for (double x : a) var += x * x;
    const double sd = std::max(std::sqrt(var / static_cast<double>(g)), 1e-8);
    for (double& x : a) x /= sd;
    return a;
}

std::vector<double> RolloutGroup::log_ratios() const {
    if (elbo_new.size() != elbo_old.size()) throw DimensionError("rollout group: ELBO arrays differ in length");
    std::vector<double> l(elbo_new.size());
    for (std::size_t j = 0; j < l.size(); ++j) l[j] = elbo_new[j] - elbo_old[j];
    return l;
}

bool UpdateVector::finite() const {
    if (!std::isfinite(norm)) return false;
    for (double x : direction)
        if (!std::isfinite(x)) return false;
    return true;
}

double euclidean_norm(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

UpdateVector group_update(std::span<const double> advantages, std::span<const double> log_ratios,
                          std::span<const std::span<const double>> h, Estimator estimator, const ClipConfig& clip) {
    const std::size_t g = advantages.size();
    if (g == 0 || log_ratios.size() != g || h.size() != g)
        throw DimensionError("group update: advantages, ratios and score vectors differ in count");
    const std::size_t dim = h[0].size();
    for (const auto& v : h)
        if (v.size() != dim) throw DimensionError("group update: score vectors differ in length");

    UpdateVector u;
    u.estimator = estimator;
    u.effective_weights.assign(g, 1.0);
    const double inv_g = 1.0 / static_cast<double>(g);
    switch (estimator) {
    case Estimator::pg: break;
    case Estimator::grpo:
        for (std::size_t j = 0; j < g; ++j) u.effective_weights[j] = effective_multiplier(log_ratios[j], advantages[j], clip);
        break;
    case Estimator::uc_grpo:
    case Estimator::stabledrl: {
        if (g < 2) throw ValidationError("group update: clipped estimators need G >= 2");
        auto cw = clip_then_softmax(LogRatioSet{std::vector<double>(log_ratios.begin(), log_ratios.end()), clip});
        u.effective_weights = estimator == Estimator::uc_grpo ? cw.weights : cw.alphas;
        break;
    }
    }
    const double scale = estimator == Estimator::stabledrl ? 1.0 : inv_g;
    u.coefficients.resize(g);
    u.per_sample_norms.resize(g);
    for (std::size_t j = 0; j < g; ++j) {
        u.coefficients[j] = scale * u.effective_weights[j] * advantages[j];
        u.per_sample_norms[j] = std::abs(advantages[j]) * euclidean_norm(h[j]);
    }
    u.direction.assign(dim, 0.0);
    kernels::weighted_sum(kernels::choose(dim * g), u.coefficients, h, u.direction);
    u.norm = euclidean_norm(u.direction);
    return u;
}

UpdateVector group_update(const RolloutGroup& group, std::span<const std::vector<double>> score_vectors,
                          Estimator estimator, const ClipConfig& clip) {
    std::vector<std::span<const double>> views(score_vectors.begin(), score_vectors.end());
    const auto l = group.log_ratios();
    return group_update(group.advantages, l, views, estimator, clip);
}

UpdateVector average_updates(std::span<const UpdateVector> updates) {
    if (updates.empty()) throw ValidationError("average_updates: no updates");
    if (updates.size() == 1) return updates[0];
    UpdateVector out;
    out.estimator = updates[0].estimator;
    out.direction.assign(updates[0].direction.size(), 0.0);
    const double inv = 1.0 / static_cast<double>(updates.size());
    for (const auto& u : updates) {
        if (u.direction.size() != out.direction.size()) throw DimensionError("average_updates: length mismatch");
        for (std::size_t p = 0; p < u.direction.size(); ++p) out.direction[p] += inv * u.direction[p];
        out.per_sample_norms.insert(out.per_sample_norms.end(), u.per_sample_norms.begin(), u.per_sample_norms.end());
        out.effective_weights.insert(out.effective_weights.end(), u.effective_weights.begin(), u.effective_weights.end());
        out.coefficients.insert(out.coefficients.end(), u.coefficients.begin(), u.coefficients.end());
    }
    out.norm = euclidean_norm(out.direction);
    return out;
}

} // namespace sdrl
