// SPDX-License-Identifier: Apache-2.0
#include "sdrl/ratios.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "sdrl/errors.hpp"

namespace sdrl {

const char* to_string(ClipSpace s) {
    switch (s) {
    case ClipSpace::linear: return "linear";
    case ClipSpace::log_symmetric: return "log_symmetric";
    case ClipSpace::log_asymmetric: return "log_asymmetric";
    }
    return "?";
}

ClipSpace parse_clip_space(const std::string& s) {
    if (s == "linear") return ClipSpace::linear;
    if (s == "log_symmetric") return ClipSpace::log_symmetric;
    if (s == "log_asymmetric") return ClipSpace::log_asymmetric;
    throw ConfigError("unknown clip space '" + s + "'");
}

void ClipConfig::validate() const {
    if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw ConfigError("clip epsilon must be a positive number");
    if (space == ClipSpace::linear && epsilon >= 1.0)
        throw ConfigError("linear clipping needs epsilon < 1 for a positive lower bound; use clip_space = "
                          "log_symmetric for epsilon = " +
                          std::to_string(epsilon));
    if (epsilon_low < 0.0) throw ConfigError("epsilon_low must be >= 0");
}

double ClipConfig::log_lower() const {
    switch (space) {
    case ClipSpace::linear: return std::log1p(-epsilon);
    case ClipSpace::log_symmetric: return -epsilon;
    case ClipSpace::log_asymmetric:
        return epsilon_low > 0.0 ? -epsilon_low : -std::numeric_limits<double>::infinity();
    }
    return -epsilon;
}

double ClipConfig::log_upper() const { return space == ClipSpace::linear ? std::log1p(epsilon) : epsilon; }

double ClipConfig::upper_weight() const { return space == ClipSpace::linear ? 1.0 + epsilon : std::exp(epsilon); }

double effective_multiplier_grpo(double rho, double advantage, double epsilon) {
    if (!(rho > 0.0)) throw ValidationError("importance ratio must be > 0");
    return advantage >= 0.0 ? std::min(rho, 1.0 + epsilon) : std::max(rho, 1.0 - epsilon);
}

double effective_multiplier(double l, double advantage, const ClipConfig& clip) {
    if (advantage >= 0.0) {
        if (l >= clip.log_upper()) return clip.upper_weight();
        return std::exp(l);
    }
    if (l <= clip.log_lower()) return clip.space == ClipSpace::linear ? 1.0 - clip.epsilon : std::exp(clip.log_lower());
    return std::exp(l);
}

double clip_unconditional(double rho, double epsilon, ClipSpace space) {
    if (!(rho > 0.0)) throw ValidationError("importance ratio must be > 0");
    ClipConfig c{space, epsilon, 0.0};
    c.validate();
    if (space == ClipSpace::linear) return std::clamp(rho, 1.0 - epsilon, 1.0 + epsilon);
    const double l = std::log(rho);
    const double cl = clip_log(l, c);
    return cl == l ? rho : std::exp(cl);
}

double clip_log(double l, const ClipConfig& clip) { return std::clamp(l, clip.log_lower(), clip.log_upper()); }

void LogRatioSet::validate() const {
    if (log_ratios.size() < 2) throw ValidationError("log-ratio set needs G >= 2");
    for (double l : log_ratios)
        if (!std::isfinite(l)) throw ValidationError("log-ratio set contains a non-finite entry");
}

ClippedWeightSet clip_then_softmax(const LogRatioSet& logs) {
    logs.validate();
    logs.clip.validate();
    const std::size_t g = logs.size();
    ClippedWeightSet out;
    out.clipped_logs.resize(g);
    out.weights.resize(g);
    out.alphas.resize(g);
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < g; ++j) {
        out.clipped_logs[j] = clip_log(logs.log_ratios[j], logs.clip);
        top = std::max(top, out.clipped_logs[j]);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < g; ++j) z += std::exp(out.clipped_logs[j] - top);
    const double lse = top + std::log(z);
    for (std::size_t j = 0; j < g; ++j) {
        out.weights[j] = std::exp(out.clipped_logs[j]);
        out.alphas[j] = std::exp(out.clipped_logs[j] - lse);
    }
    return out;
}

RatioStatistics decompose_ratio_statistics(double drift, std::span<const double> noise) {
    RatioStatistics s;
    s.ratios.reserve(noise.size());
    for (double eta : noise) s.ratios.push_back(std::exp(drift + eta));
    const double n = static_cast<double>(noise.size());
    if (noise.empty()) return s;
    for (std::size_t i = 0; i < noise.size(); ++i) {
        s.mean += s.ratios[i];
        s.log_mean += drift + noise[i];
    }
    s.mean /= n;
    s.log_mean /= n;
    for (std::size_t i = 0; i < noise.size(); ++i) {
        s.variance += (s.ratios[i] - s.mean) * (s.ratios[i] - s.mean);
        const double dl = drift + noise[i] - s.log_mean;
        s.log_variance += dl * dl;
    }
    if (noise.size() > 1) {
        s.variance /= n - 1.0;
        s.log_variance /= n - 1.0;
    }
    return s;
}

} // namespace sdrl
