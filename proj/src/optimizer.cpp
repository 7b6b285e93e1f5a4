// SPDX-License-Identifier: Apache-2.0
#include "sdrl/optimizer.hpp"

#include <cmath>

#include "sdrl/estimators.hpp"

namespace sdrl {

const char* to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adamw"; }

OptimizerKind parse_optimizer(const std::string& s) {
    if (s == "sgd") return OptimizerKind::sgd;
    if (s == "adamw") return OptimizerKind::adamw;
    throw ConfigError("unknown optimizer '" + s + "'");
}

double OptimizerState::current_lr() const {
    if (config.decay_steps == 0) return config.lr;
    const double frac = 1.0 - static_cast<double>(step) / static_cast<double>(config.decay_steps);
    return config.lr * std::max(frac, 0.0);
}

OptimizerState make_optimizer(const OptimizerConfig& config, std::size_t n) {
    if (!(config.lr >= 0.0)) throw ConfigError("learning rate must be >= 0");
    if (config.kind == OptimizerKind::adamw &&
        !(config.beta1 >= 0.0 && config.beta1 < 1.0 && config.beta2 >= 0.0 && config.beta2 < 1.0))
        throw ConfigError("AdamW betas must lie in [0, 1)");
    OptimizerState s;
    s.config = config;
    if (config.kind == OptimizerKind::adamw) {
        s.m.assign(n, 0.0);
        s.v.assign(n, 0.0);
    }
    return s;
}

StepRecord apply_update(DenoiserParams& params, OptimizerState& st, std::span<const double> gradient) {
    const std::size_t n = params.parameter_count();
    if (gradient.size() != n) throw DimensionError("apply_update: gradient length does not match parameters");
    StepRecord rec;
    rec.gradient_norm = euclidean_norm(gradient);
    rec.lr = st.current_lr();
    if (!std::isfinite(rec.gradient_norm)) {
        rec.accepted = false;
        rec.diagnostic = "non-finite update rejected at optimizer step " + std::to_string(st.step);
        ++st.rejected;
        ++st.consecutive_rejected;
        return rec;
    }
    st.consecutive_rejected = 0;

    double scale = 1.0;
    if (st.config.grad_clip > 0.0 && rec.gradient_norm > st.config.grad_clip)
        scale = st.config.grad_clip / rec.gradient_norm;

    std::vector<double> theta = params.flatten();
    const double lr = rec.lr;
    if (st.config.kind == OptimizerKind::sgd) {
        for (std::size_t p = 0; p < n; ++p) theta[p] -= lr * (scale * gradient[p]);
    } else {
        const auto& c = st.config;
        const double t = static_cast<double>(st.step + 1);
        const double bc1 = 1.0 - std::pow(c.beta1, t), bc2 = 1.0 - std::pow(c.beta2, t);
        for (std::size_t p = 0; p < n; ++p) {
            const double g = scale * gradient[p];
            st.m[p] = c.beta1 * st.m[p] + (1.0 - c.beta1) * g;
            st.v[p] = c.beta2 * st.v[p] + (1.0 - c.beta2) * g * g;
            const double mhat = st.m[p] / bc1, vhat = st.v[p] / bc2;
            theta[p] -= lr * (mhat / (std::sqrt(vhat) + c.adam_eps) + c.weight_decay * theta[p]);
        }
    }
    params.assign_flat(theta);
    ++st.step;
    return rec;
}

} // namespace sdrl
