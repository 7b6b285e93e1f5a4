// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "sdrl/denoiser.hpp"

namespace sdrl {

enum class OptimizerKind { sgd, adamw };
const char* to_string(OptimizerKind k);
OptimizerKind parse_optimizer(const std::string& s);

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::sgd;
    double lr = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.99;
    double adam_eps = 1e-8;
    double weight_decay = 0.1; // decoupled, AdamW only
    double grad_clip = 0.0;    // global-norm threshold; 0 disables
    std::size_t decay_steps = 0; // linear decay to zero over this many steps; 0 keeps lr constant
};

struct OptimizerState {
    OptimizerConfig config;
    std::size_t step = 0;
    std::vector<double> m;
    std::vector<double> v;
    std::size_t rejected = 0;
    std::size_t consecutive_rejected = 0;

    double current_lr() const;
};

OptimizerState make_optimizer(const OptimizerConfig& config, std::size_t parameter_count);

struct StepRecord {
    bool accepted = true;
    double gradient_norm = 0.0; // before clipping
    double lr = 0.0;
    std::string diagnostic;
};

/// One descent step along `gradient` (the gradient of a loss). Non-finite
/// input leaves params and moments untouched and is reported as rejected.
StepRecord apply_update(DenoiserParams& params, OptimizerState& state, std::span<const double> gradient);

} // namespace sdrl
