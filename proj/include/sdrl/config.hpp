// SPDX-License-Identifier: Apache-2.0
#pragma once

// Flat `key = value` run configuration. `version` must be present, unknown
// keys are rejected, `#` starts a comment.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sdrl/diffusion.hpp"
#include "sdrl/estimators.hpp"
#include "sdrl/instability.hpp"
#include "sdrl/optimizer.hpp"
#include "sdrl/tasks.hpp"

namespace sdrl {

inline constexpr int kConfigVersion = 1;

enum class StressCondition { normal, exploding };

struct RunConfig {
    std::string task = "copy";
    TaskParams task_params;
    DenoiserConfig model;

    std::size_t group_size = 8;
    std::size_t prompts_per_step = 1;
    std::size_t num_inner = 2;
    std::size_t total_steps = 100;
    Estimator estimator = Estimator::stabledrl;
    ClipConfig clip;
    AdvantageMode advantage_mode = AdvantageMode::standardized;

    // ratio estimation
    std::size_t elbo_m = 2;
    double t_floor = 0.15;
    MaskPolicy ratio_policy = MaskPolicy::uniform;
    Coupling coupling = Coupling::independent;
    Arch arch = Arch::full;

    // score surrogate
    std::size_t surrogate_m = 2;
    MaskPolicy surrogate_policy = MaskPolicy::blockwise;
    double sample_clip = 0.0; // bound on ||A_j h_j||; 0 disables

    // decoding
    std::size_t steps_per_block = 4;
    double temperature = 1.0;

    OptimizerConfig optimizer;
    bool lr_decay = false;

    StressCondition stress = StressCondition::normal;
    StressConfig stress_config;

    bool inject_noise = false; // adds synthetic log-ratio noise drawn from `noise`
    TailEnvelope noise;

    std::size_t spike_window = 50;
    double spike_delta = 0.3;
    double a0 = 0.5;
    std::size_t drift_m = 64;
    std::size_t drift_every = 0; // measure D_i / S_i every k-th inner step; 0 disables
    std::size_t max_rejections = 50;

    std::uint64_t seed = 0;
    std::string output_dir = "runs/run";

    /// Throws ConfigError for inconsistent settings.
    void validate() const;
};

RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);
std::string serialize_config(const RunConfig& config);
/// Applies one `key = value` assignment.
void set_config_value(RunConfig& config, const std::string& key, const std::string& value);
std::vector<std::string> config_keys();

const char* to_string(StressCondition s);
const char* to_string(Arch a);
const char* to_string(Coupling c);

} // namespace sdrl
