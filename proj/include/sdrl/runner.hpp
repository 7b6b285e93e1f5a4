// SPDX-License-Identifier: Apache-2.0
#pragma once

// Outer loop: snapshot theta_old, sample groups, score them, then run the
// inner updates against the frozen denominators and log one row per update.

#include <cstddef>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "sdrl/config.hpp"

namespace sdrl {

struct MetricRow {
    std::size_t step = 0;
    std::size_t inner_step = 0;
    Estimator estimator = Estimator::pg;
    double reward_mean = 0.0;
    double update_norm = 0.0;
    bool spike = false;
    double spike_threshold = 0.0;
    double d_i = 0.0;
    double s_i = 0.0;
    double ratio_min = 0.0;
    double ratio_max = 0.0;
    double alpha_max = 0.0;
    bool rejected_step = false;
    double max_sample_norm = 0.0; // max_j ||A_j h_j|| over the step's groups
    double h_max = 0.0;           // upper clip weight times max_sample_norm
    double log_ratio_max = 0.0;
};

std::string metrics_header();
std::string format_row(const MetricRow& row);

struct DriftTraceRow {
    std::size_t inner_step = 0;
    double update_norm = 0.0;
    bool spike = false;
    double spike_threshold = 0.0;
    bool warm_up = false;
    double d_i = 0.0;
    double s_i = 0.0;
    std::vector<double> log_ratios;
    double alpha_max = 0.0;
    bool rejected = false;
    double max_sample_norm = 0.0;
    double h_max = 0.0;
};

struct DriftTrace {
    std::vector<DriftTraceRow> steps;
    bool collapsed = false;
};

/// Shared state threaded through the inner loop.
struct TrainingState {
    DenoiserParams params;
    OptimizerState optimizer;
    SpikeTracker spikes;
};

/// Denominator ELBOs under theta_old, one per member (stress-aware).
void score_denominators(RolloutGroup& group, const DenoiserParams& params_old, const RunConfig& config,
                        std::uint64_t group_seed);

/// num_inner updates on fixed groups. Each step re-estimates the numerator
/// ELBOs under the current parameters, forms fresh score vectors, applies
/// the estimator and steps the optimizer.
DriftTrace inner_update_loop(std::vector<RolloutGroup>& groups, TrainingState& state, const DenoiserParams& params_old,
                             const RunConfig& config, std::uint64_t step_seed);

struct RunResult {
    std::string status = "completed";
    std::vector<MetricRow> rows;
    std::vector<double> step_rewards;
    DenoiserParams initial_params;
    DenoiserParams final_params;
};

using RowCallback = std::function<void(const MetricRow&)>;

/// In-memory run.
RunResult train(const RunConfig& config, const RowCallback& on_row = {});

/// Writes config.txt, checkpoint_init.bin, metrics.csv, checkpoint_final.bin
/// and status.txt into `out_dir` (created if needed).
RunResult run_experiment(const RunConfig& config, const std::filesystem::path& out_dir);

} // namespace sdrl
