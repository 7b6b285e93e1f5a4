// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "sdrl/runner.hpp"

namespace sdrl {

enum class ExportKind { reward_curve, spike_rate, threshold_curve, ratio_norm_scatter };

/// Throws ConfigError (a usage error at the CLI) for an unknown name.
ExportKind parse_export_kind(const std::string& s);

/// Parses a metrics.csv produced by run_experiment.
std::vector<MetricRow> read_metrics(const std::filesystem::path& csv);

/// Tidy CSV text for one plot.
std::string export_plot_data(const std::filesystem::path& run_dir, ExportKind kind);

/// Recomputed spike flags for a logged run: rejected rows count as spikes and
/// stay out of the moving window, matching what training logged.
std::vector<SpikeResult> recompute_spikes(const std::vector<MetricRow>& rows, std::size_t window, double delta);

/// Fraction of post-warm-up updates flagged as spikes.
double spike_rate(const std::vector<SpikeResult>& flags);

} // namespace sdrl
