// SPDX-License-Identifier: Apache-2.0
#include "sdrl/export.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace sdrl {

namespace {

std::string num(double v) {
    char buf[64];
    auto r = std::to_chars(buf, buf + sizeof buf, v); // shortest round-trip form
    return std::string(buf, r.ptr);
}

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) out.push_back(cell);
    return out;
}

double real(const std::string& s) { return std::strtod(s.c_str(), nullptr); }

} // namespace

ExportKind parse_export_kind(const std::string& s) {
    if (s == "reward_curve") return ExportKind::reward_curve;
    if (s == "spike_rate") return ExportKind::spike_rate;
    if (s == "threshold_curve") return ExportKind::threshold_curve;
    if (s == "ratio_norm_scatter") return ExportKind::ratio_norm_scatter;
    throw ConfigError("unknown export kind '" + s +
                      "' (expected reward_curve, spike_rate, threshold_curve or ratio_norm_scatter)");
}

std::vector<MetricRow> read_metrics(const std::filesystem::path& csv) {
    std::ifstream is(csv);
    if (!is) throw ValidationError("cannot read " + csv.string());
    std::string line;
    std::getline(is, line);
    const auto header = split(line);
    if (header.size() < 13 || header[0] != "step") throw ValidationError("unexpected metrics header in " + csv.string());
    std::vector<MetricRow> rows;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        auto f = split(line);
        if (f.size() != header.size()) throw ValidationError("malformed metrics row: " + line);
        MetricRow r;
        r.step = std::stoull(f[0]);
        r.inner_step = std::stoull(f[1]);
        r.estimator = parse_estimator(f[2]);
        r.reward_mean = real(f[3]);
        r.update_norm = real(f[4]);
        r.spike = f[5] == "1";
        r.spike_threshold = real(f[6]);
        r.d_i = real(f[7]);
        r.s_i = real(f[8]);
        r.ratio_min = real(f[9]);
        r.ratio_max = real(f[10]);
        r.alpha_max = real(f[11]);
        r.rejected_step = f[12] == "1";
        if (f.size() > 13) r.max_sample_norm = real(f[13]);
        if (f.size() > 14) r.h_max = real(f[14]);
        if (f.size() > 15) r.log_ratio_max = real(f[15]);
        rows.push_back(r);
    }
    return rows;
}

std::vector<SpikeResult> recompute_spikes(const std::vector<MetricRow>& rows, std::size_t window, double delta) {
    SpikeTracker tracker(window, delta);
    std::vector<SpikeResult> out;
    out.reserve(rows.size());
    for (const auto& r : rows) {
        const bool ok = !r.rejected_step && std::isfinite(r.update_norm);
        auto s = tracker.observe(r.update_norm, ok);
        if (!ok) s.spike = true;
        out.push_back(s);
    }
    return out;
}

double spike_rate(const std::vector<SpikeResult>& flags) {
    std::size_t n = 0, k = 0;
    for (const auto& f : flags) {
        if (f.warm_up && !f.spike) continue;
        ++n;
        k += f.spike ? 1 : 0;
    }
    return n == 0 ? 0.0 : static_cast<double>(k) / static_cast<double>(n);
}

std::string export_plot_data(const std::filesystem::path& dir, ExportKind kind) {
    const auto rows = read_metrics(dir / "metrics.csv");
    std::ostringstream os;
    switch (kind) {
    case ExportKind::reward_curve: {
        os << "step,value\n";
        bool first = true;
        std::size_t last = 0;
        for (const auto& r : rows) {
            if (!first && r.step == last) continue;
            os << r.step << "," << num(r.reward_mean) << "\n";
            first = false;
            last = r.step;
        }
        break;
    }
    case ExportKind::spike_rate: {
        const RunConfig c = load_config(dir / "config.txt");
        const auto flags = recompute_spikes(rows, c.spike_window, c.spike_delta);
        os << "step,value,series\n";
        for (std::size_t i = 0; i < flags.size(); ++i) os << i << "," << (flags[i].spike ? 1 : 0) << ",spike\n";
        break;
    }
    case ExportKind::threshold_curve: {
        os << "step,value\n";
        for (std::size_t i = 0; i < rows.size(); ++i)
            if (std::isfinite(rows[i].spike_threshold)) os << i << "," << num(rows[i].spike_threshold) << "\n";
        break;
    }
    case ExportKind::ratio_norm_scatter: {
        os << "log10_ratio,log10_update_norm\n";
        for (const auto& r : rows) {
            const double lr = r.log_ratio_max / std::log(10.0), ln = std::log10(r.update_norm);
            if (std::isfinite(lr) && std::isfinite(ln)) os << num(lr) << "," << num(ln) << "\n";
        }
        break;
    }
    }
    return os.str();
}

} // namespace sdrl
