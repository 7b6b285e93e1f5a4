// SPDX-License-Identifier: Apache-2.0
// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "sdrl/config.hpp"
#include "sdrl/export.hpp"
#include "sdrl/runner.hpp"
#include "sdrl/verify.hpp"

using namespace sdrl;
namespace fs = std::filesystem;

namespace {

struct Line {
    std::string name;
    bool pass;
    double seconds;
    std::string detail;
};

std::vector<Line> results;

void report(Line l) {
    std::printf("%s %s (%.1fs): %s\n", l.pass ? "PASS" : "FAIL", l.name.c_str(), l.seconds, l.detail.c_str());
    std::fflush(stdout);
    results.push_back(std::move(l));
}

double since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void from_check(const std::string& label, const std::string& check, double max_seconds = 0.0) {
    auto r = run_check(check);
    bool ok = r.passed;
    std::string detail = r.detail;
    if (max_seconds > 0.0 && r.seconds >= max_seconds) {
        ok = false;
        detail += "; over the time budget";
    }
    report({label, ok, r.seconds, detail});
}

// (step, value) pairs from an exported two-column CSV.
std::vector<std::pair<double, double>> read_pairs(const std::string& text) {
    std::vector<std::pair<double, double>> out;
    std::istringstream is(text);
    std::string line;
    std::getline(is, line);
    while (std::getline(is, line)) {
        auto c = line.find(',');
        auto c2 = line.find(',', c + 1);
        out.push_back({std::stod(line.substr(0, c)), std::stod(line.substr(c + 1, c2 - c - 1))});
    }
    return out;
}

double window_mean(const std::vector<std::pair<double, double>>& curve, bool head, std::size_t w) {
    const std::size_t n = std::min(w, curve.size());
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += curve[head ? i : curve.size() - n + i].second;
    return n ? s / static_cast<double>(n) : 0.0;
}

std::string status_of(const fs::path& dir) {
    std::ifstream is(dir / "status.txt");
    std::string first;
    std::getline(is, first);
    return first.substr(first.find('=') + 1);
}

RunConfig with(RunConfig c, Estimator e, std::uint64_t seed) {
    c.estimator = e;
    c.seed = seed;
    return c;
}

void stress_dynamics(const fs::path& cfg, const fs::path& root) {
    const auto t0 = std::chrono::steady_clock::now();
    const RunConfig base = load_config(cfg);
    int grpo_worse = 0, sdrl_kept = 0;
    for (std::uint64_t s = 1; s <= 20; ++s) {
        const auto gdir = root / ("seed" + std::to_string(s)) / "grpo";
        const auto ddir = root / ("seed" + std::to_string(s)) / "stabledrl";
        run_experiment(with(base, Estimator::grpo, s), gdir);
        run_experiment(with(base, Estimator::stabledrl, s), ddir);
        const double gr = spike_rate(recompute_spikes(read_metrics(gdir / "metrics.csv"), 50, 0.3));
        const double dr = spike_rate(recompute_spikes(read_metrics(ddir / "metrics.csv"), 50, 0.3));
        const bool collapsed = status_of(gdir) == "collapsed";
        grpo_worse += collapsed || gr > 2.0 * dr;
        const auto curve = read_pairs(export_plot_data(ddir, ExportKind::reward_curve));
        const double r0 = window_mean(curve, true, 10), r1 = window_mean(curve, false, 10);
        sdrl_kept += r1 >= r0;
        char buf[160];
        std::snprintf(buf, sizeof buf, "  seed %2llu: grpo %s spike %.3f | stabledrl spike %.3f reward %.3f -> %.3f\n",
                      static_cast<unsigned long long>(s), collapsed ? "collapsed" : "completed", gr, dr, r0, r1);
        std::fputs(buf, stdout);
        std::fflush(stdout);
    }
    const double secs = since(t0);
    std::ostringstream d;
    d << "GRPO collapsed or >2x spike rate in " << grpo_worse << "/20 pairs (need 15); StableDRL final reward >= "
      << "initial in " << sdrl_kept << "/20 (need 18)";
    report({"stress-protocol dynamics", grpo_worse >= 15 && sdrl_kept >= 18 && secs < 1800.0, secs, d.str()});
}

void threshold_trends(const fs::path& cfg, const fs::path& root) {
    const auto t0 = std::chrono::steady_clock::now();
    const RunConfig base = load_config(cfg);
    bool ok = true;
    std::ostringstream d;
    for (auto e : {Estimator::grpo, Estimator::uc_grpo, Estimator::stabledrl}) {
        const auto dir = root / to_string(e);
        run_experiment(with(base, e, base.seed), dir);
        const auto th = read_pairs(export_plot_data(dir, ExportKind::threshold_curve));
        const auto rows = read_metrics(dir / "metrics.csv");
        if (e == Estimator::grpo) {
            const double growth = th.size() >= 2 ? th.back().second / th.front().second : 0.0;
            const bool pass = std::isfinite(growth) && growth > 3.0;
            d << "grpo threshold final/initial " << growth << (pass ? " ok" : " (need > 3)");
            ok &= pass;
        } else if (e == Estimator::uc_grpo) {
            std::size_t post = 0, near = 0;
            for (std::size_t i = base.spike_window; i < rows.size(); ++i) {
                ++post;
                near += rows[i].update_norm > 0.9 * rows[i].h_max;
            }
            const double frac = post ? static_cast<double>(near) / static_cast<double>(post) : 0.0;
            bool bounded = true;
            for (const auto& r : rows)
                if (!r.rejected_step) bounded &= r.update_norm <= r.h_max * (1.0 + 1e-9);
            const bool pass = bounded && frac >= 0.2;
            d << "; uc_grpo " << (bounded ? "bounded" : "UNBOUNDED") << ", near H_max in " << frac * 100.0
              << "% of post-warm-up steps" << (pass ? " ok" : " (need >= 20%)");
            ok &= pass;
        } else {
            std::size_t bad = 0;
            for (const auto& r : rows)
                if (!r.rejected_step) bad += r.update_norm > r.max_sample_norm * (1.0 + 1e-9);
            d << "; stabledrl norms above the per-sample max: " << bad << (bad == 0 ? " ok" : "");
            ok &= bad == 0;
        }
    }
    report({"stability-trend reproduction", ok, since(t0), d.str()});
}

} // namespace

int main(int argc, char** argv) {
    const fs::path src = argc > 1 ? fs::path(argv[1]) : fs::path(SDRL_SOURCE_DIR);
    const fs::path out = argc > 2 ? fs::path(argv[2]) : fs::path("acceptance_runs");
    fs::remove_all(out);

    from_check("convex-hull bound", "convex_hull", 60.0);
    from_check("saturation bound", "saturation_bound");
    from_check("scale decomposition", "scale_decomposition");
    from_check("GRPO unboundedness", "grpo_unbounded");
    from_check("exceedance identity", "exceedance_identity", 120.0);
    from_check("staircase correctness", "staircase");
    from_check("gradient correctness", "elbo_gradients");
    from_check("numerical stability", "softmax_stability");
    stress_dynamics(src / "configs" / "copy_stress.cfg", out / "stress");
    threshold_trends(src / "configs" / "copy_trend.cfg", out / "trend");

    int failed = 0;
    for (const auto& l : results) failed += !l.pass;
    std::printf("%zu/%zu criteria passed\n", results.size() - static_cast<std::size_t>(failed), results.size());
    return failed ? 1 : 0;
}
