// SPDX-License-Identifier: Apache-2.0
// Command-line front end: run, verify, stress, mask-dump, export.
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "sdrl/config.hpp"
#include "sdrl/errors.hpp"
#include "sdrl/export.hpp"
#include "sdrl/kernels.hpp"
#include "sdrl/runner.hpp"
#include "sdrl/staircase.hpp"
#include "sdrl/verify.hpp"

namespace {

sdrl::RunConfig load_with_env(const std::string& path) {
    auto config = sdrl::load_config(path);
    if (const char* dir = std::getenv("SDRL_OUTPUT_DIR"); dir && *dir) config.output_dir = dir;
    return config;
}

void apply_thread_env() {
    if (const char* t = std::getenv("SDRL_THREADS"); t && *t) {
        const int n = std::atoi(t);
        if (n < 1) throw sdrl::ConfigError("SDRL_THREADS must be a positive integer");
        sdrl::kernels::set_threads(n);
    }
}

double run_spike_rate(const sdrl::RunResult& r, const sdrl::RunConfig& c) {
    return sdrl::spike_rate(sdrl::recompute_spikes(r.rows, c.spike_window, c.spike_delta));
}

int cmd_run(const std::string& path) {
    auto config = load_with_env(path);
    auto r = sdrl::run_experiment(config, config.output_dir);
    std::printf("status=%s updates=%zu spike_rate=%.4f dir=%s\n", r.status.c_str(), r.rows.size(),
                run_spike_rate(r, config), config.output_dir.c_str());
    return 0;
}

int cmd_verify(const std::string& which, double scale, std::uint64_t seed) {
    sdrl::CheckOptions opt;
    opt.scale = scale;
    opt.seed = seed;
    std::vector<std::string> names = which == "all" ? sdrl::check_names() : std::vector<std::string>{which};
    bool all = true;
    for (const auto& n : names) {
        auto r = sdrl::run_check(n, opt);
        all = all && r.passed;
        std::printf("%s %s (%.2fs): %s\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.seconds, r.detail.c_str());
        std::fflush(stdout);
    }
    return all ? 0 : 1;
}

int cmd_stress(const std::string& path) {
    auto base = load_with_env(path);
    base.stress = sdrl::StressCondition::exploding;
    std::printf("estimator,status,updates,spike_rate,initial_reward,final_reward\n");
    for (auto est : {sdrl::Estimator::grpo, sdrl::Estimator::uc_grpo, sdrl::Estimator::stabledrl}) {
        auto c = base;
        c.estimator = est;
        c.output_dir = base.output_dir + "/" + sdrl::to_string(est);
        auto r = sdrl::run_experiment(c, c.output_dir);
        const double r0 = r.step_rewards.empty() ? 0.0 : r.step_rewards.front();
        const double r1 = r.step_rewards.empty() ? 0.0 : r.step_rewards.back();
        std::printf("%s,%s,%zu,%.4f,%.4f,%.4f\n", sdrl::to_string(est), r.status.c_str(), r.rows.size(),
                    run_spike_rate(r, c), r0, r1);
        std::fflush(stdout);
    }
    return 0;
}

int cmd_mask_dump(std::size_t n, std::size_t block) {
    std::fputs(sdrl::render_mask(sdrl::build_staircase_mask(n, block)).c_str(), stdout);
    return 0;
}

int cmd_export(const std::string& dir, const std::string& kind, const std::string& out) {
    const auto csv = sdrl::export_plot_data(dir, sdrl::parse_export_kind(kind));
    if (out.empty()) {
        std::fputs(csv.c_str(), stdout);
    } else {
        std::ofstream f(out, std::ios::binary);
        if (!f) throw sdrl::ConfigError("cannot write " + out);
        f << csv;
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"StableDRL lab"};
    app.require_subcommand(1);

    std::string config_path, which = "all", run_dir, kind, out;
    double scale = 1.0;
    std::uint64_t seed = sdrl::CheckOptions{}.seed;
    std::size_t n = 8, block = 4;

    auto* run = app.add_subcommand("run", "train one configuration");
    run->add_option("config", config_path)->required()->check(CLI::ExistingFile);
    auto* verify = app.add_subcommand("verify", "run property checks");
    verify->add_option("check", which, "check name or 'all'");
    verify->add_option("--scale", scale, "multiplier on trial counts");
    verify->add_option("--seed", seed);
    auto* stress = app.add_subcommand("stress", "run grpo, uc_grpo and stabledrl under exploding weights");
    stress->add_option("config", config_path)->required()->check(CLI::ExistingFile);
    auto* mask = app.add_subcommand("mask-dump", "print the staircase mask as a 0/1 grid");
    mask->add_option("--n", n)->required();
    mask->add_option("--block", block)->required();
    auto* exp = app.add_subcommand("export", "write plot data from a run directory");
    exp->add_option("run_dir", run_dir)->required()->check(CLI::ExistingDirectory);
    exp->add_option("--kind", kind, "reward_curve | spike_rate | threshold_curve | ratio_norm_scatter")->required();
    exp->add_option("--out", out, "output file (default stdout)");

    CLI11_PARSE(app, argc, argv);

    try {
        apply_thread_env();
        if (*run) return cmd_run(config_path);
        if (*verify) return cmd_verify(which, scale, seed);
        if (*stress) return cmd_stress(config_path);
        if (*mask) return cmd_mask_dump(n, block);
        if (*exp) return cmd_export(run_dir, kind, out);
    } catch (const sdrl::ConfigError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
