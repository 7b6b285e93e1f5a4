// SPDX-License-Identifier: Apache-2.0
#include "sdrl/runner.hpp"

#include <charconv>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "sdrl/checkpoint.hpp"
#include "sdrl/kernels.hpp"

namespace sdrl {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string num(double v) {
    char buf[64];
    auto r = std::to_chars(buf, buf + sizeof buf, v); // shortest round-trip form
    return std::string(buf, r.ptr);
}

ElboOptions ratio_options(const RunConfig& c) {
    ElboOptions o;
    o.m = c.elbo_m;
    o.policy = c.ratio_policy;
    o.t_floor = c.t_floor;
    o.arch = c.arch;
    o.corrupt.block_size = c.model.block_size;
    o.corrupt.beta = c.stress_config.beta;
    return o;
}

ElboOptions surrogate_options(const RunConfig& c) {
    ElboOptions o = ratio_options(c);
    o.m = c.surrogate_m;
    o.policy = c.surrogate_policy;
    return o;
}

bool exploding(const RunConfig& c) { return c.stress == StressCondition::exploding; }

DecodeOptions decode_options(const RunConfig& c) {
    DecodeOptions d;
    d.gen_len = c.task_params.response_len;
    d.block_size = c.model.block_size;
    d.steps_per_block = c.steps_per_block;
    d.temperature = c.temperature;
    d.arch = c.arch;
    return d;
}

} // namespace

std::string metrics_header() {
    return "step,inner_step,estimator,reward_mean,update_norm,spike,spike_threshold,D_i,S_i,ratio_min,ratio_max,"
           "alpha_max,rejected_step,max_sample_norm,h_max,log_ratio_max";
}

std::string format_row(const MetricRow& r) {
    std::string s;
    s += std::to_string(r.step) + "," + std::to_string(r.inner_step) + "," + to_string(r.estimator) + ",";
    s += num(r.reward_mean) + "," + num(r.update_norm) + "," + (r.spike ? "1" : "0") + ",";
    s += num(r.spike_threshold) + "," + num(r.d_i) + "," + num(r.s_i) + ",";
    s += num(r.ratio_min) + "," + num(r.ratio_max) + "," + num(r.alpha_max) + "," + (r.rejected_step ? "1" : "0");
    s += "," + num(r.max_sample_norm) + "," + num(r.h_max) + "," + num(r.log_ratio_max);
    return s;
}

void score_denominators(RolloutGroup& group, const DenoiserParams& params_old, const RunConfig& c,
                        std::uint64_t group_seed) {
    const std::size_t g = group.size();
    const ElboOptions opt = ratio_options(c);
    group.elbo_old.assign(g, 0.0);
    kernels::parallel_for(kernels::choose(g << 14), g, [&](std::size_t j) {
        const auto& x = group.rollouts[j];
        auto patterns = group.stressed[j]
                            ? stressed_patterns(x.response_len(), StressRole::denominator, c.stress_config, opt,
                                                derive_seed(group_seed, "stress-den", {j}))
                            : sample_patterns(x.response_len(), opt, derive_seed(group_seed, "den", {j}));
        group.elbo_old[j] = evaluate_patterns(params_old, x, std::move(patterns), c.arch).value;
    });
}

DriftTrace inner_update_loop(std::vector<RolloutGroup>& groups, TrainingState& st, const DenoiserParams& params_old,
                             const RunConfig& c, std::uint64_t step_seed) {
    const ElboOptions ropt = ratio_options(c), sopt = surrogate_options(c);
    DriftTrace trace;
    for (std::size_t i = 0; i < c.num_inner; ++i) {
        DriftTraceRow row;
        row.inner_step = i;
        std::vector<UpdateVector> updates;
        row.alpha_max = 0.0;
        for (std::size_t gi = 0; gi < groups.size(); ++gi) {
            auto& group = groups[gi];
            group.inner_step = i;
            const std::size_t g = group.size();
            const std::uint64_t gseed = derive_seed(step_seed, "group", {gi});
            group.elbo_new.assign(g, 0.0);
            std::vector<std::vector<double>> scores(g);
            kernels::parallel_for(kernels::choose(g << 14), g, [&](std::size_t j) {
                const auto& x = group.rollouts[j];
                std::vector<MaskPattern> num;
                if (group.stressed[j])
                    num = stressed_patterns(x.response_len(), StressRole::numerator, c.stress_config, ropt,
                                            derive_seed(gseed, "stress-num", {j, i}));
                else if (c.coupling == Coupling::shared_masks)
                    num = sample_patterns(x.response_len(), ropt, derive_seed(gseed, "den", {j}));
                else
                    num = sample_patterns(x.response_len(), ropt, derive_seed(gseed, "num", {j, i}));
                group.elbo_new[j] = evaluate_patterns(st.params, x, std::move(num), c.arch).value;
                auto surrogate = sample_patterns(x.response_len(), sopt, derive_seed(gseed, "surrogate", {j, i}));
                scores[j] = elbo_gradient(st.params, x, surrogate, c.arch);
            });
            auto l = group.log_ratios();
            if (c.inject_noise) {
                Rng rng(derive_seed(gseed, "noise", {i}));
                for (double& v : l) v += c.noise.sample(rng);
            }
            if (c.sample_clip > 0.0)
                for (std::size_t j = 0; j < g; ++j) {
                    const double n = std::abs(group.advantages[j]) * euclidean_norm(scores[j]);
                    if (n > c.sample_clip) {
                        const double f = c.sample_clip / n;
                        for (double& v : scores[j]) v *= f;
                    }
                }
            std::vector<std::span<const double>> views(scores.begin(), scores.end());
            updates.push_back(group_update(group.advantages, l, views, c.estimator, c.clip));
            row.log_ratios.insert(row.log_ratios.end(), l.begin(), l.end());
            std::vector<double> finite_l;
            for (double v : l)
                if (std::isfinite(v)) finite_l.push_back(v);
            if (finite_l.size() == l.size() && l.size() >= 2) {
                auto cw = clip_then_softmax(LogRatioSet{l, c.clip});
                row.alpha_max = std::max(row.alpha_max, *std::max_element(cw.alphas.begin(), cw.alphas.end()));
            } else {
                row.alpha_max = kNaN;
            }
        }
        UpdateVector u = average_updates(updates);
        row.update_norm = u.norm;
        row.max_sample_norm = 0.0;
        for (double n : u.per_sample_norms) row.max_sample_norm = std::max(row.max_sample_norm, n);
        row.h_max = c.clip.upper_weight() * row.max_sample_norm;

        if (c.drift_every > 0 && (st.optimizer.step + st.optimizer.rejected) % c.drift_every == 0) {
            ElboOptions dopt = ropt;
            dopt.m = c.drift_m;
            dopt.policy = MaskPolicy::uniform;
            auto ds = measure_drift_state(groups[0].rollouts, groups[0].advantages, st.params, params_old, c.a0, dopt,
                                          derive_seed(step_seed, "drift", {i}));
            row.d_i = ds.d;
            row.s_i = ds.s;
        } else {
            row.d_i = row.s_i = kNaN;
        }

        std::vector<double> loss_grad(u.direction.size());
        for (std::size_t p = 0; p < loss_grad.size(); ++p) loss_grad[p] = -u.direction[p];
        const bool finite = u.finite();
        auto spike = st.spikes.observe(u.norm, finite);
        row.warm_up = spike.warm_up;
        row.spike_threshold = spike.threshold;
        row.spike = finite ? spike.spike : true;
        auto rec = apply_update(st.params, st.optimizer, loss_grad);
        row.rejected = !rec.accepted;
        trace.steps.push_back(std::move(row));
        if (st.optimizer.consecutive_rejected >= c.max_rejections) {
            trace.collapsed = true;
            break;
        }
    }
    return trace;
}

RunResult train(const RunConfig& config, const RowCallback& on_row) {
    config.validate();
    RunConfig c = config;
    c.model.seed = derive_seed(c.seed, "model");
    ToyTask task = make_task(c.task, c.task_params);

    RunResult res;
    TrainingState st{init_denoiser(c.model), {}, SpikeTracker(c.spike_window, c.spike_delta)};
    OptimizerConfig oc = c.optimizer;
    oc.decay_steps = c.lr_decay ? c.total_steps * c.num_inner : 0;
    st.optimizer = make_optimizer(oc, st.params.parameter_count());
    res.initial_params = st.params;
    const DecodeOptions dec = decode_options(c);

    for (std::size_t s = 0; s < c.total_steps; ++s) {
        const DenoiserParams params_old = st.params;
        const std::uint64_t step_seed = derive_seed(c.seed, "step", {s});
        std::vector<RolloutGroup> groups(c.prompts_per_step);
        double reward_sum = 0.0;
        for (std::size_t p = 0; p < c.prompts_per_step; ++p) {
            auto& g = groups[p];
            Rng prng(derive_seed(step_seed, "prompt", {p}));
            g.prompt = task.make_prompt(prng);
            g.rollouts.resize(c.group_size);
            g.rewards.resize(c.group_size);
            kernels::parallel_for(kernels::choose(c.group_size << 14), c.group_size, [&](std::size_t j) {
                g.rollouts[j] = sample_rollout(params_old, g.prompt, dec, derive_seed(step_seed, "rollout", {p, j}));
                g.rewards[j] = task.reward(g.rollouts[j]);
            });
            for (double r : g.rewards) reward_sum += r;
            g.advantages = compute_advantages(g.rewards, c.advantage_mode);
            g.stressed = exploding(c)
                             ? select_stressed(c.group_size, c.stress_config.gamma, derive_seed(step_seed, "stress", {p}))
                             : std::vector<std::uint8_t>(c.group_size, 0);
            score_denominators(g, params_old, c, derive_seed(step_seed, "group", {p}));
        }
        const double reward_mean = reward_sum / static_cast<double>(c.prompts_per_step * c.group_size);
        res.step_rewards.push_back(reward_mean);

        auto trace = inner_update_loop(groups, st, params_old, c, step_seed);
        for (const auto& t : trace.steps) {
            MetricRow r;
            r.step = s;
            r.inner_step = t.inner_step;
            r.estimator = c.estimator;
            r.reward_mean = reward_mean;
            r.update_norm = t.update_norm;
            r.spike = t.spike;
            r.spike_threshold = t.spike_threshold;
            r.d_i = t.d_i;
            r.s_i = t.s_i;
            double lmin = std::numeric_limits<double>::infinity(), lmax = -lmin;
            for (double l : t.log_ratios) {
                lmin = std::min(lmin, l);
                lmax = std::max(lmax, l);
            }
            r.ratio_min = std::exp(lmin);
            r.ratio_max = std::exp(lmax);
            r.log_ratio_max = lmax;
            r.alpha_max = t.alpha_max;
            r.rejected_step = t.rejected;
            r.max_sample_norm = t.max_sample_norm;
            r.h_max = t.h_max;
            res.rows.push_back(r);
            if (on_row) on_row(r);
        }
        if (trace.collapsed) {
            res.status = "collapsed";
            break;
        }
    }
    res.final_params = st.params;
    return res;
}

RunResult run_experiment(const RunConfig& config, const std::filesystem::path& dir) {
    config.validate();
    std::filesystem::create_directories(dir);
    {
        std::ofstream os(dir / "config.txt");
        os << serialize_config(config);
    }
    DenoiserConfig mc = config.model;
    mc.seed = derive_seed(config.seed, "model");
    save_checkpoint(init_denoiser(mc), dir / "checkpoint_init.bin");

    std::ofstream csv(dir / "metrics.csv");
    if (!csv) throw ValidationError("cannot write " + (dir / "metrics.csv").string());
    csv << metrics_header() << "\n";
    auto res = train(config, [&](const MetricRow& r) { csv << format_row(r) << "\n"; });
    csv.flush();

    save_checkpoint(res.final_params, dir / "checkpoint_final.bin");
    std::size_t rejected = 0;
    for (const auto& r : res.rows) rejected += r.rejected_step ? 1 : 0;
    std::ofstream st(dir / "status.txt");
    st << "status=" << res.status << "\n"
       << "outer_steps=" << res.step_rewards.size() << "\n"
       << "updates=" << res.rows.size() << "\n"
       << "rejected=" << rejected << "\n";
    return res;
}

} // namespace sdrl
