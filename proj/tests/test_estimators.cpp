// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "sdrl/config.hpp"
#include "sdrl/estimators.hpp"
#include "sdrl/optimizer.hpp"
#include "sdrl/runner.hpp"
#include "support.hpp"

using namespace sdrl;

namespace {
using Vecs = std::vector<std::vector<double>>;

UpdateVector update(const std::vector<double>& adv, const std::vector<double>& l, const Vecs& h, Estimator e,
                    ClipConfig clip) {
    std::vector<std::span<const double>> views(h.begin(), h.end());
    return group_update(adv, l, views, e, clip);
}

// sum_j c_j A_j h_j written out directly.
std::vector<double> combine(const std::vector<double>& coef, const std::vector<double>& adv, const Vecs& h) {
    std::vector<double> out(h[0].size(), 0.0);
    for (std::size_t j = 0; j < h.size(); ++j)
        for (std::size_t p = 0; p < out.size(); ++p) out[p] += coef[j] * adv[j] * h[j][p];
    return out;
}

RunConfig tiny_run(Estimator e, std::uint64_t seed) {
    RunConfig c;
    c.task = "copy";
    c.task_params = {4, 4, 4, 2};
    c.model.vocab_size = 5;
    c.model.embed_dim = 8;
    c.model.max_seq_len = 8;
    c.model.block_size = 2;
    c.group_size = 6;
    c.num_inner = 2;
    c.total_steps = 2;
    c.estimator = e;
    c.clip = {ClipSpace::linear, 0.2};
    c.steps_per_block = 2;
    c.seed = seed;
    return c;
}
} // namespace

TEST_CASE("advantages") {
    for (auto mode : {AdvantageMode::standardized, AdvantageMode::raw_centered})
        for (double a : compute_advantages(std::vector<double>{1, 1, 1, 1}, mode)) CHECK(a == 0.0);
    auto s = compute_advantages(std::vector<double>{1, 0}, AdvantageMode::standardized);
    CHECK(s[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(s[1] == doctest::Approx(-1.0).epsilon(1e-12));
    auto r = compute_advantages(std::vector<double>{2, 0}, AdvantageMode::raw_centered);
    CHECK(r == std::vector<double>{1.0, -1.0});
    CHECK_THROWS_AS(compute_advantages(std::vector<double>{1}, AdvantageMode::standardized), ValidationError);

    Rng rng(4);
    for (int t = 0; t < 200; ++t) {
        std::vector<double> rw(2 + rng() % 10);
        for (double& v : rw) v = uniform01(rng);
        auto a = compute_advantages(rw, AdvantageMode::standardized);
        double m = 0.0, v = 0.0;
        for (double x : a) m += x / static_cast<double>(a.size());
        for (double x : a) v += (x - m) * (x - m) / static_cast<double>(a.size());
        CHECK(std::abs(m) <= 1e-10);
        CHECK(std::abs(std::sqrt(v) - 1.0) <= 1e-10);
        auto scaled = rw;
        for (double& x : scaled) x *= 37.5;
        auto b = compute_advantages(scaled, AdvantageMode::standardized);
        for (std::size_t j = 0; j < a.size(); ++j) CHECK(b[j] == doctest::Approx(a[j]).epsilon(1e-12));
    }
}

TEST_CASE("estimators agree on policy") {
    Rng rng(5);
    for (int t = 0; t < 100; ++t) {
        const std::size_t g = 2 + rng() % 8, d = 5;
        Vecs h(g, std::vector<double>(d));
        for (auto& v : h) v = test::random_tensor(rng, 1, d).values;
        std::vector<double> rw(g);
        for (double& v : rw) v = static_cast<double>(rng() % 2);
        auto adv = compute_advantages(rw, AdvantageMode::standardized);
        std::vector<double> zero(g, 0.0);
        ClipConfig clip{ClipSpace::linear, 0.2};
        auto pg = update(adv, zero, h, Estimator::pg, clip);
        auto pg_ref = combine(std::vector<double>(g, 1.0 / static_cast<double>(g)), adv, h);
        for (std::size_t p = 0; p < d; ++p) CHECK(pg.direction[p] == doctest::Approx(pg_ref[p]).epsilon(1e-12));
        for (auto e : {Estimator::grpo, Estimator::uc_grpo, Estimator::stabledrl}) {
            auto u = update(adv, zero, h, e, clip);
            for (std::size_t p = 0; p < d; ++p) CHECK(std::abs(u.direction[p] - pg.direction[p]) <= 1e-14);
        }
        CHECK(std::abs(pg.norm - euclidean_norm(pg.direction)) <= 1e-12 * std::max(1.0, pg.norm));

        // positive reward scaling leaves every direction unchanged
        auto rw2 = rw;
        for (double& v : rw2) v *= 3.0;
        auto adv2 = compute_advantages(rw2, AdvantageMode::standardized);
        std::vector<double> l(g);
        for (double& v : l) v = uniform01(rng) - 0.5;
        for (auto e : {Estimator::pg, Estimator::grpo, Estimator::uc_grpo, Estimator::stabledrl}) {
            auto a = update(adv, l, h, e, clip), b = update(adv2, l, h, e, clip);
            for (std::size_t p = 0; p < d; ++p) CHECK(b.direction[p] == doctest::Approx(a.direction[p]).epsilon(1e-10));
        }
    }
}

TEST_CASE("two-sample hand example") {
    Vecs h{{1.0, 0.0}, {0.0, 1.0}};
    std::vector<double> adv{1.0, -1.0}, l{0.0, std::log(1e4)};
    ClipConfig clip{ClipSpace::linear, 0.5};
    auto grpo = update(adv, l, h, Estimator::grpo, clip);
    auto uc = update(adv, l, h, Estimator::uc_grpo, clip);
    auto sd = update(adv, l, h, Estimator::stabledrl, clip);
    CHECK(grpo.norm == doctest::Approx(0.5 * std::sqrt(1.0 + 1e8)).epsilon(1e-10));
    CHECK(uc.norm == doctest::Approx(0.5 * std::sqrt(1.0 + 1.5 * 1.5)).epsilon(1e-12));
    CHECK(sd.norm == doctest::Approx(std::sqrt(1.0 + 1.5 * 1.5) / 2.5).epsilon(1e-12));
    CHECK(sd.norm <= 1.0);
    CHECK(sd.per_sample_norms == std::vector<double>{1.0, 1.0});

    std::vector<std::span<const double>> short_views{h[0]};
    CHECK_THROWS_AS(group_update(adv, l, short_views, Estimator::pg, clip), DimensionError);
}

TEST_CASE("average of group updates") {
    Vecs h{{1.0, 2.0}, {3.0, -1.0}};
    ClipConfig clip{ClipSpace::linear, 0.2};
    auto a = update({1.0, -1.0}, {0.0, 0.0}, h, Estimator::pg, clip);
    auto b = update({-1.0, 1.0}, {0.0, 0.1}, h, Estimator::stabledrl, clip);
    std::vector<UpdateVector> both{a, b};
    auto m = average_updates(both);
    for (std::size_t p = 0; p < 2; ++p) CHECK(m.direction[p] == doctest::Approx(0.5 * (a.direction[p] + b.direction[p])));
    CHECK(m.norm == doctest::Approx(euclidean_norm(m.direction)).epsilon(1e-14));
}

TEST_CASE("optimizer steps") {
    auto p = test::small_model(1);
    const auto theta = p.flatten();
    const std::size_t n = theta.size();
    std::vector<double> zero(n, 0.0), g(n);
    Rng rng(6);
    for (double& v : g) v = uniform01(rng) - 0.5;

    OptimizerConfig sgd;
    sgd.lr = 0.03;
    auto st = make_optimizer(sgd, n);
    auto rec = apply_update(p, st, zero);
    CHECK(rec.accepted);
    CHECK(st.step == 1);
    CHECK(p.flatten() == theta);

    apply_update(p, st, g);
    auto after = p.flatten();
    for (std::size_t i = 0; i < n; ++i) CHECK(after[i] == theta[i] - 0.03 * g[i]);

    auto q = test::small_model(1);
    OptimizerConfig adam;
    adam.kind = OptimizerKind::adamw;
    adam.lr = 0.01;
    auto sa = make_optimizer(adam, n);
    apply_update(q, sa, g);
    auto qa = q.flatten();
    for (std::size_t i = 0; i < n; ++i) {
        // bias-corrected first moment is g, second is g^2
        const double expect = theta[i] - 0.01 * (g[i] / (std::abs(g[i]) + 1e-8) + 0.1 * theta[i]);
        CHECK(qa[i] == doctest::Approx(expect).epsilon(1e-12));
    }

    auto r = test::small_model(1);
    OptimizerConfig clipped = sgd;
    clipped.grad_clip = 0.2;
    auto sc = make_optimizer(clipped, n);
    apply_update(r, sc, g);
    auto ra = r.flatten();
    std::vector<double> delta(n);
    for (std::size_t i = 0; i < n; ++i) delta[i] = (theta[i] - ra[i]) / 0.03;
    CHECK(euclidean_norm(delta) == doctest::Approx(0.2).epsilon(1e-10));

    auto bad = g;
    bad[3] = NAN;
    auto before = r.flatten();
    auto rj = apply_update(r, sc, bad);
    CHECK_FALSE(rj.accepted);
    CHECK(!rj.diagnostic.empty());
    CHECK(sc.consecutive_rejected == 1);
    CHECK(r.flatten() == before);

    OptimizerConfig decay = sgd;
    decay.decay_steps = 4;
    auto sd = make_optimizer(decay, n);
    CHECK(sd.current_lr() == 0.03);
    apply_update(r, sd, zero);
    CHECK(sd.current_lr() == doctest::Approx(0.0225));
}

TEST_CASE("inner loop traces") {
    SUBCASE("identical seeds give identical traces") {
        auto a = train(tiny_run(Estimator::stabledrl, 3));
        auto b = train(tiny_run(Estimator::stabledrl, 3));
        REQUIRE(a.rows.size() == b.rows.size());
        for (std::size_t i = 0; i < a.rows.size(); ++i) CHECK(format_row(a.rows[i]) == format_row(b.rows[i]));
    }
    SUBCASE("one on-policy inner step") {
        auto c = tiny_run(Estimator::stabledrl, 4);
        c.num_inner = 1;
        c.total_steps = 1;
        c.coupling = Coupling::shared_masks;
        c.drift_every = 1;
        auto r = train(c);
        REQUIRE(r.rows.size() == 1);
        CHECK(r.rows[0].ratio_min == 1.0);
        CHECK(r.rows[0].ratio_max == 1.0);
        CHECK((std::isnan(r.rows[0].d_i) || r.rows[0].d_i == 0.0));
        c.estimator = Estimator::pg;
        auto q = train(c);
        CHECK(q.rows[0].update_norm == doctest::Approx(r.rows[0].update_norm).epsilon(1e-12));
    }
    SUBCASE("heavy-tailed noise separates GRPO from StableDRL") {
        int wins = 0;
        for (std::uint64_t s = 0; s < 20; ++s) {
            auto c = tiny_run(Estimator::grpo, 100 + s);
            c.inject_noise = true;
            c.noise = TailEnvelope{NoiseFamily::student_t, 3.0, 2.0};
            c.total_steps = 1;
            auto g = train(c);
            c.estimator = Estimator::stabledrl;
            auto d = train(c);
            double gm = 0.0, dm = 0.0;
            for (auto& r : g.rows) gm = std::max(gm, r.update_norm);
            for (auto& r : d.rows) dm = std::max(dm, r.update_norm);
            wins += gm > 10.0 * dm;
        }
        CHECK(wins >= 1);
    }
}
