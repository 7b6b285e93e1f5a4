// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <memory>

#include "sdrl/errors.hpp"
#include "support.hpp"

using namespace sdrl;
using sdrl::test::max_fd_error;
using sdrl::test::random_tensor;

namespace {

// Contract any output to a scalar with fixed random weights.
ad::Var contract(ad::Tape& tape, ad::Var y, std::uint64_t seed) {
    Rng rng(seed);
    const Tensor& v = y.value();
    Tensor w = v;
    std::normal_distribution<double> n(0.0, 1.0);
    for (double& x : w.values) x = n(rng);
    return ad::sum(ad::mul(y, tape.constant(w)));
}

// Scalar-loop attention written independently of the kernels.
Tensor loop_attention(const Tensor& q, const Tensor& k, const Tensor& v, const BinaryMask& mask) {
    const std::size_t n = q.rows(), m = k.rows(), d = q.cols(), dv = v.cols();
    Tensor out = Tensor::zeros(n, dv);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> s(m, 0.0);
        double mx = -1e300;
        bool any = false;
        for (std::size_t j = 0; j < m; ++j) {
            if (!mask(i, j)) continue;
            double dot = 0.0;
            for (std::size_t c = 0; c < d; ++c) dot += q(i, c) * k(j, c);
            s[j] = dot / std::sqrt(static_cast<double>(d));
            mx = std::max(mx, s[j]);
            any = true;
        }
        if (!any) continue;
        double z = 0.0;
        for (std::size_t j = 0; j < m; ++j)
            if (mask(i, j)) z += std::exp(s[j] - mx);
        for (std::size_t j = 0; j < m; ++j)
            if (mask(i, j))
                for (std::size_t c = 0; c < dv; ++c) out(i, c) += std::exp(s[j] - mx) / z * v(j, c);
    }
    return out;
}

} // namespace

TEST_CASE("identity and quadratic gradients") {
    ad::Tape tape;
    auto theta = tape.parameter(Tensor::scalar(3.0));
    auto g = tape.backward(theta, Tensor::scalar(1.0));
    CHECK(g[0].values[0] == 1.0);

    ad::Tape t2;
    auto x = t2.parameter(Tensor::vector({1, 2, 3}));
    auto g2 = t2.backward(ad::sum(ad::mul(x, x)));
    CHECK(g2[0].values == std::vector<double>{2, 4, 6});
}

TEST_CASE("every primitive matches central differences") {
    using test::ScalarGraph;
    double worst = 0.0;
    for (std::uint64_t s = 0; s < 100; ++s) {
        Rng rng(derive_seed(11, "prim", {s}));
        const std::size_t r = 2 + s % 3, c = 2 + (s / 3) % 3, k = 2 + (s / 9) % 2;
        auto a = random_tensor(rng, r, c), b = random_tensor(rng, r, c), bm = random_tensor(rng, c, k);
        auto row = Tensor::vector(random_tensor(rng, 1, c).values);
        std::vector<std::pair<ScalarGraph, std::vector<Tensor>>> cases;
        cases.push_back({[s](ad::Tape& t, const std::vector<ad::Var>& v) { return contract(t, ad::matmul(v[0], v[1]), s); }, {a, bm}});
        cases.push_back({[s](ad::Tape& t, const std::vector<ad::Var>& v) { return contract(t, ad::add(v[0], v[1]), s); }, {a, b}});
        cases.push_back({[s](ad::Tape& t, const std::vector<ad::Var>& v) { return contract(t, ad::add_row(v[0], v[1]), s); }, {a, row}});
        cases.push_back({[s](ad::Tape& t, const std::vector<ad::Var>& v) { return contract(t, ad::mul(v[0], v[1]), s); }, {a, b}});
        cases.push_back({[s](ad::Tape& t, const std::vector<ad::Var>& v) { return contract(t, ad::scale(v[0], -1.7), s); }, {a}});
        cases.push_back({[s](ad::Tape& t, const std::vector<ad::Var>& v) { return contract(t, ad::tanh(v[0]), s); }, {a}});
        cases.push_back({[](ad::Tape&, const std::vector<ad::Var>& v) { return ad::sum(v[0]); }, {a}});
        cases.push_back({[s](ad::Tape& t, const std::vector<ad::Var>& v) { return contract(t, ad::gather_rows(v[0], {1, 0, 1}), s); }, {a}});
        cases.push_back({[s](ad::Tape& t, const std::vector<ad::Var>& v) { return contract(t, ad::log_softmax_rows(v[0]), s); }, {a}});
        cases.push_back({[](ad::Tape&, const std::vector<ad::Var>& v) {
                             return ad::pick_sum(v[0], {{0, 1, 0.5}, {1, 0, -2.0}, {0, 1, 1.0}});
                         }, {a}});
        cases.push_back({[s](ad::Tape& t, const std::vector<ad::Var>& v) { return contract(t, ad::slice_rows(v[0], 1, 1), s); }, {a}});
        auto mask = std::make_shared<BinaryMask>(BinaryMask::causal(r));
        if (s % 2) (*mask)(0, 0) = 0; // include an empty row
        cases.push_back({[s, mask](ad::Tape& t, const std::vector<ad::Var>& v) {
                             return contract(t, ad::masked_attention(v[0], v[1], v[2], mask), s);
                         }, {a, b, random_tensor(rng, r, c)}});
        for (auto& [f, in] : cases) worst = std::max(worst, max_fd_error(f, in));
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("log-softmax rows normalize") {
    Rng rng(3);
    auto x = random_tensor(rng, 5, 7, 30.0);
    ad::Tape tape;
    auto y = ad::log_softmax_rows(tape.constant(x)).value();
    for (std::size_t i = 0; i < 5; ++i) {
        double mx = -1e300, z = 0.0;
        for (std::size_t j = 0; j < 7; ++j) mx = std::max(mx, y(i, j));
        for (std::size_t j = 0; j < 7; ++j) z += std::exp(y(i, j) - mx);
        CHECK(std::abs(mx + std::log(z)) <= 1e-12);
    }
}

TEST_CASE("attention special cases and scalar-loop oracle") {
    Rng rng(7);
    SUBCASE("single position returns the value row") {
        auto q = random_tensor(rng, 1, 3), k = random_tensor(rng, 1, 3), v = random_tensor(rng, 1, 3);
        auto out = ad::forward_masked_attention(q, k, v, BinaryMask::ones(1));
        CHECK(out.values == v.values);
    }
    SUBCASE("one-hot row selects that value") {
        auto q = random_tensor(rng, 4, 3), k = random_tensor(rng, 4, 3), v = random_tensor(rng, 4, 3);
        BinaryMask m(4, 4);
        for (std::size_t i = 0; i < 4; ++i) m(i, (i + 2) % 4) = 1;
        auto out = ad::forward_masked_attention(q, k, v, m);
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t c = 0; c < 3; ++c) CHECK(out(i, c) == v((i + 2) % 4, c));
    }
    SUBCASE("full mask against the loop reference") {
        Rng r7(7);
        auto q = random_tensor(r7, 4, 5), k = random_tensor(r7, 4, 5), v = random_tensor(r7, 4, 5);
        auto out = ad::forward_masked_attention(q, k, v, BinaryMask::ones(4));
        auto ref = loop_attention(q, k, v, BinaryMask::ones(4));
        for (std::size_t i = 0; i < out.size(); ++i)
            CHECK(std::abs(out.values[i] - ref.values[i]) <= 1e-12 * std::max(1.0, std::abs(ref.values[i])));
    }
    SUBCASE("empty rows give zeros") {
        auto q = random_tensor(rng, 3, 2), k = random_tensor(rng, 3, 2), v = random_tensor(rng, 3, 2);
        BinaryMask m(3, 3);
        m(1, 0) = 1;
        auto out = ad::forward_masked_attention(q, k, v, m);
        CHECK(out(0, 0) == 0.0);
        CHECK(out(2, 1) == 0.0);
        CHECK(out(1, 1) == v(0, 1));
    }
    SUBCASE("bad mask values and shapes are rejected") {
        auto q = random_tensor(rng, 2, 2), v = random_tensor(rng, 2, 2);
        BinaryMask m = BinaryMask::ones(2);
        m(0, 1) = 2;
        CHECK_THROWS_AS(ad::forward_masked_attention(q, q, v, m), ValidationError);
        CHECK_THROWS_AS(ad::forward_masked_attention(q, random_tensor(rng, 2, 3), v, BinaryMask::ones(2)),
                        DimensionError);
    }
}

TEST_CASE("replay is bit-identical and backward runs in reverse order") {
    Rng rng(5);
    auto a = random_tensor(rng, 3, 4), b = random_tensor(rng, 4, 2);
    ad::Tape tape;
    auto va = tape.parameter(a), vb = tape.parameter(b);
    auto y = ad::sum(ad::tanh(ad::matmul(va, vb)));
    const double before = y.value().values[0];
    auto g1 = tape.backward(y);
    tape.replay();
    CHECK(y.value().values[0] == before);
    auto g2 = tape.backward(y);
    CHECK(g1[0].values == g2[0].values);
    CHECK(g1[1].values == g2[1].values);

    std::vector<std::size_t> order;
    ad::Tape t;
    auto x = t.parameter(Tensor::scalar(1.0));
    ad::Var last = x;
    for (int i = 0; i < 5; ++i) {
        const std::size_t in = last.id;
        last = t.record(
            {in}, [in](const ad::Tape& tp, Tensor& out) { out = tp.node_value(in); },
            [&order, in](ad::Tape& tp, const Tensor&, std::span<const double> g) {
                order.push_back(in);
                auto& buf = tp.grad_buffer(in);
                for (std::size_t k = 0; k < g.size(); ++k) buf[k] += g[k];
            });
    }
    t.backward(last);
    CHECK(order == std::vector<std::size_t>{4, 3, 2, 1, 0});
}

TEST_CASE("shape errors") {
    ad::Tape tape;
    auto a = tape.parameter(Tensor::zeros(2, 3));
    auto b = tape.parameter(Tensor::zeros(2, 3));
    CHECK_THROWS_AS(ad::matmul(a, b), DimensionError);
    CHECK_THROWS_AS(ad::slice_rows(a, 1, 2), DimensionError);
    CHECK_THROWS_AS(ad::gather_rows(a, {5}), ValidationError);
    CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0}), DimensionError);
}
