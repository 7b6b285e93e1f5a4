// SPDX-License-Identifier: Apache-2.0
#include "sdrl/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <vector>

#ifdef SDRL_HAVE_OPENMP
#include <omp.h>
#endif

namespace sdrl::kernels {

namespace {

constexpr std::size_t kParallelWork = 1u << 16;

bool parallel_enabled(Exec exec) {
#ifdef SDRL_HAVE_OPENMP
    return exec == Exec::parallel && omp_get_max_threads() > 1;
#else
    (void)exec;
    return false;
#endif
}

// Row bodies shared by both execution modes.

void matmul_row(std::span<const double> a, std::span<const double> b, std::span<double> out, std::size_t i,
                std::size_t k, std::size_t n) {
    double* o = out.data() + i * n;
    std::fill(o, o + n, 0.0);
    const double* ar = a.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
        const double av = ar[p];
        if (av == 0.0) continue;
        const double* br = b.data() + p * n;
        for (std::size_t j = 0; j < n; ++j) o[j] += av * br[j];
    }
}

void grad_a_row(std::span<const double> g, std::span<const double> b, std::span<double> out, std::size_t i,
                std::size_t k, std::size_t n) {
    const double* gr = g.data() + i * n;
    double* o = out.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
        const double* br = b.data() + p * n;
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += gr[j] * br[j];
        o[p] += s;
    }
}

void grad_b_row(std::span<const double> a, std::span<const double> g, std::span<double> out, std::size_t p,
                std::size_t m, std::size_t k, std::size_t n) {
    double* o = out.data() + p * n;
    for (std::size_t i = 0; i < m; ++i) {
        const double av = a[i * k + p];
        if (av == 0.0) continue;
        const double* gr = g.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) o[j] += av * gr[j];
    }
}

void attention_row(AttentionDims d, std::span<const double> q, std::span<const double> k,
                   std::span<const double> v, const BinaryMask& mask, std::span<double> out,
                   std::span<double> probs, std::size_t i) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(d.dim));
    double* p = probs.data() + i * d.keys;
    double* o = out.data() + i * d.dim;
    std::fill(p, p + d.keys, 0.0);
    std::fill(o, o + d.dim, 0.0);
    const double* qi = q.data() + i * d.dim;
    double max_score = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (std::size_t j = 0; j < d.keys; ++j) {
        if (!mask(i, j)) continue;
        const double* kj = k.data() + j * d.dim;
        double s = 0.0;
        for (std::size_t c = 0; c < d.dim; ++c) s += qi[c] * kj[c];
        s *= scale;
        p[j] = s;
        max_score = std::max(max_score, s);
        any = true;
    }
    if (!any) return;
    double total = 0.0;
    for (std::size_t j = 0; j < d.keys; ++j) {
        if (!mask(i, j)) continue;
        p[j] = std::exp(p[j] - max_score);
        total += p[j];
    }
    for (std::size_t j = 0; j < d.keys; ++j) {
        if (!mask(i, j)) continue;
        p[j] /= total;
        const double* vj = v.data() + j * d.dim;
        for (std::size_t c = 0; c < d.dim; ++c) o[c] += p[j] * vj[c];
    }
}

// dS row: dS_ij = P_ij (dP_ij - sum_l P_il dP_il), dP_ij = dO_i . V_j
void attention_score_grad_row(AttentionDims d, std::span<const double> v, const BinaryMask& mask,
                              std::span<const double> probs, std::span<const double> grad_out,
                              std::span<double> dscore, std::size_t i) {
    const double* p = probs.data() + i * d.keys;
    const double* go = grad_out.data() + i * d.dim;
    double* ds = dscore.data() + i * d.keys;
    double dot = 0.0;
    for (std::size_t j = 0; j < d.keys; ++j) {
        ds[j] = 0.0;
        if (!mask(i, j)) continue;
        const double* vj = v.data() + j * d.dim;
        double dp = 0.0;
        for (std::size_t c = 0; c < d.dim; ++c) dp += go[c] * vj[c];
        ds[j] = dp;
        dot += p[j] * dp;
    }
    for (std::size_t j = 0; j < d.keys; ++j) {
        if (!mask(i, j)) continue;
        ds[j] = p[j] * (ds[j] - dot);
    }
}

void attention_grad_q_row(AttentionDims d, std::span<const double> k, const BinaryMask& mask,
                          std::span<const double> dscore, std::span<double> grad_q, std::size_t i) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(d.dim));
    const double* ds = dscore.data() + i * d.keys;
    double* gq = grad_q.data() + i * d.dim;
    for (std::size_t j = 0; j < d.keys; ++j) {
        if (!mask(i, j)) continue;
        const double w = ds[j] * scale;
        const double* kj = k.data() + j * d.dim;
        for (std::size_t c = 0; c < d.dim; ++c) gq[c] += w * kj[c];
    }
}

void attention_grad_kv_row(AttentionDims d, std::span<const double> q, const BinaryMask& mask,
                           std::span<const double> probs, std::span<const double> grad_out,
                           std::span<const double> dscore, std::span<double> grad_k, std::span<double> grad_v,
                           std::size_t j) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(d.dim));
    double* gk = grad_k.data() + j * d.dim;
    double* gv = grad_v.data() + j * d.dim;
    for (std::size_t i = 0; i < d.queries; ++i) {
        if (!mask(i, j)) continue;
        const double p = probs[i * d.keys + j];
        const double w = dscore[i * d.keys + j] * scale;
        const double* go = grad_out.data() + i * d.dim;
        const double* qi = q.data() + i * d.dim;
        for (std::size_t c = 0; c < d.dim; ++c) {
            gv[c] += p * go[c];
            gk[c] += w * qi[c];
        }
    }
}

template <class Body>
void for_rows(Exec exec, std::size_t count, Body&& body) {
    if (parallel_enabled(exec)) {
#ifdef SDRL_HAVE_OPENMP
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(count); ++i) body(static_cast<std::size_t>(i));
#endif
    } else {
        for (std::size_t i = 0; i < count; ++i) body(i);
    }
}

} // namespace

Exec choose(std::size_t work) {
    return (work >= kParallelWork && max_threads() > 1) ? Exec::parallel : Exec::serial;
}

int max_threads() {
#ifdef SDRL_HAVE_OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

void set_threads(int n) {
#ifdef SDRL_HAVE_OPENMP
    if (n > 0) omp_set_num_threads(n);
#else
    (void)n;
#endif
}

void matmul(Exec exec, std::span<const double> a, std::span<const double> b, std::span<double> out, std::size_t m,
            std::size_t k, std::size_t n) {
    for_rows(exec, m, [&](std::size_t i) { matmul_row(a, b, out, i, k, n); });
}

void matmul_grad_a(Exec exec, std::span<const double> g, std::span<const double> b, std::span<double> out,
                   std::size_t m, std::size_t k, std::size_t n) {
    for_rows(exec, m, [&](std::size_t i) { grad_a_row(g, b, out, i, k, n); });
}

void matmul_grad_b(Exec exec, std::span<const double> a, std::span<const double> g, std::span<double> out,
                   std::size_t m, std::size_t k, std::size_t n) {
    for_rows(exec, k, [&](std::size_t p) { grad_b_row(a, g, out, p, m, k, n); });
}

void attention_forward(Exec exec, AttentionDims dims, std::span<const double> q, std::span<const double> k,
                       std::span<const double> v, const BinaryMask& mask, std::span<double> out,
                       std::span<double> probs) {
    for_rows(exec, dims.queries, [&](std::size_t i) { attention_row(dims, q, k, v, mask, out, probs, i); });
}

void attention_backward(Exec exec, AttentionDims dims, std::span<const double> q, std::span<const double> k,
                        std::span<const double> v, const BinaryMask& mask, std::span<const double> probs,
                        std::span<const double> grad_out, std::span<double> grad_q, std::span<double> grad_k,
                        std::span<double> grad_v) {
    std::vector<double> dscore(dims.queries * dims.keys, 0.0);
    for_rows(exec, dims.queries, [&](std::size_t i) {
        attention_score_grad_row(dims, v, mask, probs, grad_out, dscore, i);
        attention_grad_q_row(dims, k, mask, dscore, grad_q, i);
    });
    for_rows(exec, dims.keys, [&](std::size_t j) {
        attention_grad_kv_row(dims, q, mask, probs, grad_out, dscore, grad_k, grad_v, j);
    });
}

void weighted_sum(Exec exec, std::span<const double> coeffs, std::span<const std::span<const double>> vectors,
                  std::span<double> out) {
    if (coeffs.size() != vectors.size()) throw DimensionError("weighted_sum: coefficient/vector count mismatch");
    for (const auto& v : vectors)
        if (v.size() != out.size()) throw DimensionError("weighted_sum: vector length mismatch");
    constexpr std::size_t kChunk = 4096;
    const std::size_t chunks = (out.size() + kChunk - 1) / kChunk;
    for_rows(exec, chunks, [&](std::size_t c) {
        const std::size_t lo = c * kChunk;
        const std::size_t hi = std::min(out.size(), lo + kChunk);
        for (std::size_t p = lo; p < hi; ++p) out[p] = 0.0;
        for (std::size_t j = 0; j < coeffs.size(); ++j) {
            const double w = coeffs[j];
            const double* vj = vectors[j].data();
            for (std::size_t p = lo; p < hi; ++p) out[p] += w * vj[p];
        }
    });
}

void parallel_for(Exec exec, std::size_t count, const std::function<void(std::size_t)>& body) {
    std::exception_ptr error;
    for_rows(exec, count, [&](std::size_t i) {
        try {
            body(i);
        } catch (...) {
#ifdef SDRL_HAVE_OPENMP
#pragma omp critical(sdrl_parallel_for_error)
#endif
            if (!error) error = std::current_exception();
        }
    });
    if (error) std::rethrow_exception(error);
}

} // namespace sdrl::kernels
