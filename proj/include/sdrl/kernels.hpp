// SPDX-License-Identifier: Apache-2.0
#pragma once

// Dense kernels behind the autodiff primitives. Every kernel has a serial
// reference and an OpenMP variant that splits work over independent output
// rows, so the two produce bit-identical results (each output element is
// accumulated in the same order on one thread).

#include <cstddef>
#include <functional>
#include <span>

#include "sdrl/tensor.hpp"

namespace sdrl::kernels {

enum class Exec { serial, parallel };

/// Picks `parallel` only when OpenMP is available and the work is large
/// enough to amortize a parallel region.
Exec choose(std::size_t work);

/// Thread count OpenMP will use (1 when built without OpenMP).
int max_threads();
void set_threads(int n);

// out(m x n) = a(m x k) * b(k x n)
void matmul(Exec exec, std::span<const double> a, std::span<const double> b, std::span<double> out,
            std::size_t m, std::size_t k, std::size_t n);
// out(m x k) += g(m x n) * b(k x n)^T
void matmul_grad_a(Exec exec, std::span<const double> g, std::span<const double> b, std::span<double> out,
                   std::size_t m, std::size_t k, std::size_t n);
// out(k x n) += a(m x k)^T * g(m x n)
void matmul_grad_b(Exec exec, std::span<const double> a, std::span<const double> g, std::span<double> out,
                   std::size_t m, std::size_t k, std::size_t n);

struct AttentionDims {
    std::size_t queries;
    std::size_t keys;
    std::size_t dim;
};

// Scaled dot-product attention restricted to mask-allowed keys. Rows with no
// allowed key produce zeros. `probs` (queries x keys) receives the attention
// weights for the backward pass.
void attention_forward(Exec exec, AttentionDims dims, std::span<const double> q, std::span<const double> k,
                       std::span<const double> v, const BinaryMask& mask, std::span<double> out,
                       std::span<double> probs);

// Accumulates into grad_q / grad_k / grad_v.
void attention_backward(Exec exec, AttentionDims dims, std::span<const double> q, std::span<const double> k,
                        std::span<const double> v, const BinaryMask& mask, std::span<const double> probs,
                        std::span<const double> grad_out, std::span<double> grad_q, std::span<double> grad_k,
                        std::span<double> grad_v);

/// out[p] = sum_j coeffs[j] * vectors[j][p], summed in j order for every p.
void weighted_sum(Exec exec, std::span<const double> coeffs, std::span<const std::span<const double>> vectors,
                  std::span<double> out);

/// Runs body(i) for i in [0, count). Independent tasks only; the first
/// exception thrown by any task is rethrown after the loop.
void parallel_for(Exec exec, std::size_t count, const std::function<void(std::size_t)>& body);

} // namespace sdrl::kernels
