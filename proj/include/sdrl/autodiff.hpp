// SPDX-License-Identifier: Apache-2.0
#pragma once

// Minimal reverse-mode differentiation over dense rank-1/rank-2 tensors.
//
// A Tape records every primitive together with a forward closure (so the
// whole graph can be replayed from its leaves) and a backward closure that
// accumulates input gradients. Tapes are single-threaded; separate tapes
// over shared read-only parameter tensors may run concurrently.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "sdrl/tensor.hpp"

namespace sdrl::ad {

class Tape;

struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;

    const Tensor& value() const;
};

class Tape {
public:
    explicit Tape(std::uint64_t seed = 0) : seed_(seed) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Leaf whose gradient is returned by backward(), in registration order.
    Var parameter(const Tensor& t);
    /// Leaf that receives a gradient but is not reported as a parameter.
    Var input(Tensor t);
    Var constant(Tensor t);

    const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
    std::span<const double> grad(Var v) const { return nodes_.at(v.id).grad; }
    std::size_t size() const { return nodes_.size(); }
    std::uint64_t seed() const { return seed_; }
    std::size_t parameter_count() const { return parameters_.size(); }

    /// Re-evaluates every recorded primitive from the current leaf values.
    void replay();

    /// Seeds d(output) = output_gradient and propagates to every leaf.
    /// Returns one gradient tensor per registered parameter.
    std::vector<Tensor> backward(Var output, const Tensor& output_gradient);
    std::vector<Tensor> backward(Var output);

    // Primitive construction (used by the op functions below).
    using ForwardFn = std::function<void(const Tape&, Tensor&)>;
    using BackwardFn = std::function<void(Tape&, const Tensor& out_value, std::span<const double> out_grad)>;
    Var record(std::vector<std::size_t> inputs, ForwardFn forward, BackwardFn backward);

    std::vector<double>& grad_buffer(std::size_t id);
    const Tensor& node_value(std::size_t id) const { return nodes_[id].value; }
    bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }

private:
    struct Node {
        Tensor value;
        std::vector<double> grad;
        std::vector<std::size_t> inputs;
        ForwardFn forward;
        BackwardFn backward;
        bool needs_grad = false;
    };

    Var push_leaf(Tensor t, bool needs_grad);

    std::vector<Node> nodes_;
    std::vector<std::size_t> parameters_;
    std::uint64_t seed_;
    bool backward_done_ = false;
};

// Primitives. Shapes are (rows x cols); vectors are rank 1.
Var matmul(Var a, Var b);
Var add(Var a, Var b);
/// Adds a length-cols vector to every row of a matrix.
Var add_row(Var matrix, Var row);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var tanh(Var a);
Var sum(Var a);
/// Rows of `table` selected by `ids` (embedding lookup).
Var gather_rows(Var table, std::vector<int> ids);
/// Row-wise log-softmax.
Var log_softmax_rows(Var logits);

struct PickEntry {
    std::size_t row;
    std::size_t col;
    double weight;
};
/// Scalar sum_e weight_e * a(row_e, col_e).
Var pick_sum(Var a, std::vector<PickEntry> entries);
/// Rows [first, first + count) of a matrix.
Var slice_rows(Var a, std::size_t first, std::size_t count);

/// Scaled dot-product attention with a binary mask; rows with no attendable
/// key yield zeros. Throws DimensionError on shape mismatch and
/// ValidationError on a mask entry outside {0, 1}.
Var masked_attention(Var query, Var key, Var value, std::shared_ptr<const BinaryMask> mask);

/// Eager reference used outside a tape.
Tensor forward_masked_attention(const Tensor& query, const Tensor& key, const Tensor& value, const BinaryMask& mask);

} // namespace sdrl::ad
