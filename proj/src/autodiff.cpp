// SPDX-License-Identifier: Apache-2.0
#include "sdrl/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "sdrl/kernels.hpp"

namespace sdrl::ad {

const Tensor& Var::value() const {
    if (tape == nullptr) throw StateError("Var is not attached to a tape");
    return tape->value(*this);
}

Var Tape::push_leaf(Tensor t, bool needs_grad) {
    Node n;
    n.value = std::move(t);
    n.value.grad.clear();
    n.needs_grad = needs_grad;
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
}

Var Tape::parameter(const Tensor& t) {
    Var v = push_leaf(t, true);
    parameters_.push_back(v.id);
    return v;
}

Var Tape::input(Tensor t) { return push_leaf(std::move(t), true); }

Var Tape::constant(Tensor t) { return push_leaf(std::move(t), false); }

Var Tape::record(std::vector<std::size_t> inputs, ForwardFn forward, BackwardFn backward) {
    Node n;
    for (std::size_t i : inputs) {
        if (i >= nodes_.size()) throw StateError("tape: input refers to a node that does not exist");
        n.needs_grad = n.needs_grad || nodes_[i].needs_grad;
    }
    n.inputs = std::move(inputs);
    n.forward = std::move(forward);
    n.backward = std::move(backward);
    n.forward(*this, n.value);
    nodes_.push_back(std::move(n));
    backward_done_ = false;
    return Var{this, nodes_.size() - 1};
}

std::vector<double>& Tape::grad_buffer(std::size_t id) {
    auto& g = nodes_[id].grad;
    if (g.size() != nodes_[id].value.size()) g.assign(nodes_[id].value.size(), 0.0);
    return g;
}

void Tape::replay() {
    for (auto& n : nodes_) {
        if (!n.forward) continue;
        Tensor fresh;
        n.forward(*this, fresh);
        n.value = std::move(fresh);
    }
}

std::vector<Tensor> Tape::backward(Var output, const Tensor& output_gradient) {
    if (output.tape != this || output.id >= nodes_.size())
        throw StateError("backward called before a forward pass produced the output node");
    const Node& out = nodes_[output.id];
    if (output_gradient.size() != out.value.size())
        throw DimensionError("backward: output gradient shape does not match output");
    for (auto& n : nodes_) n.grad.clear();
    grad_buffer(output.id) = output_gradient.values;
    for (std::size_t id = output.id + 1; id-- > 0;) {
        Node& n = nodes_[id];
        if (!n.backward || !n.needs_grad || n.grad.empty()) continue;
        // The closure may grow other nodes' grad buffers; keep a stable copy.
        const std::vector<double> g = n.grad;
        n.backward(*this, n.value, g);
    }
    backward_done_ = true;
    std::vector<Tensor> result;
    result.reserve(parameters_.size());
    for (std::size_t id : parameters_) {
        Tensor t;
        t.shape = nodes_[id].value.shape;
        t.values = nodes_[id].grad.empty() ? std::vector<double>(nodes_[id].value.size(), 0.0) : nodes_[id].grad;
        result.push_back(std::move(t));
    }
    return result;
}

std::vector<Tensor> Tape::backward(Var output) {
    if (output.tape != this || output.id >= nodes_.size())
        throw StateError("backward called before a forward pass produced the output node");
    Tensor seed = nodes_[output.id].value;
    std::fill(seed.values.begin(), seed.values.end(), 1.0);
    return backward(output, seed);
}

namespace {

void require_same_tape(Var a, Var b) {
    if (a.tape == nullptr || a.tape != b.tape) throw StateError("operands live on different tapes");
}

std::size_t rows_of(const Tensor& t) { return t.shape.size() == 2 ? t.shape[0] : 1; }
std::size_t cols_of(const Tensor& t) { return t.shape.empty() ? 1 : t.shape.back(); }

std::string shape_str(const Tensor& t) {
    std::string s = "(";
    for (std::size_t i = 0; i < t.shape.size(); ++i) s += (i ? "x" : "") + std::to_string(t.shape[i]);
    return s + ")";
}

void accumulate(std::vector<double>& dst, std::span<const double> src, double factor = 1.0) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += factor * src[i];
}

} // namespace

Var matmul(Var a, Var b) {
    require_same_tape(a, b);
    Tape& t = *a.tape;
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.shape.size() != 2 || bv.shape.size() != 2 || av.shape[1] != bv.shape[0])
        throw DimensionError("matmul: incompatible shapes " + shape_str(av) + " * " + shape_str(bv));
    const std::size_t m = av.shape[0], k = av.shape[1], n = bv.shape[1];
    const std::size_t ia = a.id, ib = b.id;
    return t.record(
        {ia, ib},
        [=](const Tape& tp, Tensor& out) {
            out = Tensor::zeros(m, n);
            kernels::matmul(kernels::choose(m * k * n), tp.node_value(ia).values, tp.node_value(ib).values,
                            out.values, m, k, n);
        },
        [=](Tape& tp, const Tensor&, std::span<const double> g) {
            const auto exec = kernels::choose(m * k * n);
            if (tp.needs_grad(ia))
                kernels::matmul_grad_a(exec, g, tp.node_value(ib).values, tp.grad_buffer(ia), m, k, n);
            if (tp.needs_grad(ib))
                kernels::matmul_grad_b(exec, tp.node_value(ia).values, g, tp.grad_buffer(ib), m, k, n);
        });
}

Var add(Var a, Var b) {
    require_same_tape(a, b);
    if (a.value().shape != b.value().shape) throw DimensionError("add: shape mismatch");
    const std::size_t ia = a.id, ib = b.id;
    return a.tape->record(
        {ia, ib},
        [=](const Tape& tp, Tensor& out) {
            out = tp.node_value(ia);
            const auto& bv = tp.node_value(ib).values;
            for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] += bv[i];
        },
        [=](Tape& tp, const Tensor&, std::span<const double> g) {
            if (tp.needs_grad(ia)) accumulate(tp.grad_buffer(ia), g);
            if (tp.needs_grad(ib)) accumulate(tp.grad_buffer(ib), g);
        });
}

Var add_row(Var matrix, Var row) {
    require_same_tape(matrix, row);
    const Tensor& mv = matrix.value();
    const Tensor& rv = row.value();
    if (mv.shape.size() != 2 || rv.size() != mv.shape[1])
        throw DimensionError("add_row: row length must equal matrix columns");
    const std::size_t im = matrix.id, ir = row.id, r = mv.shape[0], c = mv.shape[1];
    return matrix.tape->record(
        {im, ir},
        [=](const Tape& tp, Tensor& out) {
            out = tp.node_value(im);
            const auto& rvv = tp.node_value(ir).values;
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) out.values[i * c + j] += rvv[j];
        },
        [=](Tape& tp, const Tensor&, std::span<const double> g) {
            if (tp.needs_grad(im)) accumulate(tp.grad_buffer(im), g);
            if (tp.needs_grad(ir)) {
                auto& gr = tp.grad_buffer(ir);
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < c; ++j) gr[j] += g[i * c + j];
            }
        });
}

Var mul(Var a, Var b) {
    require_same_tape(a, b);
    if (a.value().shape != b.value().shape) throw DimensionError("mul: shape mismatch");
    const std::size_t ia = a.id, ib = b.id;
    return a.tape->record(
        {ia, ib},
        [=](const Tape& tp, Tensor& out) {
            out = tp.node_value(ia);
            const auto& bv = tp.node_value(ib).values;
            for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] *= bv[i];
        },
        [=](Tape& tp, const Tensor&, std::span<const double> g) {
            const auto& av = tp.node_value(ia).values;
            const auto& bv = tp.node_value(ib).values;
            if (tp.needs_grad(ia)) {
                auto& ga = tp.grad_buffer(ia);
                for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * bv[i];
            }
            if (tp.needs_grad(ib)) {
                auto& gb = tp.grad_buffer(ib);
                for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * av[i];
            }
        });
}

Var scale(Var a, double factor) {
    const std::size_t ia = a.id;
    return a.tape->record(
        {ia},
        [=](const Tape& tp, Tensor& out) {
            out = tp.node_value(ia);
            for (double& x : out.values) x *= factor;
        },
        [=](Tape& tp, const Tensor&, std::span<const double> g) {
            if (tp.needs_grad(ia)) accumulate(tp.grad_buffer(ia), g, factor);
        });
}

Var tanh(Var a) {
    const std::size_t ia = a.id;
    return a.tape->record(
        {ia},
        [=](const Tape& tp, Tensor& out) {
            out = tp.node_value(ia);
            for (double& x : out.values) x = std::tanh(x);
        },
        [=](Tape& tp, const Tensor& out, std::span<const double> g) {
            if (!tp.needs_grad(ia)) return;
            auto& ga = tp.grad_buffer(ia);
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * (1.0 - out.values[i] * out.values[i]);
        });
}

Var sum(Var a) {
    const std::size_t ia = a.id;
    return a.tape->record(
        {ia},
        [=](const Tape& tp, Tensor& out) {
            double s = 0.0;
            for (double x : tp.node_value(ia).values) s += x;
            out = Tensor::scalar(s);
        },
        [=](Tape& tp, const Tensor&, std::span<const double> g) {
            if (!tp.needs_grad(ia)) return;
            for (double& x : tp.grad_buffer(ia)) x += g[0];
        });
}

Var gather_rows(Var table, std::vector<int> ids) {
    const Tensor& tv = table.value();
    if (tv.shape.size() != 2) throw DimensionError("gather_rows: table must be a matrix");
    const std::size_t rows = tv.shape[0], c = tv.shape[1];
    for (int id : ids)
        if (id < 0 || static_cast<std::size_t>(id) >= rows)
            throw ValidationError("gather_rows: index " + std::to_string(id) + " out of range");
    const std::size_t it = table.id;
    auto shared = std::make_shared<const std::vector<int>>(std::move(ids));
    return table.tape->record(
        {it},
        [=](const Tape& tp, Tensor& out) {
            const auto& src = tp.node_value(it).values;
            out = Tensor::zeros(shared->size(), c);
            for (std::size_t i = 0; i < shared->size(); ++i)
                std::copy_n(src.begin() + static_cast<std::ptrdiff_t>((*shared)[i] * c), c,
                            out.values.begin() + static_cast<std::ptrdiff_t>(i * c));
        },
        [=](Tape& tp, const Tensor&, std::span<const double> g) {
            if (!tp.needs_grad(it)) return;
            auto& gt = tp.grad_buffer(it);
            for (std::size_t i = 0; i < shared->size(); ++i) {
                const std::size_t base = static_cast<std::size_t>((*shared)[i]) * c;
                for (std::size_t j = 0; j < c; ++j) gt[base + j] += g[i * c + j];
            }
        });
}

Var log_softmax_rows(Var logits) {
    const Tensor& lv = logits.value();
    const std::size_t r = rows_of(lv), c = cols_of(lv);
    const std::size_t il = logits.id;
    return logits.tape->record(
        {il},
        [=](const Tape& tp, Tensor& out) {
            out = tp.node_value(il);
            for (std::size_t i = 0; i < r; ++i) {
                double* row = out.values.data() + i * c;
                const double mx = *std::max_element(row, row + c);
                double s = 0.0;
                for (std::size_t j = 0; j < c; ++j) s += std::exp(row[j] - mx);
                const double lse = mx + std::log(s);
                for (std::size_t j = 0; j < c; ++j) row[j] -= lse;
            }
        },
        [=](Tape& tp, const Tensor& out, std::span<const double> g) {
            if (!tp.needs_grad(il)) return;
            auto& gl = tp.grad_buffer(il);
            for (std::size_t i = 0; i < r; ++i) {
                double gs = 0.0;
                for (std::size_t j = 0; j < c; ++j) gs += g[i * c + j];
                for (std::size_t j = 0; j < c; ++j)
                    gl[i * c + j] += g[i * c + j] - std::exp(out.values[i * c + j]) * gs;
            }
        });
}

Var pick_sum(Var a, std::vector<PickEntry> entries) {
    const Tensor& av = a.value();
    const std::size_t r = rows_of(av), c = cols_of(av);
    for (const auto& e : entries)
        if (e.row >= r || e.col >= c) throw DimensionError("pick_sum: entry outside tensor");
    const std::size_t ia = a.id;
    auto shared = std::make_shared<const std::vector<PickEntry>>(std::move(entries));
    return a.tape->record(
        {ia},
        [=](const Tape& tp, Tensor& out) {
            const auto& v = tp.node_value(ia).values;
            double s = 0.0;
            for (const auto& e : *shared) s += e.weight * v[e.row * c + e.col];
            out = Tensor::scalar(s);
        },
        [=](Tape& tp, const Tensor&, std::span<const double> g) {
            if (!tp.needs_grad(ia)) return;
            auto& ga = tp.grad_buffer(ia);
            for (const auto& e : *shared) ga[e.row * c + e.col] += e.weight * g[0];
        });
}

Var slice_rows(Var a, std::size_t first, std::size_t count) {
    const Tensor& av = a.value();
    if (av.shape.size() != 2 || first + count > av.shape[0]) throw DimensionError("slice_rows: range outside matrix");
    const std::size_t ia = a.id, c = av.shape[1];
    return a.tape->record(
        {ia},
        [=](const Tape& tp, Tensor& out) {
            const auto& v = tp.node_value(ia).values;
            out = Tensor::zeros(count, c);
            std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(first * c), count * c, out.values.begin());
        },
        [=](Tape& tp, const Tensor&, std::span<const double> g) {
            if (!tp.needs_grad(ia)) return;
            auto& ga = tp.grad_buffer(ia);
            for (std::size_t i = 0; i < count * c; ++i) ga[first * c + i] += g[i];
        });
}

namespace {

void check_attention_inputs(const Tensor& q, const Tensor& k, const Tensor& v, const BinaryMask& mask) {
    if (q.shape.size() != 2 || k.shape.size() != 2 || v.shape.size() != 2)
        throw DimensionError("masked_attention: query/key/value must be matrices");
    if (q.shape[1] != k.shape[1] || k.shape[0] != v.shape[0] || q.shape[1] != v.shape[1])
        throw DimensionError("masked_attention: query/key/value widths or key/value lengths differ");
    if (mask.rows != q.shape[0] || mask.cols != k.shape[0])
        throw DimensionError("masked_attention: mask is " + std::to_string(mask.rows) + "x" +
                             std::to_string(mask.cols) + " but attention is " + std::to_string(q.shape[0]) + "x" +
                             std::to_string(k.shape[0]));
    for (std::uint8_t b : mask.bits)
        if (b > 1) throw ValidationError("masked_attention: mask entries must be 0 or 1");
}

} // namespace

Var masked_attention(Var query, Var key, Var value, std::shared_ptr<const BinaryMask> mask) {
    require_same_tape(query, key);
    require_same_tape(query, value);
    check_attention_inputs(query.value(), key.value(), value.value(), *mask);
    const kernels::AttentionDims dims{query.value().shape[0], key.value().shape[0], query.value().shape[1]};
    const std::size_t iq = query.id, ik = key.id, iv = value.id;
    // Attention weights are cached for the backward pass.
    auto probs = std::make_shared<std::vector<double>>(dims.queries * dims.keys, 0.0);
    const std::size_t work = dims.queries * dims.keys * dims.dim;
    return query.tape->record(
        {iq, ik, iv},
        [=](const Tape& tp, Tensor& out) {
            out = Tensor::zeros(dims.queries, dims.dim);
            kernels::attention_forward(kernels::choose(work), dims, tp.node_value(iq).values,
                                       tp.node_value(ik).values, tp.node_value(iv).values, *mask, out.values,
                                       *probs);
        },
        [=](Tape& tp, const Tensor&, std::span<const double> g) {
            std::vector<double> gq(dims.queries * dims.dim, 0.0), gk(dims.keys * dims.dim, 0.0),
                gv(dims.keys * dims.dim, 0.0);
            kernels::attention_backward(kernels::choose(work), dims, tp.node_value(iq).values,
                                        tp.node_value(ik).values, tp.node_value(iv).values, *mask, *probs, g, gq,
                                        gk, gv);
            if (tp.needs_grad(iq)) accumulate(tp.grad_buffer(iq), gq);
            if (tp.needs_grad(ik)) accumulate(tp.grad_buffer(ik), gk);
            if (tp.needs_grad(iv)) accumulate(tp.grad_buffer(iv), gv);
        });
}

Tensor forward_masked_attention(const Tensor& query, const Tensor& key, const Tensor& value,
                                const BinaryMask& mask) {
    check_attention_inputs(query, key, value, mask);
    const kernels::AttentionDims dims{query.shape[0], key.shape[0], query.shape[1]};
    Tensor out = Tensor::zeros(dims.queries, dims.dim);
    std::vector<double> probs(dims.queries * dims.keys);
    kernels::attention_forward(kernels::Exec::serial, dims, query.values, key.values, value.values, mask,
                               out.values, probs);
    return out;
}

} // namespace sdrl::ad
