#pragma once

#include "vpt/error.hpp"
#include "vpt/params.hpp"
#include "vpt/sinusoid.hpp"
#include "vpt/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace vpt::ad {

enum class Op : std::uint8_t {
    Constant,
    Variable,
    Param,
    Affine,
    Relu,
    Sigmoid,
    Softplus,
    Exp,
    Neg,
    Add,
    Sub,
    Mul,
    Scale,
    AddScalar,
    Concat,
    Reshape,
    RowScale,
    GroupSum,
    RowSum,
    CumsumExclusive,
    Sum,
    Mse,
    Sinusoid,
};

inline const char *op_name(Op op) {
    switch (op) {
    case Op::Constant: return "constant";
    case Op::Variable: return "variable";
    case Op::Param: return "param";
    case Op::Affine: return "affine";
    case Op::Relu: return "relu";
    case Op::Sigmoid: return "sigmoid";
    case Op::Softplus: return "softplus";
    case Op::Exp: return "exp";
    case Op::Neg: return "neg";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Scale: return "scale";
    case Op::AddScalar: return "add_scalar";
    case Op::Concat: return "concat";
    case Op::Reshape: return "reshape";
    case Op::RowScale: return "row_scale";
    case Op::GroupSum: return "group_sum";
    case Op::RowSum: return "row_sum";
    case Op::CumsumExclusive: return "cumsum_exclusive";
    case Op::Sum: return "sum";
    case Op::Mse: return "mse";
    case Op::Sinusoid: return "sinusoid";
    }
    return "?";
}

// Handle to a node on a Tape. Only meaningful for the tape that created it.
struct Var {
    std::uint32_t id = std::numeric_limits<std::uint32_t>::max();
    bool valid() const noexcept { return id != std::numeric_limits<std::uint32_t>::max(); }
};

inline double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::fabs(x))); }

// Define-by-run reverse-mode tape over 2-D float64 tensors.
//
// Every op evaluates eagerly while it is recorded, so recording the graph is
// the forward pass. Nodes are appended in evaluation order, which makes the
// node list topologically sorted by construction. backward() may run once.
//
// Parameters are bound by reference to a ParamStore that must outlive the tape.
class Tape {
public:
    explicit Tape(const ParamStore *params = nullptr) : params_(params) {}

    Tape(const Tape &) = delete;
    Tape &operator=(const Tape &) = delete;
    Tape(Tape &&) = default;
    Tape &operator=(Tape &&) = default;

    // ---- leaves ---------------------------------------------------------

    Var constant(Tensor value) { return leaf(Op::Constant, std::move(value), false); }

    // Leaf whose gradient is tracked and readable through grad() after backward.
    Var variable(Tensor value) { return leaf(Op::Variable, std::move(value), true); }

    Var param(std::string_view name) {
        if (!params_) throw UsageError("tape has no bound ParamStore; cannot read '" + std::string(name) + "'");
        const std::size_t idx = params_->index_of(name);
        if (auto it = param_nodes_.find(idx); it != param_nodes_.end()) return Var{it->second};
        Node n;
        n.op = Op::Param;
        n.param = static_cast<std::int64_t>(idx);
        n.requires_grad = true;
        const Var v = push(std::move(n));
        param_nodes_.emplace(idx, v.id);
        return v;
    }

    // ---- ops ------------------------------------------------------------

    // x[N,in] * w[out,in]^T (+ b[out]).
    Var affine(Var x, Var w, Var b = {}) {
        const Tensor &xv = value(x), &wv = value(w);
        if (xv.cols() != wv.cols()) {
            shape_fail(Op::Affine, "input has " + std::to_string(xv.cols()) + " columns, weight expects " +
                                        std::to_string(wv.cols()));
        }
        Tensor out = Tensor::zeros(xv.rows(), wv.rows());
        out.mat().noalias() = xv.mat() * wv.mat().transpose();
        if (b.valid()) {
            const Tensor &bv = value(b);
            if (bv.size() != wv.rows()) {
                shape_fail(Op::Affine, "bias has " + std::to_string(bv.size()) + " entries, expected " +
                                            std::to_string(wv.rows()));
            }
            out.mat().rowwise() += bv.mat().row(0);
        }
        return b.valid() ? record(Op::Affine, {x, w, b}, std::move(out)) : record(Op::Affine, {x, w}, std::move(out));
    }

    Var relu(Var x) {
        return unary(Op::Relu, x, [](double v) { return v > 0.0 ? v : 0.0; });
    }
    Var sigmoid(Var x) { return unary(Op::Sigmoid, x, [](double v) { return ad::sigmoid(v); }); }
    Var softplus(Var x) { return unary(Op::Softplus, x, [](double v) { return ad::softplus(v); }); }
    Var exp(Var x) { return unary(Op::Exp, x, [](double v) { return std::exp(v); }); }
    Var neg(Var x) { return unary(Op::Neg, x, [](double v) { return -v; }); }

    Var scale(Var x, double c) {
        Var v = unary(Op::Scale, x, [c](double e) { return e * c; }, false);
        nodes_[v.id].scalar = c;
        check_finite(v);
        return v;
    }

    Var add_scalar(Var x, double c) {
        Var v = unary(Op::AddScalar, x, [c](double e) { return e + c; }, false);
        nodes_[v.id].scalar = c;
        check_finite(v);
        return v;
    }

    Var add(Var a, Var b) { return binary(Op::Add, a, b, [](double x, double y) { return x + y; }); }
    Var sub(Var a, Var b) { return binary(Op::Sub, a, b, [](double x, double y) { return x - y; }); }
    Var mul(Var a, Var b) { return binary(Op::Mul, a, b, [](double x, double y) { return x * y; }); }

    // Column-wise concatenation of tensors with equal row counts.
    Var concat(std::span<const Var> parts) {
        if (parts.empty()) shape_fail(Op::Concat, "no inputs");
        const std::size_t rows = value(parts[0]).rows();
        std::size_t cols = 0;
        for (Var p : parts) {
            if (value(p).rows() != rows) shape_fail(Op::Concat, "row counts differ");
            cols += value(p).cols();
        }
        Tensor out = Tensor::zeros(rows, cols);
        std::size_t off = 0;
        for (Var p : parts) {
            const Tensor &pv = value(p);
            out.mat().block(0, off, rows, pv.cols()) = pv.mat();
            off += pv.cols();
        }
        return record(Op::Concat, std::vector<Var>(parts.begin(), parts.end()), std::move(out), false);
    }
    Var concat(std::initializer_list<Var> parts) { return concat(std::span<const Var>(parts.begin(), parts.size())); }

    Var reshape(Var x, std::size_t rows, std::size_t cols) {
        const Tensor &xv = value(x);
        if (rows * cols != xv.size()) {
            shape_fail(Op::Reshape, "cannot view " + std::to_string(xv.size()) + " values as " +
                                         std::to_string(rows) + "x" + std::to_string(cols));
        }
        Tensor out({rows, cols}, xv.values);
        return record(Op::Reshape, {x}, std::move(out), false);
    }

    // x[N,k] scaled row-wise by s[N,1].
    Var row_scale(Var x, Var s) {
        const Tensor &xv = value(x), &sv = value(s);
        if (sv.cols() != 1 || sv.rows() != xv.rows()) shape_fail(Op::RowScale, "scale must be [rows,1]");
        Tensor out = Tensor::zeros(xv.rows(), xv.cols());
        for (std::size_t r = 0; r < xv.rows(); ++r) {
            for (std::size_t c = 0; c < xv.cols(); ++c) out(r, c) = xv(r, c) * sv.values[r];
        }
        return record(Op::RowScale, {x, s}, std::move(out));
    }

    // Sums consecutive groups of `group` rows: [N,k] -> [N/group,k].
    Var group_sum(Var x, std::size_t group) {
        const Tensor &xv = value(x);
        if (group == 0 || xv.rows() % group != 0) shape_fail(Op::GroupSum, "rows not divisible by group size");
        const std::size_t out_rows = xv.rows() / group, k = xv.cols();
        Tensor out = Tensor::zeros(out_rows, k);
        for (std::size_t r = 0; r < xv.rows(); ++r) {
            for (std::size_t c = 0; c < k; ++c) out(r / group, c) += xv(r, c);
        }
        Var v = record(Op::GroupSum, {x}, std::move(out), false);
        nodes_[v.id].iarg0 = group;
        return v;
    }

    Var row_sum(Var x) {
        const Tensor &xv = value(x);
        Tensor out = Tensor::zeros(xv.rows(), 1);
        for (std::size_t r = 0; r < xv.rows(); ++r) {
            double s = 0.0;
            for (std::size_t c = 0; c < xv.cols(); ++c) s += xv(r, c);
            out.values[r] = s;
        }
        return record(Op::RowSum, {x}, std::move(out), false);
    }

    // y[r,j] = sum_{i<j} x[r,i]
    Var cumsum_exclusive(Var x) {
        const Tensor &xv = value(x);
        Tensor out = Tensor::zeros(xv.rows(), xv.cols());
        for (std::size_t r = 0; r < xv.rows(); ++r) {
            double acc = 0.0;
            for (std::size_t c = 0; c < xv.cols(); ++c) {
                out(r, c) = acc;
                acc += xv(r, c);
            }
        }
        return record(Op::CumsumExclusive, {x}, std::move(out), false);
    }

    Var sum(Var x) {
        double s = 0.0;
        for (double v : value(x).values) s += v;
        return record(Op::Sum, {x}, Tensor::scalar(s));
    }

    // mean((a - b)^2) over all elements.
    Var mse(Var a, Var b) {
        const Tensor &av = value(a), &bv = value(b);
        if (!av.same_shape(bv)) shape_fail(Op::Mse, "operand shapes differ");
        double s = 0.0;
        for (std::size_t i = 0; i < av.size(); ++i) {
            const double d = av.values[i] - bv.values[i];
            s += d * d;
        }
        return record(Op::Mse, {a, b}, Tensor::scalar(s / static_cast<double>(av.size())));
    }

    // Per-element sinusoidal lifting: [N,k] -> [N, k * (2F + include_input)].
    Var sinusoid(Var x, std::size_t n_freqs, bool include_input) {
        const Tensor &xv = value(x);
        const std::size_t w = detail::sinusoid_width(n_freqs, include_input);
        Tensor out = Tensor::zeros(xv.rows(), xv.cols() * w);
        for (std::size_t r = 0; r < xv.rows(); ++r) {
            for (std::size_t c = 0; c < xv.cols(); ++c) {
                detail::sinusoid_block(xv(r, c), n_freqs, include_input, &out(r, c * w));
            }
        }
        Var v = record(Op::Sinusoid, {x}, std::move(out), false);
        nodes_[v.id].iarg0 = n_freqs;
        nodes_[v.id].iarg1 = include_input ? 1 : 0;
        return v;
    }

    // ---- access ---------------------------------------------------------

    const Tensor &value(Var v) const {
        const Node &n = node(v);
        if (n.op == Op::Param) return params_->entry(static_cast<std::size_t>(n.param)).value;
        return n.value;
    }

    std::size_t size() const noexcept { return nodes_.size(); }
    Op op(Var v) const { return node(v).op; }

    // Gradient of the backward output w.r.t. v. Zero if v was unreachable.
    Tensor grad(Var v) const {
        if (!backward_done_) throw UsageError("grad() requested before backward()");
        const Node &n = node(v);
        if (n.grad.values.empty()) return Tensor(value(v).shape);
        return n.grad;
    }

    // Propagates `seed` (d out / d out) back through the tape. Returns the
    // gradient of every parameter in the bound store, zero where unreachable.
    ParamStore backward(Var out, const Tensor &seed) {
        if (backward_done_) throw UsageError("backward() already ran on this tape; record a new forward pass");
        if (nodes_.empty() || !out.valid() || out.id >= nodes_.size()) {
            throw UsageError("backward() called before any forward pass on this tape");
        }
        const Tensor &ov = value(out);
        if (!ov.same_shape(seed)) throw ShapeError("backward seed shape does not match output");
        if (!seed.all_finite()) throw OverflowError("backward seed is not finite");
        backward_done_ = true;

        Node &root = nodes_[out.id];
        if (root.requires_grad) {
            root.grad = Tensor(ov.shape, seed.values);
        }
        for (std::int64_t i = static_cast<std::int64_t>(out.id); i >= 0; --i) {
            Node &n = nodes_[static_cast<std::size_t>(i)];
            if (!n.requires_grad || n.grad.values.empty()) continue;
            propagate(static_cast<std::uint32_t>(i));
        }

        ParamStore grads;
        if (params_) {
            for (std::size_t p = 0; p < params_->size(); ++p) {
                const auto &e = params_->entry(p);
                auto it = param_nodes_.find(p);
                if (it != param_nodes_.end() && !nodes_[it->second].grad.values.empty()) {
                    Tensor g = nodes_[it->second].grad;
                    g.shape = e.value.shape;
                    grads.add(e.name, std::move(g));
                } else {
                    grads.add(e.name, Tensor(e.value.shape));
                }
            }
        }
        return grads;
    }

    // Scalar outputs only.
    ParamStore backward(Var out) { return backward(out, Tensor::scalar(1.0)); }

private:
    struct Node {
        Op op = Op::Constant;
        std::vector<std::uint32_t> in;
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        std::int64_t param = -1;
        double scalar = 0.0;
        std::size_t iarg0 = 0;
        std::size_t iarg1 = 0;
    };

    const Node &node(Var v) const {
        if (!v.valid() || v.id >= nodes_.size()) throw UsageError("variable does not belong to this tape");
        return nodes_[v.id];
    }

    void ensure_recording() const {
        if (backward_done_) throw UsageError("tape is closed: backward() already ran");
    }

    Var push(Node n) {
        ensure_recording();
        nodes_.push_back(std::move(n));
        return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
    }

    Var leaf(Op op, Tensor value, bool requires_grad) {
        Node n;
        n.op = op;
        n.value = std::move(value);
        n.requires_grad = requires_grad;
        Var v = push(std::move(n));
        check_finite(v);
        return v;
    }

    [[noreturn]] void shape_fail(Op op, const std::string &what) const {
        throw ShapeError("node " + std::to_string(nodes_.size()) + " (" + op_name(op) + "): " + what);
    }

    void check_finite(Var v) const {
        if (!value(v).all_finite()) {
            throw OverflowError("node " + std::to_string(v.id) + " (" + op_name(nodes_[v.id].op) +
                                "): non-finite value produced");
        }
    }

    Var record(Op op, std::vector<Var> inputs, Tensor out, bool check = true) {
        ensure_recording();
        Node n;
        n.op = op;
        n.value = std::move(out);
        for (Var in : inputs) {
            const Node &src = node(in);
            n.in.push_back(in.id);
            n.requires_grad = n.requires_grad || src.requires_grad;
        }
        Var v = push(std::move(n));
        if (check) check_finite(v);
        return v;
    }

    template <class F>
    Var unary(Op op, Var x, F f, bool check = true) {
        const Tensor &xv = value(x);
        Tensor out(xv.shape);
        for (std::size_t i = 0; i < xv.size(); ++i) out.values[i] = f(xv.values[i]);
        return record(op, {x}, std::move(out), check);
    }

    template <class F>
    Var binary(Op op, Var a, Var b, F f) {
        const Tensor &av = value(a), &bv = value(b);
        if (!av.same_shape(bv)) {
            shape_fail(op, "operand shapes " + Tensor::shape_string(av.shape) + " and " +
                               Tensor::shape_string(bv.shape) + " differ");
        }
        Tensor out(av.shape);
        for (std::size_t i = 0; i < av.size(); ++i) out.values[i] = f(av.values[i], bv.values[i]);
        return record(op, {a, b}, std::move(out));
    }

    // Returns the gradient buffer of input `k` of node `i`, or nullptr when
    // that input does not need a gradient.
    Tensor *grad_slot(const Node &n, std::size_t k) {
        Node &src = nodes_[n.in[k]];
        if (!src.requires_grad) return nullptr;
        if (src.grad.values.empty()) {
            const Tensor &sv = src.op == Op::Param ? params_->entry(static_cast<std::size_t>(src.param)).value
                                                   : src.value;
            src.grad = Tensor(sv.shape);
        }
        return &src.grad;
    }

    void propagate(std::uint32_t id) {
        // Copy the upstream gradient handle: grad_slot may grow other nodes but
        // never reallocates nodes_, so references into nodes_ stay valid.
        Node &n = nodes_[id];
        const Tensor &gy = n.grad;
        const Tensor &y = n.value;
        switch (n.op) {
        case Op::Constant:
        case Op::Variable:
        case Op::Param:
            return;
        case Op::Affine: {
            const Tensor &x = value(Var{n.in[0]});
            const Tensor &w = value(Var{n.in[1]});
            if (Tensor *gx = grad_slot(n, 0)) gx->mat().noalias() += gy.mat() * w.mat();
            if (Tensor *gw = grad_slot(n, 1)) gw->mat().noalias() += gy.mat().transpose() * x.mat();
            if (n.in.size() > 2) {
                if (Tensor *gb = grad_slot(n, 2)) gb->mat().row(0) += gy.mat().colwise().sum();
            }
            return;
        }
        case Op::Relu: {
            const Tensor &x = value(Var{n.in[0]});
            if (Tensor *gx = grad_slot(n, 0)) {
                for (std::size_t i = 0; i < x.size(); ++i) {
                    if (x.values[i] > 0.0) gx->values[i] += gy.values[i];
                }
            }
            return;
        }
        case Op::Sigmoid:
            if (Tensor *gx = grad_slot(n, 0)) {
                for (std::size_t i = 0; i < y.size(); ++i) gx->values[i] += gy.values[i] * y.values[i] * (1.0 - y.values[i]);
            }
            return;
        case Op::Softplus: {
            const Tensor &x = value(Var{n.in[0]});
            if (Tensor *gx = grad_slot(n, 0)) {
                for (std::size_t i = 0; i < x.size(); ++i) gx->values[i] += gy.values[i] * ad::sigmoid(x.values[i]);
            }
            return;
        }
        case Op::Exp:
            if (Tensor *gx = grad_slot(n, 0)) {
                for (std::size_t i = 0; i < y.size(); ++i) gx->values[i] += gy.values[i] * y.values[i];
            }
            return;
        case Op::Neg:
            if (Tensor *gx = grad_slot(n, 0)) {
                for (std::size_t i = 0; i < y.size(); ++i) gx->values[i] -= gy.values[i];
            }
            return;
        case Op::Scale:
            if (Tensor *gx = grad_slot(n, 0)) {
                for (std::size_t i = 0; i < y.size(); ++i) gx->values[i] += gy.values[i] * n.scalar;
            }
            return;
        case Op::AddScalar:
        case Op::Reshape:
            if (Tensor *gx = grad_slot(n, 0)) {
                for (std::size_t i = 0; i < y.size(); ++i) gx->values[i] += gy.values[i];
            }
            return;
        case Op::Add:
        case Op::Sub: {
            const double sb = n.op == Op::Add ? 1.0 : -1.0;
            if (Tensor *ga = grad_slot(n, 0)) {
                for (std::size_t i = 0; i < y.size(); ++i) ga->values[i] += gy.values[i];
            }
            if (Tensor *gb = grad_slot(n, 1)) {
                for (std::size_t i = 0; i < y.size(); ++i) gb->values[i] += sb * gy.values[i];
            }
            return;
        }
        case Op::Mul: {
            const Tensor &a = value(Var{n.in[0]});
            const Tensor &b = value(Var{n.in[1]});
            if (Tensor *ga = grad_slot(n, 0)) {
                for (std::size_t i = 0; i < y.size(); ++i) ga->values[i] += gy.values[i] * b.values[i];
            }
            if (Tensor *gb = grad_slot(n, 1)) {
                for (std::size_t i = 0; i < y.size(); ++i) gb->values[i] += gy.values[i] * a.values[i];
            }
            return;
        }
        case Op::Concat: {
            std::size_t off = 0;
            for (std::size_t k = 0; k < n.in.size(); ++k) {
                const std::size_t c = value(Var{n.in[k]}).cols();
                if (Tensor *gk = grad_slot(n, k)) gk->mat() += gy.mat().block(0, off, gy.rows(), c);
                off += c;
            }
            return;
        }
        case Op::RowScale: {
            const Tensor &x = value(Var{n.in[0]});
            const Tensor &s = value(Var{n.in[1]});
            if (Tensor *gx = grad_slot(n, 0)) {
                for (std::size_t r = 0; r < x.rows(); ++r) {
                    for (std::size_t c = 0; c < x.cols(); ++c) (*gx)(r, c) += gy(r, c) * s.values[r];
                }
            }
            if (Tensor *gs = grad_slot(n, 1)) {
                for (std::size_t r = 0; r < x.rows(); ++r) {
                    double acc = 0.0;
                    for (std::size_t c = 0; c < x.cols(); ++c) acc += gy(r, c) * x(r, c);
                    gs->values[r] += acc;
                }
            }
            return;
        }
        case Op::GroupSum:
            if (Tensor *gx = grad_slot(n, 0)) {
                for (std::size_t r = 0; r < gx->rows(); ++r) {
                    for (std::size_t c = 0; c < gx->cols(); ++c) (*gx)(r, c) += gy(r / n.iarg0, c);
                }
            }
            return;
        case Op::RowSum:
            if (Tensor *gx = grad_slot(n, 0)) {
                for (std::size_t r = 0; r < gx->rows(); ++r) {
                    for (std::size_t c = 0; c < gx->cols(); ++c) (*gx)(r, c) += gy.values[r];
                }
            }
            return;
        case Op::CumsumExclusive:
            if (Tensor *gx = grad_slot(n, 0)) {
                for (std::size_t r = 0; r < gx->rows(); ++r) {
                    double acc = 0.0;
                    for (std::size_t c = gx->cols(); c-- > 0;) {
                        (*gx)(r, c) += acc;
                        acc += gy(r, c);
                    }
                }
            }
            return;
        case Op::Sum:
            if (Tensor *gx = grad_slot(n, 0)) {
                for (double &g : gx->values) g += gy.values[0];
            }
            return;
        case Op::Mse: {
            const Tensor &a = value(Var{n.in[0]});
            const Tensor &b = value(Var{n.in[1]});
            const double k = 2.0 * gy.values[0] / static_cast<double>(a.size());
            if (Tensor *ga = grad_slot(n, 0)) {
                for (std::size_t i = 0; i < a.size(); ++i) ga->values[i] += k * (a.values[i] - b.values[i]);
            }
            if (Tensor *gb = grad_slot(n, 1)) {
                for (std::size_t i = 0; i < a.size(); ++i) gb->values[i] -= k * (a.values[i] - b.values[i]);
            }
            return;
        }
        case Op::Sinusoid: {
            const Tensor &x = value(Var{n.in[0]});
            Tensor *gx = grad_slot(n, 0);
            if (!gx) return;
            const std::size_t nf = n.iarg0;
            const bool inc = n.iarg1 != 0;
            const std::size_t w = detail::sinusoid_width(nf, inc);
            for (std::size_t r = 0; r < x.rows(); ++r) {
                for (std::size_t c = 0; c < x.cols(); ++c) {
                    const double *g = gy.values.data() + r * gy.cols() + c * w;
                    const double *yy = y.values.data() + r * y.cols() + c * w;
                    double acc = 0.0;
                    if (inc) {
                        acc += *g++;
                        ++yy;
                    }
                    double freq = std::numbers::pi;
                    for (std::size_t k = 0; k < nf; ++k) {
                        // d sin = f cos, d cos = -f sin; y holds (sin, cos) pairs.
                        acc += g[0] * freq * yy[1] - g[1] * freq * yy[0];
                        g += 2;
                        yy += 2;
                        freq *= 2.0;
                    }
                    (*gx)(r, c) += acc;
                }
            }
            return;
        }
        }
    }

    const ParamStore *params_ = nullptr;
    std::vector<Node> nodes_;
    std::unordered_map<std::size_t, std::uint32_t> param_nodes_;
    bool backward_done_ = false;
};

// Central-difference estimate of d f / d p for every scalar of every
// parameter: (f(p + eps) - f(p - eps)) / (2 eps). Test oracle for backward().
inline ParamStore finite_difference_gradient(const std::function<double(const ParamStore &)> &f,
                                             const ParamStore &params, double eps) {
    if (!(eps > 0.0)) throw UsageError("finite_difference_gradient: eps must be positive");
    ParamStore probe = params;
    ParamStore grads = params.zeros_like();
    for (std::size_t p = 0; p < probe.size(); ++p) {
        auto &vals = probe.entry(p).value.values;
        auto &out = grads.entry(p).value.values;
        for (std::size_t i = 0; i < vals.size(); ++i) {
            const double orig = vals[i];
            vals[i] = orig + eps;
            const double fp = f(probe);
            vals[i] = orig - eps;
            const double fm = f(probe);
            vals[i] = orig;
            out[i] = (fp - fm) / (2.0 * eps);
        }
    }
    return grads;
}

} // namespace vpt::ad
