#include "vpt/autodiff.hpp"
#include "vpt/rng.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <functional>

using namespace vpt;
using vpt::testing::rel_err;

namespace {

Tensor random_tensor(Rng &rng, std::size_t r, std::size_t c, double lo = -1.0, double hi = 1.0) {
    Tensor t = Tensor::zeros(r, c);
    for (double &v : t.values) v = rng.uniform(lo, hi);
    return t;
}

// Builds a scalar from the graph output by contracting with fixed random
// weights, so every output element contributes a distinct gradient.
using GraphFn = std::function<ad::Var(ad::Tape &)>;

double eval_scalar(const ParamStore &ps, const GraphFn &g, const Tensor &contract) {
    ad::Tape tape(&ps);
    const ad::Var y = g(tape);
    const ad::Var s = tape.sum(tape.mul(y, tape.constant(contract)));
    return tape.value(s).values[0];
}

void expect_grad_matches_fd(const ParamStore &ps, const GraphFn &g, double tol = 1e-6) {
    ad::Tape probe(&ps);
    const Tensor &out = probe.value(g(probe));
    Rng rng(99);
    const Tensor contract = random_tensor(rng, out.rows(), out.cols());

    ad::Tape tape(&ps);
    const ad::Var y = g(tape);
    const ParamStore analytic = tape.backward(tape.sum(tape.mul(y, tape.constant(contract))));
    const ParamStore numeric =
        ad::finite_difference_gradient([&](const ParamStore &p) { return eval_scalar(p, g, contract); }, ps, 1e-6);
    for (std::size_t k = 0; k < ps.size(); ++k) {
        const auto &a = analytic.entry(k).value.values;
        const auto &n = numeric.entry(k).value.values;
        for (std::size_t i = 0; i < a.size(); ++i) {
            EXPECT_LE(std::fabs(a[i] - n[i]), tol * std::max(1.0, std::fabs(n[i])))
                << ps.entry(k).name << "[" << i << "] analytic " << a[i] << " numeric " << n[i];
        }
    }
}

ParamStore two_params(std::size_t r, std::size_t c, std::uint64_t seed = 1, double lo = -1.0, double hi = 1.0) {
    Rng rng(seed);
    ParamStore ps;
    ps.add("a", random_tensor(rng, r, c, lo, hi));
    ps.add("b", random_tensor(rng, r, c, lo, hi));
    return ps;
}

} // namespace

TEST(Autodiff, AffineGradient) {
    Rng rng(3);
    ParamStore ps;
    ps.add("x", random_tensor(rng, 5, 4));
    ps.add("w", random_tensor(rng, 3, 4));
    ps.add("b", random_tensor(rng, 1, 3));
    expect_grad_matches_fd(ps, [](ad::Tape &t) { return t.affine(t.param("x"), t.param("w"), t.param("b")); });
    expect_grad_matches_fd(ps, [](ad::Tape &t) { return t.affine(t.param("x"), t.param("w")); });
}

TEST(Autodiff, ElementwiseGradients) {
    // Keep relu inputs away from the kink at 0.
    const ParamStore ps = two_params(4, 3, 5, 0.1, 1.0);
    expect_grad_matches_fd(ps, [](ad::Tape &t) { return t.relu(t.param("a")); });
    expect_grad_matches_fd(ps, [](ad::Tape &t) { return t.relu(t.neg(t.param("a"))); });
    const ParamStore ps2 = two_params(4, 3, 6);
    expect_grad_matches_fd(ps2, [](ad::Tape &t) { return t.sigmoid(t.param("a")); });
    expect_grad_matches_fd(ps2, [](ad::Tape &t) { return t.softplus(t.param("a")); });
    expect_grad_matches_fd(ps2, [](ad::Tape &t) { return t.exp(t.param("a")); });
    expect_grad_matches_fd(ps2, [](ad::Tape &t) { return t.scale(t.param("a"), -2.5); });
    expect_grad_matches_fd(ps2, [](ad::Tape &t) { return t.add_scalar(t.param("a"), 0.75); });
    expect_grad_matches_fd(ps2, [](ad::Tape &t) { return t.add(t.param("a"), t.param("b")); });
    expect_grad_matches_fd(ps2, [](ad::Tape &t) { return t.sub(t.param("a"), t.param("b")); });
    expect_grad_matches_fd(ps2, [](ad::Tape &t) { return t.mul(t.param("a"), t.param("b")); });
    expect_grad_matches_fd(ps2, [](ad::Tape &t) { return t.mul(t.param("a"), t.param("a")); });
}

TEST(Autodiff, StructuralGradients) {
    const ParamStore ps = two_params(6, 2, 7);
    expect_grad_matches_fd(ps, [](ad::Tape &t) { return t.concat({t.param("a"), t.param("b"), t.param("a")}); });
    expect_grad_matches_fd(ps, [](ad::Tape &t) { return t.reshape(t.param("a"), 3, 4); });
    expect_grad_matches_fd(ps, [](ad::Tape &t) { return t.group_sum(t.param("a"), 3); });
    expect_grad_matches_fd(ps, [](ad::Tape &t) { return t.row_sum(t.param("a")); });
    expect_grad_matches_fd(ps, [](ad::Tape &t) { return t.cumsum_exclusive(t.param("a")); });
    expect_grad_matches_fd(ps, [](ad::Tape &t) { return t.sum(t.param("a")); });
    expect_grad_matches_fd(ps, [](ad::Tape &t) { return t.mse(t.param("a"), t.param("b")); });
    expect_grad_matches_fd(ps, [](ad::Tape &t) {
        return t.row_scale(t.param("a"), t.reshape(t.row_sum(t.param("b")), 6, 1));
    });
}

TEST(Autodiff, SinusoidGradient) {
    const ParamStore ps = two_params(3, 3, 8);
    expect_grad_matches_fd(ps, [](ad::Tape &t) { return t.sinusoid(t.param("a"), 4, false); }, 1e-5);
    expect_grad_matches_fd(ps, [](ad::Tape &t) { return t.sinusoid(t.param("a"), 3, true); }, 1e-5);
}

TEST(Autodiff, ComposedGraphGradient) {
    Rng rng(11);
    ParamStore ps;
    ps.add("w1", random_tensor(rng, 8, 3));
    ps.add("b1", random_tensor(rng, 1, 8));
    ps.add("w2", random_tensor(rng, 2, 8));
    const Tensor x = random_tensor(rng, 5, 3);
    expect_grad_matches_fd(ps, [&](ad::Tape &t) {
        const ad::Var h = t.relu(t.affine(t.constant(x), t.param("w1"), t.param("b1")));
        const ad::Var y = t.affine(h, t.param("w2"));
        return t.mul(t.sigmoid(y), t.exp(t.neg(t.cumsum_exclusive(t.softplus(y)))));
    });
}

TEST(Autodiff, ReluSubgradientAtZeroIsZero) {
    ParamStore ps;
    ps.add("a", Tensor({1, 3}, {0.0, -1.0, 2.0}));
    ad::Tape t(&ps);
    const ParamStore g = t.backward(t.sum(t.relu(t.param("a"))));
    EXPECT_EQ(g.at("a").values, (Buffer{0.0, 0.0, 1.0}));
}

TEST(Autodiff, ParamsReachedTwiceAccumulate) {
    ParamStore ps;
    ps.add("a", Tensor({1, 1}, {3.0}));
    ad::Tape t(&ps);
    const ad::Var a = t.param("a");
    const ParamStore g = t.backward(t.sum(t.add(t.mul(a, a), a)));
    EXPECT_DOUBLE_EQ(g.at("a").values[0], 7.0);
}

TEST(Autodiff, UnreachableParamsGetZeroGradient) {
    ParamStore ps;
    ps.add("used", Tensor({1, 2}, {1.0, 2.0}));
    ps.add("unused", Tensor({2, 2}, {1.0, 2.0, 3.0, 4.0}));
    ad::Tape t(&ps);
    const ParamStore g = t.backward(t.sum(t.param("used")));
    ASSERT_TRUE(g.same_layout(ps));
    EXPECT_EQ(g.at("unused").values, Buffer(4, 0.0));
}

TEST(Autodiff, VariableGradientReadable) {
    ad::Tape t;
    const ad::Var x = t.variable(Tensor({1, 2}, {2.0, -3.0}));
    t.backward(t.sum(t.mul(x, x)));
    EXPECT_EQ(t.grad(x).values, (Buffer{4.0, -6.0}));
}

TEST(Autodiff, BackwardTwiceIsUsageError) {
    ad::Tape t;
    const ad::Var x = t.variable(Tensor::scalar(1.0));
    const ad::Var y = t.sum(x);
    t.backward(y);
    EXPECT_THROW(t.backward(y), UsageError);
    EXPECT_THROW(t.exp(x), UsageError);
}

TEST(Autodiff, BackwardOnEmptyTapeIsUsageError) {
    ad::Tape t;
    EXPECT_THROW(t.backward(ad::Var{}), UsageError);
}

TEST(Autodiff, GradBeforeBackwardIsUsageError) {
    ad::Tape t;
    const ad::Var x = t.variable(Tensor::scalar(1.0));
    EXPECT_THROW(t.grad(x), UsageError);
}

TEST(Autodiff, ShapeErrorsNameTheOp) {
    ad::Tape t;
    const ad::Var a = t.constant(Tensor::zeros(2, 3));
    const ad::Var b = t.constant(Tensor::zeros(3, 3));
    try {
        t.add(a, b);
        FAIL() << "expected ShapeError";
    } catch (const ShapeError &e) {
        EXPECT_NE(std::string(e.what()).find("add"), std::string::npos) << e.what();
    }
    EXPECT_THROW(t.affine(a, t.constant(Tensor::zeros(4, 2))), ShapeError);
    EXPECT_THROW(t.reshape(a, 4, 2), ShapeError);
    EXPECT_THROW(t.group_sum(a, 4), ShapeError);
    EXPECT_THROW(t.mse(a, b), ShapeError);
}

TEST(Autodiff, NonFiniteForwardValueIsOverflowError) {
    ad::Tape t;
    const ad::Var a = t.constant(Tensor::scalar(1000.0));
    try {
        t.exp(a);
        FAIL() << "expected OverflowError";
    } catch (const OverflowError &e) {
        EXPECT_NE(std::string(e.what()).find("exp"), std::string::npos) << e.what();
    }
}

TEST(Autodiff, UnknownParamIsUsageError) {
    ParamStore ps;
    ad::Tape t(&ps);
    EXPECT_THROW(t.param("nope"), UsageError);
    ad::Tape unbound;
    EXPECT_THROW(unbound.param("x"), UsageError);
}

TEST(Autodiff, StableSquashing) {
    EXPECT_EQ(ad::sigmoid(0.0), 0.5);
    EXPECT_EQ(ad::softplus(0.0), std::log(2.0));
    EXPECT_TRUE(std::isfinite(ad::softplus(800.0)));
    EXPECT_TRUE(std::isfinite(ad::sigmoid(-800.0)));
    EXPECT_NEAR(ad::softplus(800.0), 800.0, 1e-12);
}

TEST(Autodiff, FiniteDifferenceRejectsBadEps) {
    ParamStore ps;
    EXPECT_THROW(ad::finite_difference_gradient([](const ParamStore &) { return 0.0; }, ps, 0.0), UsageError);
}

TEST(Autodiff, ParamStoreDuplicateAndAccumulate) {
    ParamStore a;
    a.add("x", Tensor({1, 2}, {1.0, 2.0}));
    EXPECT_THROW(a.add("x", Tensor::scalar(0.0)), UsageError);
    ParamStore b = a;
    a.accumulate(b);
    EXPECT_EQ(a.at("x").values, (Buffer{2.0, 4.0}));
    EXPECT_EQ(a.total_count(), 2u);
    ParamStore c;
    c.add("y", Tensor::scalar(0.0));
    EXPECT_THROW(a.accumulate(c), ShapeError);
}
