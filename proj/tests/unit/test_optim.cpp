#include <gtest/gtest.h>

#include <cmath>

#include "difforge/optim.hpp"

using namespace difforge;
using namespace difforge::optim;

TEST(CyclicLr, KnownValues) {
    CyclicLr c{.base_lr = 0.01, .max_lr = 0.1, .step_size = 10, .gamma = 0.99};
    EXPECT_DOUBLE_EQ(cyclic_lr(c), 0.01);
    c.iteration = 10;
    EXPECT_NEAR(cyclic_lr(c), 0.0913943867507924, 1e-15);
    c.iteration = 5;
    // half way up the first cycle
    EXPECT_NEAR(cyclic_lr(c), 0.01 + 0.09 * 0.5 * std::pow(0.99, 5), 1e-15);
    c.iteration = 20;
    EXPECT_NEAR(cyclic_lr(c), 0.01, 1e-15);
}

TEST(CyclicLr, GammaOneIsTriangular) {
    CyclicLr c{.base_lr = 0.0, .max_lr = 1.0, .step_size = 4, .gamma = 1.0};
    const double expect[] = {0, 0.25, 0.5, 0.75, 1, 0.75, 0.5, 0.25, 0, 0.25};
    for (std::size_t i = 0; i < 10; ++i) {
        c.iteration = i;
        EXPECT_NEAR(cyclic_lr(c), expect[i], 1e-15) << i;
    }
}

TEST(Sgd, FirstStepAndMomentumRecurrence) {
    Grid p(Shape{1}, 0.0), v(Shape{1}, 0.0), g(Shape{1}, 1.0);
    sgd_update(p, g, v, 0.1, 0.9);
    EXPECT_DOUBLE_EQ(p[0], -0.1);
    // v_k = 0.9 v_{k-1} + g ; p -= lr v
    double vv = 1.0, pp = -0.1;
    for (int k = 0; k < 5; ++k) {
        sgd_update(p, g, v, 0.1, 0.9);
        vv = 0.9 * vv + 1.0;
        pp -= 0.1 * vv;
        EXPECT_NEAR(p[0], pp, 1e-14);
        EXPECT_NEAR(v[0], vv, 1e-14);
    }
}

TEST(ClipGradNorm, ScalesToMaxNorm) {
    ParameterSet ps;
    Var a = ps.add("a", Grid(Shape{2}, 0.0));
    Var b = ps.add("b", Grid(Shape{1}, 0.0));
    a.node()->grad_buffer() = Grid(Shape{2}, std::vector<double>{3.0, 0.0});
    b.node()->grad_buffer() = Grid(Shape{1}, 4.0);
    EXPECT_DOUBLE_EQ(clip_grad_norm(ps, 1.0), 5.0);
    EXPECT_NEAR(a.grad()[0], 0.6, 1e-15);
    EXPECT_NEAR(b.grad()[0], 0.8, 1e-15);
    EXPECT_NEAR(clip_grad_norm(ps, 10.0), 1.0, 1e-15);
    EXPECT_NEAR(b.grad()[0], 0.8, 1e-15);
}

TEST(Lookahead, AlphaOneKeepsFastWeights) {
    ParameterSet ps;
    Var p = ps.add("p", Grid(Shape{1}, 0.0));
    Lookahead la(2, 1.0);
    la.attach(ps);
    p.mutable_value()[0] = 3.0;
    la.after_step(ps);
    p.mutable_value()[0] = 5.0;
    la.after_step(ps);
    EXPECT_DOUBLE_EQ(p.value()[0], 5.0);
    EXPECT_DOUBLE_EQ(la.slow()[0][0], 5.0);
}

TEST(Lookahead, MidpointSync) {
    ParameterSet ps;
    Var p = ps.add("p", Grid(Shape{1}, 1.0));
    Lookahead la(5, 0.5);
    la.attach(ps);
    for (int i = 1; i <= 4; ++i) {
        p.mutable_value()[0] = 1.0 + i;
        la.after_step(ps);
        EXPECT_DOUBLE_EQ(p.value()[0], 1.0 + i);
    }
    p.mutable_value()[0] = 11.0;
    la.after_step(ps);
    EXPECT_DOUBLE_EQ(p.value()[0], 6.0);
    EXPECT_DOUBLE_EQ(la.slow()[0][0], 6.0);
}

TEST(Optimizer, QuadraticBowlConverges) {
    for (bool lookahead : {false, true}) {
        ParameterSet ps;
        Var x = ps.add("x", Grid(Shape{3}, std::vector<double>{2.0, -1.0, 0.5}));
        Optimizer opt({.lr = 0.05, .momentum = 0.9, .clip_norm = 0.0, .use_lookahead = lookahead});
        for (int it = 0; it < 2000; ++it) {
            ps.zero_grad();
            Grid g = x.value();
            g *= 2.0;
            x.node()->grad_buffer() = g;
            opt.step(ps);
        }
        for (double v : x.value().values()) EXPECT_LT(std::abs(v), 1e-6) << lookahead;
        EXPECT_EQ(opt.iteration(), 2000u);
    }
}

TEST(Optimizer, CyclicScheduleDrivesLr) {
    OptimizerConfig cfg{.lr = 0.5, .use_cyclic_lr = true, .cyclic = {.base_lr = 0.01, .max_lr = 0.1, .step_size = 10, .gamma = 1.0}};
    Optimizer opt(cfg);
    EXPECT_DOUBLE_EQ(opt.current_lr(), 0.01);
    opt.set_iteration(10);
    EXPECT_DOUBLE_EQ(opt.current_lr(), 0.1);
    OptimizerConfig flat{.lr = 0.5};
    EXPECT_DOUBLE_EQ(Optimizer(flat).current_lr(), 0.5);
}
