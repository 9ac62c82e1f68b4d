#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "difforge/nets.hpp"
#include "difforge/ops.hpp"
#include "gradcheck.hpp"

using namespace difforge;
using difforge::testing::grad_check;

namespace {
UNetArch tiny(std::size_t in, std::size_t out, bool time) {
    UNetArch a;
    a.in_channels = in;
    a.out_channels = out;
    a.base_channels = 4;
    a.levels = 1;
    a.groups = 2;
    a.convs_per_block = 1;
    a.time_conditioned = time;
    return a;
}

void jitter(ParameterSet& ps, Rng& rng, double scale) {
    for (auto& [_, v] : ps.entries()) {
        Var p = v;
        Grid& g = p.mutable_value();
        for (double& x : g.values()) x += scale * rng.normal();
    }
}

std::vector<ClassMask> striped_masks(std::size_t b, std::size_t n) {
    std::vector<ClassMask> out;
    for (std::size_t k = 0; k < b; ++k) {
        ClassMask m(n, n, tissue::kSurrounding);
        for (std::size_t r = 2; r < n - 2; ++r)
            for (std::size_t c = 2; c < n - 2; ++c) m.at(r, c) = static_cast<std::uint8_t>(2 + (r + c + k) % 3);
        out.push_back(m);
    }
    return out;
}

double max_abs_diff(const Grid& a, const Grid& b) {
    double d = 0;
    for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
    return d;
}
}  // namespace

TEST(Denoiser, UntrainedOutputIsZero) {
    Rng rng(1);
    Denoiser net(tissue::kNumClasses, Denoiser::default_arch(tissue::kNumClasses), rng);
    Grid xt = randn(Shape{2, 1, 16, 16}, rng);
    std::vector<std::size_t> t{1, 999};
    auto masks = striped_masks(2, 16);
    Grid out = net.forward(xt, t, masks).value();
    EXPECT_EQ(out.shape(), (Shape{2, 1, 16, 16}));
    for (double v : out.values()) EXPECT_EQ(v, 0.0);
}

TEST(Denoiser, DeterministicAndMaskSensitive) {
    Rng rng(2);
    Denoiser net(tissue::kNumClasses, tiny(1, 1, true), rng);
    jitter(net.params(), rng, 0.1);
    Grid xt = randn(Shape{1, 1, 8, 8}, rng);
    std::vector<std::size_t> t{123};
    auto masks = striped_masks(1, 8);
    Grid a = net.forward(xt, t, masks).value();
    Grid b = net.forward(xt, t, masks).value();
    EXPECT_EQ(max_abs_diff(a, b), 0.0);
    masks[0].at(4, 4) = tissue::kIld == masks[0].at(4, 4) ? tissue::kEmphysema : tissue::kIld;
    EXPECT_GT(max_abs_diff(a, net.forward(xt, t, masks).value()), 1e-9);
    std::vector<std::size_t> t2{124};
    EXPECT_GT(max_abs_diff(a, net.forward(xt, t2, striped_masks(1, 8)).value()), 1e-9);
}

TEST(Denoiser, BatchEntriesAreIndependent) {
    Rng rng(3);
    Denoiser net(tissue::kNumClasses, tiny(1, 1, true), rng);
    jitter(net.params(), rng, 0.1);
    Grid xt = randn(Shape{3, 1, 8, 8}, rng);
    std::vector<std::size_t> t{5, 500, 900};
    auto masks = striped_masks(3, 8);
    Grid full = net.forward(xt, t, masks).value();
    for (std::size_t k = 0; k < 3; ++k) {
        Grid one(Shape{1, 1, 8, 8});
        for (std::size_t i = 0; i < 64; ++i) one[i] = xt[k * 64 + i];
        std::vector<std::size_t> tk{t[k]};
        std::vector<ClassMask> mk{masks[k]};
        Grid single = net.forward(one, tk, mk).value();
        for (std::size_t i = 0; i < 64; ++i) EXPECT_NEAR(single[i], full[k * 64 + i], 1e-12);
    }
}

TEST(Denoiser, FullNetworkGradient) {
    Rng rng(4);
    UNetArch a = tiny(1, 1, true);
    a.input_skip = true;
    Denoiser net(tissue::kNumClasses, a, rng);
    jitter(net.params(), rng, 0.2);
    Grid xt = randn(Shape{2, 1, 8, 8}, rng);
    std::vector<std::size_t> t{10, 700};
    auto masks = striped_masks(2, 8);
    std::vector<std::pair<std::string, Var>> leaves(net.params().entries().begin(), net.params().entries().end());
    auto f = [&] {
        Var y = net.forward(xt, t, masks);
        return ops::mean(ops::mul(y, y));
    };
    auto r = grad_check(leaves, f, 6, rng);
    EXPECT_LT(r.worst, 1e-4) << r.where;
}

TEST(Denoiser, InputSkipNeedsTimeConditioning) {
    Rng rng(5);
    UNetArch a = tiny(1, 1, false);
    a.input_skip = true;
    EXPECT_THROW(UNet(a, rng), std::invalid_argument);
}

TEST(SegNet, PredictShapesAndRange) {
    Rng rng(6);
    SegNet net(tissue::kNumClasses, tiny(1, tissue::kNumClasses, false), rng);
    Grid img = randn(Shape{2, 1, 8, 8}, rng);
    EXPECT_EQ(net.forward(img).shape(), (Shape{2, tissue::kNumClasses, 8, 8}));
    auto pred = net.predict(img);
    ASSERT_EQ(pred.size(), 2u);
    for (const auto& m : pred) {
        EXPECT_EQ(m.height, 8u);
        EXPECT_EQ(m.width, 8u);
        for (auto l : m.labels) EXPECT_LT(l, tissue::kNumClasses);
    }
}

TEST(SegNet, ArgmaxFollowsScores) {
    Rng rng(7);
    SegNet net(tissue::kNumClasses, tiny(1, tissue::kNumClasses, false), rng);
    jitter(net.params(), rng, 0.3);
    Grid img = randn(Shape{1, 1, 8, 8}, rng);
    Grid s = net.forward(img).value();
    ClassMask m = net.predict(img)[0];
    for (std::size_t r = 0; r < 8; ++r)
        for (std::size_t c = 0; c < 8; ++c) {
            std::size_t best = 0;
            for (std::size_t k = 1; k < tissue::kNumClasses; ++k)
                if (s.at(0, k, r, c) > s.at(0, best, r, c)) best = k;
            EXPECT_EQ(m.at(r, c), best);
        }
}

TEST(SegLoss, PerfectScoresApproachZero) {
    ClassMask m(4, 4, 0);
    for (std::size_t i = 0; i < 16; ++i) m.labels[i] = static_cast<std::uint8_t>(i % tissue::kNumClasses);
    Grid s(Shape{1, tissue::kNumClasses, 4, 4}, -30.0);
    for (std::size_t i = 0; i < 16; ++i) s.at(0, m.labels[i], i / 4, i % 4) = 30.0;
    std::vector<ClassMask> t{m};
    std::vector<double> w(tissue::kNumClasses, 1.0);
    EXPECT_LT(seg_loss(constant(s), t, w).value()[0], 1e-9);
}

TEST(Sinusoidal, LayoutAndBounds) {
    std::vector<std::size_t> t{0, 17};
    Grid e = sinusoidal_embedding(t, 8);
    EXPECT_EQ(e.shape(), (Shape{2, 8}));
    for (std::size_t j = 0; j < 4; ++j) {
        EXPECT_EQ(e[j], 0.0);
        EXPECT_EQ(e[4 + j], 1.0);
    }
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(e[8 + j] * e[8 + j] + e[12 + j] * e[12 + j], 1.0, 1e-12);
}
