#include <gtest/gtest.h>

#include <cmath>

#include "difforge/conditioning.hpp"
#include "difforge/diffusion.hpp"
#include "difforge/nets.hpp"
#include "difforge/noise_schedule.hpp"
#include "difforge/ops.hpp"

using namespace difforge;

namespace {
// Running product over the default linear schedule, computed at 50 digits.
constexpr double kAlphaBar1000 = 4.035829765375683314817635e-5;

// Returns the exact noise that maps x0 to xt at each requested step.
NoiseModel exact_eps(const Grid& x0, const NoiseSchedule& s) {
    return [&x0, &s](const Grid& xt, std::span<const std::size_t> t, std::span<const ClassMask>) {
        Grid e(xt.shape());
        const std::size_t per = xt.size() / t.size();
        for (std::size_t i = 0; i < xt.size(); ++i) {
            const double ab = s.alpha_bar(t[i / per]);
            e[i] = (xt[i] - std::sqrt(ab) * x0[i]) / std::sqrt(1.0 - ab);
        }
        return constant(std::move(e));
    };
}

std::vector<ClassMask> flat_masks(std::size_t n, std::size_t h, std::size_t w) { return std::vector<ClassMask>(n, ClassMask(h, w, 2)); }
}  // namespace

TEST(NoiseSchedule, SmallSchedules) {
    auto s = NoiseSchedule::linear(2, 0.1, 0.2);
    EXPECT_DOUBLE_EQ(s.alpha_bar(1), 0.9);
    EXPECT_NEAR(s.alpha_bar(2), 0.72, 1e-15);
    EXPECT_DOUBLE_EQ(s.posterior_sigma2(2), 0.2);
    EXPECT_DOUBLE_EQ(s.posterior_sigma2(1), 0.1);
    EXPECT_DOUBLE_EQ(NoiseSchedule::linear(1, 0.5, 0.5).alpha_bar(1), 0.5);
}

TEST(NoiseSchedule, GoldenAlphaBar) {
    auto s = NoiseSchedule::linear(1000);
    EXPECT_NEAR(s.alpha_bar(1000), kAlphaBar1000, 1e-12 * kAlphaBar1000);
    for (std::size_t t = 2; t <= 1000; ++t) {
        EXPECT_NEAR(s.alpha_bar(t) / s.alpha_bar(t - 1), 1.0 - s.beta(t), 1e-12);
        EXPECT_LT(s.alpha_bar(t), s.alpha_bar(t - 1));
        EXPECT_GT(s.posterior_sigma2(t), 0.0);
    }
}

TEST(NoiseSchedule, RejectsBadArguments) {
    EXPECT_THROW(NoiseSchedule::linear(0), std::invalid_argument);
    EXPECT_THROW(NoiseSchedule::linear(10, 0.0, 0.1), std::invalid_argument);
    EXPECT_THROW(NoiseSchedule::linear(10, 0.2, 0.1), std::invalid_argument);
    EXPECT_THROW(NoiseSchedule::linear(10, 0.1, 1.0), std::invalid_argument);
    auto s = NoiseSchedule::linear(10);
    EXPECT_THROW(s.alpha_bar(0), std::out_of_range);
    EXPECT_THROW(s.beta(11), std::out_of_range);
    EXPECT_DOUBLE_EQ(s.alpha_bar_or_one(0), 1.0);
}

TEST(ForwardProcess, ScalarValues) {
    auto s = NoiseSchedule::from_betas({0.1, 0.2});
    Grid x0(Shape{1}, 1.0);
    EXPECT_NEAR(forward_sample(x0, 2, Grid(Shape{1}, 1.0), s)[0], 1.3776783996367751, 1e-12);
    EXPECT_NEAR(forward_sample(x0, 2, Grid(Shape{1}, 0.0), s)[0], std::sqrt(0.72), 1e-15);
}

TEST(ForwardProcess, LastStepIsNearlyStandardNormal) {
    auto s = NoiseSchedule::linear(1000);
    Rng rng(1);
    Grid x0(Shape{1'000'000}, 0.7);
    Grid out = forward_sample(x0, 1000, randn(x0.shape(), rng), s);
    const double m = mean(out);
    double v = 0;
    for (double x : out.values()) v += (x - m) * (x - m);
    v /= static_cast<double>(out.size());
    EXPECT_LT(std::abs(m), 0.01);
    EXPECT_NEAR(v, 1.0, 0.02);
}

TEST(ForwardProcess, IteratedDeterministicPartTelescopes) {
    auto s = NoiseSchedule::linear(1000);
    Rng rng(2);
    Grid x0 = randn(Shape{4, 1, 3, 3}, rng);
    for (std::size_t t : {1u, 7u, 300u, 1000u}) {
        Grid it = iterated_forward(x0, t, s, [](const Shape& sh) { return Grid::zeros(sh); });
        Grid closed = forward_sample(x0, t, Grid::zeros(x0.shape()), s);
        for (std::size_t i = 0; i < x0.size(); ++i) EXPECT_NEAR(it[i], closed[i], 1e-12);
    }
}

TEST(ForwardProcess, IteratedVarianceMatchesClosedForm) {
    auto s = NoiseSchedule::linear(100, 1e-3, 0.05);
    Rng rng(3);
    const std::size_t t = 40;
    Grid x0(Shape{100'000}, 0.5);
    Grid out = iterated_forward(x0, t, s, rng);
    const double a = std::sqrt(s.alpha_bar(t));
    double v = 0;
    for (std::size_t i = 0; i < out.size(); ++i) v += (out[i] - a * x0[i]) * (out[i] - a * x0[i]);
    v /= static_cast<double>(out.size());
    EXPECT_NEAR(v / (1.0 - s.alpha_bar(t)), 1.0, 0.02);
}

TEST(ReverseProcess, PosteriorMeanScalar) {
    auto s = NoiseSchedule::from_betas({0.1, 0.2});
    EXPECT_NEAR(posterior_mean(Grid(Shape{1}, 1.0), Grid(Shape{1}, 0.5), 2, s)[0], 0.90674542506776570, 1e-12);
    EXPECT_NEAR(posterior_mean(Grid(Shape{1}, 1.0), Grid(Shape{1}, 0.0), 2, s)[0], 1.0 / std::sqrt(0.8), 1e-15);
}

TEST(ReverseProcess, PosteriorMeanAtStepOneInvertsForward) {
    auto s = NoiseSchedule::linear(1000);
    Rng rng(4);
    Grid x0 = randn(Shape{50}, rng), eps = randn(Shape{50}, rng);
    Grid back = posterior_mean(forward_sample(x0, 1, eps, s), eps, 1, s);
    for (std::size_t i = 0; i < x0.size(); ++i) EXPECT_NEAR(back[i], x0[i], 1e-10);
}

TEST(ReverseProcess, PredictX0InvertsForwardAtEveryStep) {
    auto s = NoiseSchedule::linear(1000);
    Rng rng(5);
    Grid x0 = randn(Shape{20}, rng), eps = randn(Shape{20}, rng);
    for (std::size_t t = 1; t <= 1000; t += 37) {
        Grid back = predict_x0(forward_sample(x0, t, eps, s), eps, t, s);
        for (std::size_t i = 0; i < x0.size(); ++i) EXPECT_NEAR(back[i], x0[i], 1e-10) << "t=" << t;
    }
}

TEST(TrainingLoss, PerfectAndZeroPredictors) {
    auto s = NoiseSchedule::linear(1000);
    Rng rng(6);
    auto batch = DiffusionBatch::draw(randn(Shape{4, 1, 8, 8}, rng), flat_masks(4, 8, 8), s, rng);
    NoiseModel perfect = exact_eps(batch.x0, s);
    EXPECT_NEAR(training_loss(batch, perfect).value()[0], 0.0, 1e-20);

    auto big = DiffusionBatch::draw(Grid(Shape{100, 1, 32, 32}), flat_masks(100, 32, 32), s, rng);
    NoiseModel zero = [](const Grid& xt, auto, auto) { return constant(Grid::zeros(xt.shape())); };
    EXPECT_NEAR(training_loss(big, zero).value()[0], 1.0, 0.02);
}

TEST(Sampling, SingleStepDdpmReturnsEncodedImage) {
    auto s = NoiseSchedule::from_betas({0.3});
    Rng rng(7);
    Grid x0 = randn(Shape{2, 1, 4, 4}, rng);
    Grid out = ddpm_sample(exact_eps(x0, s), flat_masks(2, 4, 4), s, rng);
    for (std::size_t i = 0; i < x0.size(); ++i) EXPECT_NEAR(out[i], x0[i], 1e-10);
}

TEST(Sampling, DdimWithExactNoiseRecoversData) {
    auto s = NoiseSchedule::linear(1000);
    Rng rng(8);
    Grid x0 = randn(Shape{2, 1, 4, 4}, rng);
    for (double& v : x0.values()) v = std::clamp(v * 0.3, -1.0, 1.0);
    for (std::size_t n : {1u, 10u, 50u}) {
        Grid out = ddim_sample(exact_eps(x0, s), flat_masks(2, 4, 4), s, n, rng);
        for (std::size_t i = 0; i < x0.size(); ++i) EXPECT_NEAR(out[i], x0[i], 1e-10);
    }
}

TEST(Sampling, DdimTimesteps) {
    auto ts = ddim_timesteps(1000, 50);
    ASSERT_EQ(ts.size(), 50u);
    EXPECT_EQ(ts.front(), 1000u);
    EXPECT_EQ(ts.back(), 1u);
    for (std::size_t i = 1; i < ts.size(); ++i) EXPECT_LT(ts[i], ts[i - 1]);
    auto full = ddim_timesteps(20, 20);
    for (std::size_t i = 0; i < 20; ++i) EXPECT_EQ(full[i], 20 - i);
    EXPECT_EQ(ddim_timesteps(10, 1), std::vector<std::size_t>{10});
    EXPECT_THROW(ddim_timesteps(10, 0), std::out_of_range);
    EXPECT_THROW(ddim_timesteps(10, 11), std::out_of_range);
}

TEST(Sampling, DeterministicUnderSeedAndFinite) {
    auto s = NoiseSchedule::linear(50);
    Rng init(9);
    Denoiser net(5, [] {
        auto a = Denoiser::default_arch(5);
        a.base_channels = 4;
        a.groups = 2;
        a.zero_init_output = false;
        return a;
    }(), init);
    NoGradGuard g;
    auto masks = flat_masks(2, 8, 8);
    Rng r1(10), r2(10);
    Grid a = ddpm_sample(as_noise_model(net), masks, s, r1);
    Grid b = ddpm_sample(as_noise_model(net), masks, s, r2);
    EXPECT_EQ(a.shape(), (Shape{2, 1, 8, 8}));
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
    EXPECT_TRUE(a.all_finite());
    Rng r3(11), r4(11);
    Grid c = ddim_sample(as_noise_model(net), masks, s, 10, r3);
    Grid d = ddim_sample(as_noise_model(net), masks, s, 10, r4);
    for (std::size_t i = 0; i < c.size(); ++i) EXPECT_EQ(c[i], d[i]);
    EXPECT_TRUE(c.all_finite());
}

TEST(Conditioning, OneHotChannelsAndRoundTrip) {
    ClassMask m(3, 3, 0);
    m.at(1, 1) = 4;
    m.at(0, 2) = 2;
    const std::vector<ClassMask> masks{m};
    Grid in = condition_input(Grid(Shape{1, 1, 3, 3}, 0.5), masks, 5);
    EXPECT_EQ(in.shape(), (Shape{1, 6, 3, 3}));
    EXPECT_EQ(in.at(0, 0, 2, 2), 0.5);
    EXPECT_EQ(in.at(0, 1, 2, 2), 1.0);
    EXPECT_EQ(in.at(0, 5, 1, 1), 1.0);
    EXPECT_EQ(argmax_channels(one_hot(masks, 5))[0], m);
    ClassMask bg(2, 2, 0);
    Grid oh = one_hot(std::vector<ClassMask>{bg}, 5);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(oh[i], 1.0);
    m.at(0, 0) = 7;
    EXPECT_THROW(one_hot(std::vector<ClassMask>{m}, 5), std::out_of_range);
}
