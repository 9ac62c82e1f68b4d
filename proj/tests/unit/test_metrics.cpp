#include <gtest/gtest.h>

#include <cmath>

#include "difforge/metrics.hpp"
#include "difforge/rng.hpp"

using namespace difforge;
using namespace difforge::metrics;

namespace {
Grid image(std::size_t n, double v) { return Grid(Shape{n, n}, v); }

Grid noise_image(std::size_t n, Rng& rng) {
    Grid g(Shape{n, n});
    for (double& x : g.values()) x = rng.uniform();
    return g;
}
}  // namespace

TEST(Psnr, KnownValuesAndSentinel) {
    Grid a = image(10, 0.5), b = image(10, 0.6);
    EXPECT_NEAR(psnr(a, b, 1.0), 20.0, 1e-12);
    EXPECT_EQ(psnr(a, a, 1.0), kIdenticalPsnr);
    EXPECT_THROW(psnr(a, image(9, 0.5), 1.0), ShapeError);
    EXPECT_THROW(psnr(a, b, 0.0), std::invalid_argument);
}

TEST(Psnr, DecreasingInError) {
    Grid a = image(8, 0.0);
    double prev = kIdenticalPsnr;
    for (double e : {0.01, 0.02, 0.05, 0.1, 0.5}) {
        const double p = psnr(a, image(8, e), 1.0);
        EXPECT_LT(p, prev);
        prev = p;
    }
}

TEST(Ssim, IdenticalAndConstantImages) {
    Rng rng(1);
    Grid x = noise_image(16, rng);
    EXPECT_NEAR(ssim(x, x, 1.0), 1.0, 1e-12);
    EXPECT_NEAR(ssim(image(16, 0.25), image(16, 0.75), 1.0), 0.6000639897616381, 1e-4);
    EXPECT_THROW(ssim(image(5, 0.0), image(5, 0.0), 1.0), std::invalid_argument);
}

TEST(Ssim, SymmetricAndBounded) {
    Rng rng(2);
    for (int k = 0; k < 10; ++k) {
        Grid a = noise_image(12, rng), b = noise_image(12, rng);
        const double s = ssim(a, b, 1.0);
        EXPECT_NEAR(s, ssim(b, a, 1.0), 1e-12);
        EXPECT_LE(s, 1.0);
        EXPECT_GE(s, -1.0);
    }
}

TEST(Dice, UnitValues) {
    ClassMask a(4, 4, 0), b(4, 4, 0);
    for (std::size_t i = 0; i < 4; ++i) a.labels[i] = 3;
    for (std::size_t i = 2; i < 6; ++i) b.labels[i] = 3;
    EXPECT_DOUBLE_EQ(*dice(a, b, 3), 0.5);
    EXPECT_DOUBLE_EQ(*dice(a, a, 3), 1.0);
    ClassMask c(4, 4, 0);
    for (std::size_t i = 8; i < 12; ++i) c.labels[i] = 3;
    EXPECT_DOUBLE_EQ(*dice(a, c, 3), 0.0);
    EXPECT_FALSE(dice(a, b, 4).has_value());
    EXPECT_DOUBLE_EQ(*dice(a, b, 3), *dice(b, a, 3));
    EXPECT_THROW(dice(a, ClassMask(3, 3, 0), 3), ShapeError);
}

TEST(Dice, PooledOverSet) {
    ClassMask a(2, 2, 0), b(2, 2, 0), e(2, 2, 0);
    a.labels = {1, 1, 1, 1};
    b.labels = {1, 1, 0, 0};
    std::vector<ClassMask> pred{a, e}, tgt{b, e};
    EXPECT_DOUBLE_EQ(*dice(pred, tgt, 1), 2.0 * 2 / 6);
}

TEST(MeanDefined, SkipsUndefined) {
    std::vector<std::optional<double>> v{0.5, std::nullopt, 1.0};
    EXPECT_DOUBLE_EQ(*mean_defined(v), 0.75);
    std::vector<std::optional<double>> none{std::nullopt};
    EXPECT_FALSE(mean_defined(none).has_value());
}
