#include <gtest/gtest.h>

#include "difforge/cbmat.hpp"

using namespace difforge;
using namespace difforge::cbmat;

namespace {
ClassMask all_classes_mask() {
    ClassMask m(4, 5, 0);
    for (std::size_t i = 0; i < m.size(); ++i) m.labels[i] = static_cast<std::uint8_t>(i % 5);
    return m;
}
}  // namespace

TEST(Cbmat, FrequenciesCountPixels) {
    ClassMask m(10, 10, 0);
    for (std::size_t i = 0; i < 25; ++i) m.labels[i] = 2;
    auto f = compute_frequencies(std::vector<ClassMask>{m}, 5);
    EXPECT_DOUBLE_EQ(f.f[0], 0.75);
    EXPECT_DOUBLE_EQ(f.f[2], 0.25);
    EXPECT_DOUBLE_EQ(f.f[1] + f.f[3] + f.f[4], 0.0);
    auto one = compute_frequencies(std::vector<ClassMask>{ClassMask(3, 3, 4)}, 5);
    EXPECT_EQ(one.f, (std::vector<double>{0, 0, 0, 0, 1}));
    EXPECT_THROW(compute_frequencies(std::vector<ClassMask>{}, 5), std::invalid_argument);
}

TEST(Cbmat, InitPolicyInverseLaw) {
    ClassFrequencies f{{0.5, 0.336, 0.123, 0.003, 0.038}};
    auto p = init_policy(f, 1.0, default_protected(), 10);
    EXPECT_DOUBLE_EQ(p.delta[3], 0.997);
    EXPECT_DOUBLE_EQ(p.delta[2], 0.877);
    EXPECT_EQ(p.delta[0], 0.0);
    EXPECT_EQ(p.delta[1], 0.0);
    auto off = init_policy(f, 0.0, default_protected(), 10);
    for (double d : off.delta) EXPECT_EQ(d, 0.0);
    auto prop = init_policy(f, 0.5, {}, 10, AblationLaw::proportional);
    EXPECT_DOUBLE_EQ(prop.delta[4], 0.019);
    EXPECT_EQ(prop.delta[0], 0.0);  // background always protected
    EXPECT_THROW(init_policy(f, 1.5, {}, 10), std::invalid_argument);
}

TEST(Cbmat, ClosedFormAnnealing) {
    AblationPolicy p;
    p.delta = {0, 0, 0.9};
    p.max_epoch = 10;
    EXPECT_DOUBLE_EQ(annealed_probability(p, 2, 0), 0.9);
    EXPECT_NEAR(annealed_probability(p, 2, 5), 0.45, 1e-15);
    EXPECT_EQ(annealed_probability(p, 2, 10), 0.0);
    EXPECT_THROW(annealed_probability(p, 2, 11), std::out_of_range);
}

TEST(Cbmat, CompoundedIsSmallerFromEpochTwo) {
    AblationPolicy closed;
    closed.delta = {0, 0, 0.8, 0.99};
    closed.max_epoch = 40;
    AblationPolicy comp = closed;
    comp.annealing = AnnealingMode::compounded;
    EXPECT_DOUBLE_EQ(annealed_probability(comp, 2, 1), annealed_probability(closed, 2, 1));
    for (std::size_t e = 2; e < 40; ++e) EXPECT_LT(annealed_probability(comp, 3, e), annealed_probability(closed, 3, e)) << e;
    EXPECT_EQ(annealed_probability(comp, 3, 40), 0.0);
}

TEST(Cbmat, AblateCertainAndNever) {
    const ClassMask m = all_classes_mask();
    AblationPolicy none;
    none.delta = {0, 0, 0, 0, 0};
    Rng rng(1);
    EXPECT_EQ(ablate(m, none, 0, rng), m);

    AblationPolicy sure = none;
    sure.delta[3] = 1.0;
    const ClassMask out = ablate(m, sure, 0, rng);
    EXPECT_EQ(out.count(3), 0u);
    EXPECT_EQ(out.count(0), m.count(0) + m.count(3));
    EXPECT_EQ(out.count(2), m.count(2));
    EXPECT_EQ(m.count(3), 4u);  // input untouched
}

TEST(Cbmat, EmpiricalRateAndProtection) {
    const ClassMask m = all_classes_mask();
    AblationPolicy p;
    p.delta = {0, 0.9, 0.7, 0.3, 0.0};
    p.protected_classes = {0, 1};
    p.max_epoch = 4;
    Rng rng(2);
    std::size_t hits2 = 0, hits3 = 0, hits1 = 0, hits2_e2 = 0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
        const ClassMask out = ablate(m, p, 0, rng);
        hits1 += out.count(1) == 0;
        hits2 += out.count(2) == 0;
        hits3 += out.count(3) == 0;
        hits2_e2 += ablate(m, p, 2, rng).count(2) == 0;
    }
    EXPECT_EQ(hits1, 0u);
    EXPECT_NEAR(hits2 / double(n), 0.7, 0.02);
    EXPECT_NEAR(hits3 / double(n), 0.3, 0.02);
    EXPECT_NEAR(hits2_e2 / double(n), 0.35, 0.02);
}

TEST(Cbmat, ParseNames) {
    EXPECT_EQ(parse_ablation_law("inverse"), AblationLaw::inverse);
    EXPECT_EQ(parse_annealing_mode(to_string(AnnealingMode::compounded)), AnnealingMode::compounded);
    EXPECT_THROW(parse_ablation_law("other"), std::invalid_argument);
}
