#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "difforge/config.hpp"
#include "difforge/serialize.hpp"
#include "difforge/trainer.hpp"

using namespace difforge;
using namespace difforge::train;
namespace fs = std::filesystem;

namespace {
UNetArch toy_arch(std::size_t in, std::size_t out, bool time) {
    UNetArch a;
    a.in_channels = in;
    a.out_channels = out;
    a.base_channels = 4;
    a.levels = 1;
    a.groups = 2;
    a.convs_per_block = 1;
    a.time_conditioned = time;
    a.zero_init_output = time;
    a.input_skip = time;
    return a;
}

std::vector<corpus::SliceRecord> toy_corpus(std::size_t n = 8) {
    corpus::CorpusSpec spec;
    spec.n_samples = n;
    spec.size = 8;
    spec.slices_per_patient = 2;
    return corpus::generate_corpus(spec);
}

DiffusionConfig toy_diffusion() {
    DiffusionConfig c;
    c.epochs = 4;
    c.batch_size = 4;
    c.schedule.steps = 50;
    c.arch = toy_arch(1 + tissue::kNumClasses, 1, true);
    c.checkpoint_interval = 2;
    return c;
}

SegConfig toy_seg() {
    SegConfig c;
    c.epochs = 3;
    c.batch_size = 4;
    c.arch = toy_arch(1, tissue::kNumClasses, false);
    c.checkpoint_interval = 1;
    return c;
}

bool same_params(const ParameterSet& a, const ParameterSet& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const Grid& x = a.entries()[i].second.value();
        const Grid& y = b.entries()[i].second.value();
        if (x.shape() != y.shape()) return false;
        for (std::size_t k = 0; k < x.size(); ++k)
            if (x[k] != y[k]) return false;
    }
    return true;
}

fs::path scratch(const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("difforge_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}
}  // namespace

TEST(Checkpoint, RoundTripPreservesTensorsAndHeader) {
    Checkpoint ck;
    ck.header = {{"kind", "test"}, {"n", 3}};
    Rng rng(1);
    ck.put("a", randn(Shape{2, 3}, rng));
    ck.put("b", Grid::scalar(4.5));
    const fs::path dir = scratch("ck_rt");
    save_checkpoint(dir / "x.dfck", ck);
    Checkpoint back = load_checkpoint(dir / "x.dfck");
    EXPECT_EQ(back.header, ck.header);
    ASSERT_TRUE(back.has("a"));
    for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(back.tensor("a")[i], ck.tensor("a")[i]);
    EXPECT_EQ(back.tensor("b")[0], 4.5);
    std::ofstream(dir / "bad.dfck", std::ios::binary) << "nope";
    EXPECT_THROW(load_checkpoint(dir / "bad.dfck"), FormatError);
    fs::remove_all(dir);
}

TEST(TrainDiffusion, SeededRunsAreBitIdentical) {
    auto recs = toy_corpus();
    auto a = train_diffusion(recs, toy_diffusion());
    auto b = train_diffusion(recs, toy_diffusion());
    EXPECT_TRUE(same_params(a.net.params(), b.net.params()));
    EXPECT_EQ(a.manifest.loss_curve, b.manifest.loss_curve);
    EXPECT_EQ(a.manifest.loss_curve.size(), 4u);
    for (double l : a.manifest.loss_curve) EXPECT_TRUE(std::isfinite(l));
    DiffusionConfig other = toy_diffusion();
    other.seed = 2;
    EXPECT_FALSE(same_params(a.net.params(), train_diffusion(recs, other).net.params()));
}

TEST(TrainDiffusion, WorkerCountDoesNotChangeResult) {
    auto recs = toy_corpus();
    DiffusionConfig c = toy_diffusion();
    c.epochs = 2;
    auto a = train_diffusion(recs, c);
    c.workers = 3;
    EXPECT_TRUE(same_params(a.net.params(), train_diffusion(recs, c).net.params()));
}

TEST(TrainDiffusion, ResumeMatchesUninterruptedRun) {
    auto recs = toy_corpus();
    const fs::path dir = scratch("resume_diff");
    DiffusionConfig c = toy_diffusion();
    c.optimizer.use_cyclic_lr = true;
    c.optimizer.use_lookahead = true;
    auto full = train_diffusion(recs, c, {.dir = dir});
    ASSERT_TRUE(fs::exists(dir / "ckpt_epoch0002.dfck"));
    ASSERT_TRUE(fs::exists(dir / "ckpt_final.dfck"));
    auto resumed = train_diffusion(recs, c, {.resume_from = dir / "ckpt_epoch0002.dfck"});
    EXPECT_TRUE(same_params(full.net.params(), resumed.net.params()));
    EXPECT_EQ(full.manifest.loss_curve, resumed.manifest.loss_curve);

    auto [net, sched] = load_denoiser(load_checkpoint(dir / "ckpt_final.dfck"));
    EXPECT_TRUE(same_params(net.params(), full.net.params()));
    EXPECT_EQ(sched.betas(), full.schedule.betas());

    auto other = toy_corpus(10);
    EXPECT_THROW(train_diffusion(other, c, {.resume_from = dir / "ckpt_epoch0002.dfck"}), FormatError);
    fs::remove_all(dir);
}

TEST(TrainDiffusion, AblationOffAndMaxSteps) {
    auto recs = toy_corpus();
    DiffusionConfig c = toy_diffusion();
    c.cbmat.delta0 = 0.0;
    c.max_steps = 3;
    auto r = train_diffusion(recs, c);
    EXPECT_EQ(r.manifest.steps, 3u);
    EXPECT_EQ(r.manifest.loss_curve.size(), 2u);
}

TEST(TrainDiffusion, DivergenceRaisesNumericalError) {
    auto recs = toy_corpus();
    DiffusionConfig c = toy_diffusion();
    c.optimizer.lr = 1e200;
    c.optimizer.clip_norm = 0.0;
    c.cbmat.delta0 = 0.0;
    const fs::path dir = scratch("diverge");
    try {
        train_diffusion(recs, c, {.dir = dir});
        FAIL() << "expected NumericalError";
    } catch (const NumericalError& e) {
        EXPECT_TRUE(e.state().contains("epoch"));
        EXPECT_EQ(e.state().value("dump", ""), "diverged");
    }
    EXPECT_TRUE(fs::exists(dir / "ckpt_diverged.dfck"));
    fs::remove_all(dir);
}

TEST(Augment, CardinalityDeterminismAndEmptyInput) {
    auto recs = toy_corpus();
    DiffusionConfig c = toy_diffusion();
    c.epochs = 1;
    auto run = train_diffusion(recs, c);
    auto masks = corpus::masks_of(recs);
    masks.resize(5);
    AugmentOptions o{.ddim_steps = 5, .chunk = 2};
    auto a = generate_augmentations(run.net, run.schedule, masks, o);
    ASSERT_EQ(a.size(), 5u);
    o.workers = 2;
    auto b = generate_augmentations(run.net, run.schedule, masks, o);
    for (std::size_t i = 0; i < 5; ++i) {
        EXPECT_EQ(a[i].mask, masks[i]);
        EXPECT_EQ(a[i].patient_id, "synthetic");
        for (std::size_t k = 0; k < a[i].hu.size(); ++k) {
            ASSERT_EQ(a[i].hu[k], b[i].hu[k]);
            EXPECT_EQ(a[i].hu[k], std::round(a[i].hu[k]));
            EXPECT_GE(a[i].hu[k], -1000.0);
            EXPECT_LE(a[i].hu[k], 1000.0);
        }
    }
    EXPECT_TRUE(generate_augmentations(run.net, run.schedule, std::span<const ClassMask>{}, o).empty());
}

TEST(Augment, ReducedDdimStaysCloseToFullTrajectory) {
    auto recs = toy_corpus();
    DiffusionConfig c = toy_diffusion();
    c.schedule.steps = 1000;
    c.epochs = 20;
    c.cbmat.delta0 = 0.0;
    auto run = train_diffusion(recs, c);
    auto masks = corpus::masks_of(recs);
    masks.resize(4);
    Rng r1(9), r2(9);
    Grid full = ddim_sample(as_noise_model(run.net), masks, run.schedule, 1000, r1);
    Grid fast = ddim_sample(as_noise_model(run.net), masks, run.schedule, 50, r2);
    double mae = 0;
    for (std::size_t i = 0; i < full.size(); ++i) mae += std::abs(full[i] - fast[i]);
    mae /= static_cast<double>(full.size());
    RecordProperty("mae", std::to_string(mae));
    EXPECT_NEAR(mae, 0.0067471, 0.05 * 0.0067471);
}

TEST(TrainSegmentation, DeterministicResumeAndEvaluate) {
    auto recs = toy_corpus();
    const fs::path dir = scratch("resume_seg");
    auto full = train_segmentation(recs, toy_seg(), {}, {.dir = dir});
    auto again = train_segmentation(recs, toy_seg());
    EXPECT_TRUE(same_params(full.net.params(), again.net.params()));
    auto resumed = train_segmentation(recs, toy_seg(), {}, {.resume_from = dir / "ckpt_epoch0001.dfck"});
    EXPECT_TRUE(same_params(full.net.params(), resumed.net.params()));
    SegNet loaded = load_segnet(load_checkpoint(dir / "ckpt_final.dfck"));
    EXPECT_TRUE(same_params(loaded.params(), full.net.params()));

    auto metrics = evaluate_segmentation(full.net, recs);
    EXPECT_EQ(metrics.at("n_slices"), recs.size());
    for (const auto& [name, v] : metrics.at("dice").items())
        if (!v.is_null()) {
            EXPECT_GE(v.get<double>(), 0.0);
            EXPECT_LE(v.get<double>(), 1.0);
        }
    EXPECT_EQ(evaluate_segmentation(full.net, recs), metrics);
    fs::remove_all(dir);
}

TEST(TrainSegmentation, AugmentationEntersTrainingPool) {
    auto recs = toy_corpus();
    auto base = train_segmentation(recs, toy_seg());
    auto extra = toy_corpus(4);
    auto aug = train_segmentation(recs, toy_seg(), extra);
    EXPECT_FALSE(same_params(base.net.params(), aug.net.params()));
    nlohmann::json a = base.manifest.to_json(), b = aug.manifest.to_json();
    EXPECT_NE(a.at("corpus_hash"), b.at("corpus_hash"));
    for (const char* k : {"corpus_hash", "loss_curve", "metrics", "steps", "wall_clock_s"}) {
        a.erase(k);
        b.erase(k);
    }
    EXPECT_EQ(a, b);
}

TEST(Augment, ClassMeansTrackPalette) {
    corpus::CorpusSpec spec;
    spec.n_samples = 32;
    spec.size = 8;
    spec.slices_per_patient = 4;
    spec.emphysema_slice_rate = 1.0;
    spec.ild_slice_rate = 1.0;
    auto recs = corpus::generate_corpus(spec);
    DiffusionConfig c = toy_diffusion();
    c.schedule.steps = 200;
    c.arch.base_channels = 8;
    c.batch_size = 16;
    c.epochs = 150;
    c.optimizer.lr = 0.05;
    c.cbmat.delta0 = 0.0;
    c.checkpoint_interval = 0;
    auto run = train_diffusion(recs, c);
    auto masks = corpus::masks_of(recs);
    auto synth = generate_augmentations(run.net, run.schedule, masks, {.ddim_steps = 20, .chunk = 16});
    std::vector<double> sum(tissue::kNumClasses, 0.0), n(tissue::kNumClasses, 0.0);
    for (const auto& r : synth)
        for (std::size_t i = 0; i < r.hu.size(); ++i) {
            sum[r.mask.labels[i]] += r.hu[i];
            n[r.mask.labels[i]] += 1;
        }
    std::vector<double> got, want;
    for (std::size_t k = 0; k < tissue::kNumClasses; ++k)
        if (n[k] > 0) {
            got.push_back(sum[k] / n[k]);
            want.push_back(spec.palette[k].mean_hu);
        }
    ASSERT_GE(got.size(), 4u);
    auto mean = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); };
    const double mg = mean(got), mw = mean(want);
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < got.size(); ++i) {
        sxy += (got[i] - mg) * (want[i] - mw);
        sxx += (got[i] - mg) * (got[i] - mg);
        syy += (want[i] - mw) * (want[i] - mw);
    }
    const double corr = sxy / std::sqrt(sxx * syy);
    RecordProperty("correlation", std::to_string(corr));
    EXPECT_GT(corr, 0.9);
}

TEST(Config, StrictReader) {
    auto j = nlohmann::json::parse(R"({"epochs": 3, "cbmat": {"delta0": 0.5, "law": "proportional"}})");
    auto c = config_from_json<DiffusionConfig>(j, "diffusion");
    EXPECT_EQ(c.epochs, 3u);
    EXPECT_EQ(c.cbmat.delta0, 0.5);
    EXPECT_EQ(c.cbmat.law, cbmat::AblationLaw::proportional);
    EXPECT_EQ(c.batch_size, DiffusionConfig{}.batch_size);
    EXPECT_THROW(config_from_json<DiffusionConfig>(nlohmann::json::parse(R"({"epoch": 3})"), "diffusion"), ConfigError);
    EXPECT_THROW(config_from_json<DiffusionConfig>(nlohmann::json::parse(R"({"epochs": "x"})"), "diffusion"), ConfigError);
    EXPECT_THROW(config_from_json<SegConfig>(nlohmann::json::parse(R"({"optimizer": {"lr": 0.1, "bogus": 1}})"), "seg"), ConfigError);
    nlohmann::json round = c;
    EXPECT_EQ(config_from_json<DiffusionConfig>(round, "diffusion").cbmat.delta0, 0.5);
}

TEST(Config, ValidationRejectsBadValues) {
    DiffusionConfig c;
    c.batch_size = 0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    SegConfig s;
    s.class_weights = {1.0, 2.0};
    EXPECT_THROW(s.validate(), std::invalid_argument);
}

TEST(Config, NestedOverridesKeepOtherDefaults) {
    auto c = config_from_json<DiffusionConfig>(nlohmann::json::parse(R"({"arch": {"base_channels": 8}})"), "diffusion");
    UNetArch expect = Denoiser::default_arch(tissue::kNumClasses);
    expect.base_channels = 8;
    EXPECT_EQ(nlohmann::json(c.arch), nlohmann::json(expect));
}
