#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "difforge/cbmat.hpp"
#include "difforge/corpus.hpp"

using namespace difforge;
using namespace difforge::corpus;

TEST(Corpus, FrequenciesMatchTargets) {
    CorpusSpec spec;
    spec.n_samples = 500;
    spec.seed = 11;
    auto recs = generate_corpus(spec);
    ASSERT_EQ(recs.size(), 500u);
    auto f = cbmat::compute_frequencies(masks_of(recs), tissue::kNumClasses);
    for (std::size_t c = 0; c < tissue::kNumClasses; ++c)
        EXPECT_NEAR(f.f[c], spec.target_frequencies[c], 0.2 * spec.target_frequencies[c]) << c;
}

TEST(Corpus, DeterministicPerSeed) {
    CorpusSpec spec;
    spec.n_samples = 20;
    auto a = generate_corpus(spec), b = generate_corpus(spec);
    EXPECT_EQ(corpus_hash(a), corpus_hash(b));
    spec.seed = 2;
    EXPECT_NE(corpus_hash(a), corpus_hash(generate_corpus(spec)));
}

TEST(Corpus, RejectsInfeasibleSpecs) {
    CorpusSpec spec;
    spec.target_frequencies = {0.4, 0.436, 0.02, 0.1, 0.044};
    EXPECT_THROW(generate_corpus(spec), std::invalid_argument);
    spec = CorpusSpec{};
    spec.size = 30;
    EXPECT_THROW(spec.validate(), std::invalid_argument);
    spec = CorpusSpec{};
    spec.target_frequencies[0] = 0.5;
    EXPECT_THROW(spec.validate(), std::invalid_argument);
}

TEST(Preprocess, BackgroundMappedAndRange) {
    CorpusSpec spec;
    spec.n_samples = 3;
    for (const auto& r : generate_corpus(spec)) {
        Grid x = preprocess(r.hu, r.mask);
        for (std::size_t i = 0; i < x.size(); ++i) {
            EXPECT_GE(x[i], -1.0);
            EXPECT_LE(x[i], 1.0);
            if (r.mask.labels[i] == tissue::kBackground) EXPECT_EQ(x[i], -1.0);
        }
        Grid once = clip_and_mask(r.hu, r.mask);
        EXPECT_EQ(clip_and_mask(once, r.mask).values().size(), once.size());
        Grid twice = clip_and_mask(once, r.mask);
        for (std::size_t i = 0; i < once.size(); ++i) EXPECT_EQ(once[i], twice[i]);
    }
    Grid hot(Shape{2, 2}, 3000.0);
    ClassMask body(2, 2, tissue::kSurrounding);
    EXPECT_EQ(preprocess(hot, body)[0], 1.0);
}

TEST(Corpus, SaveLoadRoundTrip) {
    CorpusSpec spec;
    spec.n_samples = 12;
    spec.size = 16;
    auto recs = generate_corpus(spec);
    const auto dir = std::filesystem::temp_directory_path() / "difforge_corpus_rt";
    std::filesystem::remove_all(dir);
    save_corpus(dir, recs);
    auto back = load_corpus(dir);
    ASSERT_EQ(back.size(), recs.size());
    EXPECT_EQ(corpus_hash(back), corpus_hash(recs));
    for (std::size_t i = 0; i < recs.size(); ++i) {
        EXPECT_EQ(back[i].patient_id, recs[i].patient_id);
        EXPECT_EQ(back[i].mask, recs[i].mask);
    }
    std::filesystem::remove_all(dir);
}

TEST(Corpus, SplitKeepsPatientsTogether) {
    CorpusSpec spec;
    spec.n_samples = 100;
    spec.size = 16;
    auto recs = generate_corpus(spec);
    Rng rng(3);
    auto [train, test] = split_by_patient(recs, 0.8, rng);
    EXPECT_EQ(train.size() + test.size(), recs.size());
    auto a = patient_ids(train), b = patient_ids(test);
    std::set<std::string> sa(a.begin(), a.end());
    for (const auto& id : b) EXPECT_FALSE(sa.count(id)) << id;
    EXPECT_EQ(sa.size(), 8u);
}
