#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

namespace difforge::cli {

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::size_t workers = 1;
};

struct GenCorpusArgs {
    std::optional<std::size_t> n;
    std::optional<std::size_t> size;
    double train_fraction = 0.8;
};

struct TrainArgs {
    std::string corpus;
    std::string augment;
    std::string resume;
    std::optional<std::size_t> epochs;
    std::optional<std::size_t> max_steps;
};

struct SampleArgs {
    std::string model;
    std::string corpus;
    std::size_t n = 16;
    std::size_t ddim_steps = 1000;
    bool ddpm = false;
    bool no_clip = false;
};

struct BalanceArgs {
    std::string corpus;
};

struct AugmentArgs {
    std::string model;
    std::string masks;
    std::optional<std::size_t> ddim_steps;
};

struct EvalArgs {
    std::string model;
    std::string corpus;
    std::string pred;
    std::string target;
};

struct ReportArgs {
    std::string baseline;
    std::string augmented;
    std::string rare_class = "emphysema";
};

std::filesystem::path output_dir(const Common& common, const std::string& command);

int gen_corpus(const Common& c, const GenCorpusArgs& a);
int train_diffusion(const Common& c, const TrainArgs& a);
int sample(const Common& c, const SampleArgs& a);
int balance_masks(const Common& c, const BalanceArgs& a);
int augment(const Common& c, const AugmentArgs& a);
int train_seg(const Common& c, const TrainArgs& a);
int eval(const Common& c, const EvalArgs& a);
int report(const Common& c, const ReportArgs& a);

}  // namespace difforge::cli
