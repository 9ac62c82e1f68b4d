#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "difforge/cbmat.hpp"
#include "difforge/checkpoint.hpp"
#include "difforge/corpus.hpp"
#include "difforge/diffusion.hpp"
#include "difforge/nets.hpp"
#include "difforge/noise_schedule.hpp"
#include "difforge/optim.hpp"

namespace difforge::train {

/// Non-finite loss or parameters. `state` describes where it happened.
class NumericalError : public std::runtime_error {
   public:
    NumericalError(const std::string& what, nlohmann::json state) : std::runtime_error(what), state_(std::move(state)) {}
    const nlohmann::json& state() const { return state_; }

   private:
    nlohmann::json state_;
};

struct ScheduleConfig {
    std::size_t steps = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;

    NoiseSchedule build() const { return NoiseSchedule::linear(steps, beta_start, beta_end); }
};

struct CbmatConfig {
    /// 0 disables ablation.
    double delta0 = 1.0;
    cbmat::AblationLaw law = cbmat::AblationLaw::inverse;
    cbmat::AnnealingMode annealing = cbmat::AnnealingMode::closed_form;
    std::set<std::size_t> protected_classes = cbmat::default_protected();
    /// Anneal over optimizer steps instead of epochs.
    bool step_indexed = false;
};

struct EarlyStop {
    bool enabled = false;
    std::size_t patience = 10;
    double min_delta = 1e-4;
};

struct DiffusionConfig {
    std::size_t epochs = 40;
    std::size_t batch_size = 16;
    /// Stop after this many optimizer steps (0 = no cap).
    std::size_t max_steps = 0;
    ScheduleConfig schedule{};
    UNetArch arch = Denoiser::default_arch(tissue::kNumClasses);
    optim::OptimizerConfig optimizer{.lr = 0.02, .momentum = 0.9, .clip_norm = 1.0};
    CbmatConfig cbmat{};
    EarlyStop early_stop{};
    std::uint64_t seed = 1;
    /// Epochs between checkpoints (0 = only the final one).
    std::size_t checkpoint_interval = 10;
    /// Threads preparing batches (ablation, noising). The gradient step is serial.
    std::size_t workers = 1;

    void validate() const;
};

struct SegConfig {
    std::size_t epochs = 30;
    std::size_t batch_size = 16;
    std::size_t max_steps = 0;
    UNetArch arch = SegNet::default_arch(tissue::kNumClasses);
    optim::OptimizerConfig optimizer{.lr = 0.01,
                                     .momentum = 0.9,
                                     .clip_norm = 1.0,
                                     .use_cyclic_lr = true,
                                     .cyclic = {.base_lr = 0.005, .max_lr = 0.05, .step_size = 100, .gamma = 0.9995},
                                     .use_lookahead = true};
    /// Empty means all ones.
    std::vector<double> class_weights{};
    double dice_weight = 1.0;
    /// Random horizontal flips of image and mask.
    bool flip_augment = true;
    EarlyStop early_stop{};
    std::uint64_t seed = 1;
    std::size_t checkpoint_interval = 10;

    void validate() const;
};

struct RunManifest {
    std::string command;
    nlohmann::json config;
    std::string corpus_hash;
    std::vector<double> loss_curve;
    nlohmann::json metrics = nlohmann::json::object();
    std::size_t steps = 0;
    bool early_stopped = false;
    double wall_clock_s = 0.0;

    nlohmann::json to_json() const;
};

std::string hex_hash(std::uint64_t h);

/// Where and how often to write checkpoints; optional resume source.
struct CheckpointPolicy {
    std::optional<std::filesystem::path> dir;
    std::optional<std::filesystem::path> resume_from;
    std::string prefix = "ckpt";
};

struct DiffusionRun {
    Denoiser net;
    NoiseSchedule schedule;
    RunManifest manifest;
};

/// Conditional diffusion training with class-balanced mask ablation. Every
/// draw ablates its mask first, then samples t and the noise.
DiffusionRun train_diffusion(std::span<const corpus::SliceRecord> records, const DiffusionConfig& config, const CheckpointPolicy& ckpt = {});

struct AugmentOptions {
    std::size_t ddim_steps = 1000;
    /// Masks per forward pass. Fixed so results do not depend on `workers`.
    std::size_t chunk = 16;
    std::size_t workers = 1;
    std::uint64_t seed = 1;
    SamplerOptions sampler{};
};

/// One DDIM sample per mask; each record carries its mask as ground truth.
std::vector<corpus::SliceRecord> generate_augmentations(const Denoiser& net, const NoiseSchedule& schedule, std::span<const ClassMask> masks,
                                                        const AugmentOptions& options);

struct SegRun {
    SegNet net;
    RunManifest manifest;
};

/// CE + soft Dice, SGD under cyclic LR with Lookahead. `augment` records are
/// appended to the training pool.
SegRun train_segmentation(std::span<const corpus::SliceRecord> train_set, const SegConfig& config,
                          std::span<const corpus::SliceRecord> augment = {}, const CheckpointPolicy& ckpt = {});

/// Pooled per-class Dice over the whole set; null for classes absent from
/// both prediction and target.
nlohmann::json evaluate_segmentation(const SegNet& net, std::span<const corpus::SliceRecord> test_set, std::size_t batch = 32);
/// The same summary for precomputed predictions.
nlohmann::json dice_summary(std::span<const ClassMask> predictions, std::span<const ClassMask> targets, std::size_t num_classes,
                            const std::string& test_hash);
std::vector<ClassMask> predict_masks(const SegNet& net, std::span<const corpus::SliceRecord> records, std::size_t batch = 32);

/// Checkpoint (de)serialization of networks and optimizer state.
Checkpoint pack(const ParameterSet& params, const optim::Optimizer* opt);
void unpack_params(const Checkpoint& ck, ParameterSet& params);
void unpack_optimizer(const Checkpoint& ck, const ParameterSet& params, optim::Optimizer& opt);

Checkpoint save_denoiser(const Denoiser& net, const NoiseSchedule& schedule);
std::pair<Denoiser, NoiseSchedule> load_denoiser(const Checkpoint& ck);
Checkpoint save_segnet(const SegNet& net);
SegNet load_segnet(const Checkpoint& ck);

}  // namespace difforge::train
