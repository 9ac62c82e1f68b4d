#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "difforge/autograd.hpp"
#include "difforge/class_mask.hpp"
#include "difforge/rng.hpp"

namespace difforge {

/// Named, ordered parameter collection. Order is insertion order and is
/// what checkpoints and optimizers rely on.
class ParameterSet {
   public:
    Var add(std::string name, Grid init);
    const Var& get(const std::string& name) const;
    std::size_t size() const { return entries_.size(); }
    std::size_t scalar_count() const;
    const std::vector<std::pair<std::string, Var>>& entries() const { return entries_; }
    void zero_grad();

   private:
    std::vector<std::pair<std::string, Var>> entries_;
};

struct UNetArch {
    std::size_t in_channels = 1;
    std::size_t out_channels = 1;
    std::size_t base_channels = 16;
    /// Number of 2x downsamplings.
    std::size_t levels = 2;
    std::size_t groups = 4;
    std::size_t convs_per_block = 2;
    bool time_conditioned = false;
    bool zero_init_output = false;
    /// Adds sum_k g_ok(t) * x[:, k] to output channel o, with g a zero-initialized
    /// linear map of the time embedding. Needs time conditioning.
    bool input_skip = false;
};

/// Small encoder-decoder with skip connections. Each block is
/// conv-GN-[+time]-SiLU, repeated convs_per_block times.
class UNet {
   public:
    UNet(const UNetArch& arch, Rng& init_rng);

    /// x: (B, in_channels, H, W) with H, W divisible by 2^levels.
    /// `timesteps` must hold B entries when the net is time conditioned.
    Var forward(const Var& x, std::span<const std::size_t> timesteps = {}) const;

    const UNetArch& arch() const { return arch_; }
    ParameterSet& params() { return params_; }
    const ParameterSet& params() const { return params_; }

   private:
    struct Block {
        std::vector<std::string> convs;
        std::string time_proj;
    };
    Block make_block(const std::string& name, std::size_t cin, std::size_t cout, Rng& rng);
    Var run_block(const Block& block, Var h, const Var* temb) const;
    Var conv(const std::string& name, const Var& x) const;
    Var time_embedding(std::span<const std::size_t> timesteps) const;

    UNetArch arch_;
    ParameterSet params_;
    std::vector<Block> down_;
    Block mid_;
    std::vector<Block> up_;
    std::size_t temb_dim_ = 0;
};

/// Sinusoidal features of integer timesteps: (B, dim) with sin in the first
/// half and cos in the second.
Grid sinusoidal_embedding(std::span<const std::size_t> timesteps, std::size_t dim);

/// eps_theta(x_t, t | m): predicts the noise in x_t given the mask.
class Denoiser {
   public:
    Denoiser(std::size_t num_classes, UNetArch arch, Rng& init_rng);

    /// xt: (B,1,H,W); one mask and one timestep per batch entry.
    Var forward(const Grid& xt, std::span<const std::size_t> timesteps, std::span<const ClassMask> masks) const;

    std::size_t num_classes() const { return num_classes_; }
    const UNetArch& arch() const { return unet_.arch(); }
    ParameterSet& params() { return unet_.params(); }
    const ParameterSet& params() const { return unet_.params(); }

    static UNetArch default_arch(std::size_t num_classes);

   private:
    std::size_t num_classes_;
    UNet unet_;
};

/// Per-pixel class scores for a normalized single-channel image.
class SegNet {
   public:
    SegNet(std::size_t num_classes, UNetArch arch, Rng& init_rng);

    /// image: (B,1,H,W) → (B,C,H,W) scores.
    Var forward(const Grid& image) const;
    std::vector<ClassMask> predict(const Grid& image) const;

    std::size_t num_classes() const { return num_classes_; }
    const UNetArch& arch() const { return unet_.arch(); }
    ParameterSet& params() { return unet_.params(); }
    const ParameterSet& params() const { return unet_.params(); }

    static UNetArch default_arch(std::size_t num_classes);

   private:
    std::size_t num_classes_;
    UNet unet_;
};

/// Weighted cross-entropy plus soft Dice over softmax(scores).
Var seg_loss(const Var& scores, std::span<const ClassMask> target, std::span<const double> class_weights, double dice_weight = 1.0);

}  // namespace difforge
