#pragma once

#include <functional>
#include <span>
#include <vector>

#include "difforge/autograd.hpp"
#include "difforge/class_mask.hpp"
#include "difforge/noise_schedule.hpp"
#include "difforge/rng.hpp"

namespace difforge {

class Denoiser;

/// eps_theta(x_t, t | m) as a callable. The result must have the shape of xt.
using NoiseModel = std::function<Var(const Grid& xt, std::span<const std::size_t> timesteps, std::span<const ClassMask> masks)>;

NoiseModel as_noise_model(const Denoiser& net);

/// sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps.
Grid forward_sample(const Grid& x0, std::size_t t, const Grid& eps, const NoiseSchedule& schedule);
/// Per-sample timesteps for a (B,...) batch.
Grid forward_sample(const Grid& x0, std::span<const std::size_t> timesteps, const Grid& eps, const NoiseSchedule& schedule);

/// Applies the one-step transition x_s = sqrt(1 - beta_s) x_{s-1} + sqrt(beta_s) z
/// for s = 1..t. `draw_noise` supplies each z.
Grid iterated_forward(const Grid& x0, std::size_t t, const NoiseSchedule& schedule, const std::function<Grid(const Shape&)>& draw_noise);
Grid iterated_forward(const Grid& x0, std::size_t t, const NoiseSchedule& schedule, Rng& rng);

/// Mean of the learned reverse step:
/// (xt - beta_t / sqrt(1 - abar_t) * eps_hat) / sqrt(1 - beta_t).
Grid posterior_mean(const Grid& xt, const Grid& eps_hat, std::size_t t, const NoiseSchedule& schedule);

/// (xt - sqrt(1 - abar_t) * eps_hat) / sqrt(abar_t).
Grid predict_x0(const Grid& xt, const Grid& eps_hat, std::size_t t, const NoiseSchedule& schedule);

/// One training draw: images, conditioning masks, timesteps, noise and the
/// noised images built from them.
struct DiffusionBatch {
    Grid x0;  // (B,1,H,W)
    std::vector<ClassMask> masks;
    std::vector<std::size_t> t;
    Grid eps;
    Grid xt;

    /// Samples t uniformly from {1..T} and eps ~ N(0, I), then forms xt.
    static DiffusionBatch draw(Grid x0, std::vector<ClassMask> masks, const NoiseSchedule& schedule, Rng& rng);
    /// Builds xt from caller-supplied timesteps and noise.
    static DiffusionBatch from_parts(Grid x0, std::vector<ClassMask> masks, std::vector<std::size_t> t, Grid eps, const NoiseSchedule& schedule);
};

/// Mean squared error between eps and the model's prediction, averaged over
/// all elements of the batch.
Var training_loss(const DiffusionBatch& batch, const NoiseModel& model);

struct SamplerOptions {
    /// Clamp the x0 estimate to the data range [-1, 1] before re-noising.
    bool clip_x0 = true;
};

/// Ancestral sampling from x_T ~ N(0, I) through every step, adding
/// sigma_t z except at t = 1. Returns (B,1,H,W) for B masks.
Grid ddpm_sample(const NoiseModel& model, std::span<const ClassMask> masks, const NoiseSchedule& schedule, Rng& rng);

/// Uniform timestep subsequence of length num_steps, descending, starting
/// at T and ending at 1.
std::vector<std::size_t> ddim_timesteps(std::size_t total_steps, std::size_t num_steps);

/// Deterministic (eta = 0) DDIM. Only the initial x_T draws from rng.
Grid ddim_sample(const NoiseModel& model, std::span<const ClassMask> masks, const NoiseSchedule& schedule, std::size_t num_steps, Rng& rng,
                 const SamplerOptions& options = {});

/// DDIM from a given x_T; exposed for trajectory tests.
Grid ddim_sample_from(const NoiseModel& model, std::span<const ClassMask> masks, const NoiseSchedule& schedule, std::size_t num_steps, Grid x_T,
                      const SamplerOptions& options = {});

}  // namespace difforge
