#include "difforge/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "difforge/nets.hpp"
#include "difforge/ops.hpp"

namespace difforge {

NoiseModel as_noise_model(const Denoiser& net) {
    return [&net](const Grid& xt, std::span<const std::size_t> t, std::span<const ClassMask> masks) { return net.forward(xt, t, masks); };
}

Grid forward_sample(const Grid& x0, std::size_t t, const Grid& eps, const NoiseSchedule& schedule) {
    require_same_shape(x0.shape(), eps.shape(), "forward_sample");
    const double a = std::sqrt(schedule.alpha_bar(t));
    const double b = std::sqrt(1.0 - schedule.alpha_bar(t));
    Grid out(x0.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x0[i] + b * eps[i];
    return out;
}

Grid forward_sample(const Grid& x0, std::span<const std::size_t> timesteps, const Grid& eps, const NoiseSchedule& schedule) {
    require_same_shape(x0.shape(), eps.shape(), "forward_sample");
    const std::size_t B = x0.shape()[0];
    if (timesteps.size() != B) throw ShapeError("forward_sample: need one timestep per batch entry");
    const std::size_t per = x0.size() / B;
    Grid out(x0.shape());
    for (std::size_t b = 0; b < B; ++b) {
        const double a = std::sqrt(schedule.alpha_bar(timesteps[b]));
        const double s = std::sqrt(1.0 - schedule.alpha_bar(timesteps[b]));
        for (std::size_t i = b * per; i < (b + 1) * per; ++i) out[i] = a * x0[i] + s * eps[i];
    }
    return out;
}

Grid iterated_forward(const Grid& x0, std::size_t t, const NoiseSchedule& schedule, const std::function<Grid(const Shape&)>& draw_noise) {
    schedule.alpha_bar(t);  // range check
    Grid x = x0;
    for (std::size_t s = 1; s <= t; ++s) {
        const double keep = std::sqrt(1.0 - schedule.beta(s));
        const double sd = std::sqrt(schedule.beta(s));
        const Grid z = draw_noise(x.shape());
        require_same_shape(z.shape(), x.shape(), "iterated_forward noise");
        for (std::size_t i = 0; i < x.size(); ++i) x[i] = keep * x[i] + sd * z[i];
    }
    return x;
}

Grid iterated_forward(const Grid& x0, std::size_t t, const NoiseSchedule& schedule, Rng& rng) {
    return iterated_forward(x0, t, schedule, [&rng](const Shape& s) { return randn(s, rng); });
}

Grid posterior_mean(const Grid& xt, const Grid& eps_hat, std::size_t t, const NoiseSchedule& schedule) {
    require_same_shape(xt.shape(), eps_hat.shape(), "posterior_mean");
    const double beta = schedule.beta(t);
    const double k = beta / std::sqrt(1.0 - schedule.alpha_bar(t));
    const double inv = 1.0 / std::sqrt(1.0 - beta);
    Grid out(xt.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = inv * (xt[i] - k * eps_hat[i]);
    return out;
}

Grid predict_x0(const Grid& xt, const Grid& eps_hat, std::size_t t, const NoiseSchedule& schedule) {
    require_same_shape(xt.shape(), eps_hat.shape(), "predict_x0");
    const double ab = schedule.alpha_bar(t);
    const double s = std::sqrt(1.0 - ab);
    const double inv = 1.0 / std::sqrt(ab);
    Grid out(xt.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (xt[i] - s * eps_hat[i]) * inv;
    return out;
}

DiffusionBatch DiffusionBatch::draw(Grid x0, std::vector<ClassMask> masks, const NoiseSchedule& schedule, Rng& rng) {
    const std::size_t B = x0.shape()[0];
    std::vector<std::size_t> t(B);
    for (auto& v : t) v = static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(schedule.steps())));
    Grid eps = randn(x0.shape(), rng);
    return from_parts(std::move(x0), std::move(masks), std::move(t), std::move(eps), schedule);
}

DiffusionBatch DiffusionBatch::from_parts(Grid x0, std::vector<ClassMask> masks, std::vector<std::size_t> t, Grid eps, const NoiseSchedule& schedule) {
    if (x0.shape().rank() != 4 || x0.shape()[1] != 1) throw ShapeError("DiffusionBatch: x0 must be (B,1,H,W), got " + x0.shape().str());
    if (masks.size() != x0.shape()[0]) throw ShapeError("DiffusionBatch: one mask per image required");
    DiffusionBatch batch;
    batch.xt = forward_sample(x0, t, eps, schedule);
    batch.x0 = std::move(x0);
    batch.masks = std::move(masks);
    batch.t = std::move(t);
    batch.eps = std::move(eps);
    return batch;
}

Var training_loss(const DiffusionBatch& batch, const NoiseModel& model) {
    Var prediction = model(batch.xt, batch.t, batch.masks);
    return ops::mse(prediction, constant(batch.eps));
}

namespace {

Grid predict_noise(const NoiseModel& model, const Grid& x, std::size_t t, std::span<const ClassMask> masks) {
    NoGradGuard no_grad;
    const std::vector<std::size_t> ts(x.shape()[0], t);
    Grid eps = model(x, ts, masks).value();
    require_same_shape(eps.shape(), x.shape(), "noise model output");
    return eps;
}

Shape sample_shape(std::span<const ClassMask> masks) {
    if (masks.empty()) throw ShapeError("sampling needs at least one mask");
    return Shape{masks.size(), 1, masks[0].height, masks[0].width};
}

}  // namespace

Grid ddpm_sample(const NoiseModel& model, std::span<const ClassMask> masks, const NoiseSchedule& schedule, Rng& rng) {
    Grid x = randn(sample_shape(masks), rng);
    for (std::size_t t = schedule.steps(); t >= 1; --t) {
        const Grid eps = predict_noise(model, x, t, masks);
        Grid mean = posterior_mean(x, eps, t, schedule);
        if (t > 1) {
            const double sigma = std::sqrt(schedule.posterior_sigma2(t));
            for (double& v : mean.values()) v += sigma * rng.normal();
        }
        x = std::move(mean);
    }
    return x;
}

std::vector<std::size_t> ddim_timesteps(std::size_t total_steps, std::size_t num_steps) {
    if (num_steps < 1 || num_steps > total_steps)
        throw std::out_of_range("DDIM step count " + std::to_string(num_steps) + " outside [1, " + std::to_string(total_steps) + "]");
    std::vector<std::size_t> ts(num_steps);
    if (num_steps == 1) {
        ts[0] = total_steps;
        return ts;
    }
    for (std::size_t i = 0; i < num_steps; ++i) {
        const double pos = 1.0 + static_cast<double>(total_steps - 1) * static_cast<double>(i) / static_cast<double>(num_steps - 1);
        ts[num_steps - 1 - i] = static_cast<std::size_t>(std::llround(pos));
    }
    return ts;
}

Grid ddim_sample_from(const NoiseModel& model, std::span<const ClassMask> masks, const NoiseSchedule& schedule, std::size_t num_steps, Grid x,
                      const SamplerOptions& options) {
    require_same_shape(x.shape(), sample_shape(masks), "ddim_sample initial noise");
    const auto ts = ddim_timesteps(schedule.steps(), num_steps);
    for (std::size_t i = 0; i < ts.size(); ++i) {
        const std::size_t t = ts[i];
        const std::size_t prev = i + 1 < ts.size() ? ts[i + 1] : 0;
        const Grid eps = predict_noise(model, x, t, masks);
        Grid x0 = predict_x0(x, eps, t, schedule);
        if (options.clip_x0)
            for (double& v : x0.values()) v = std::clamp(v, -1.0, 1.0);
        if (prev == 0) return x0;
        // With a clipped x0 the noise direction is re-derived so the step
        // stays consistent with the clamped estimate.
        Grid eps_dir = eps;
        if (options.clip_x0) {
            const double a = std::sqrt(schedule.alpha_bar(t));
            const double s = std::sqrt(1.0 - schedule.alpha_bar(t));
            for (std::size_t k = 0; k < x.size(); ++k) eps_dir[k] = (x[k] - a * x0[k]) / s;
        }
        const double ap = schedule.alpha_bar(prev);
        const double a_prev = std::sqrt(ap);
        const double s_prev = std::sqrt(1.0 - ap);
        for (std::size_t k = 0; k < x.size(); ++k) x[k] = a_prev * x0[k] + s_prev * eps_dir[k];
    }
    return x;
}

Grid ddim_sample(const NoiseModel& model, std::span<const ClassMask> masks, const NoiseSchedule& schedule, std::size_t num_steps, Rng& rng,
                 const SamplerOptions& options) {
    Grid x_T = randn(sample_shape(masks), rng);
    return ddim_sample_from(model, masks, schedule, num_steps, std::move(x_T), options);
}

}  // namespace difforge
