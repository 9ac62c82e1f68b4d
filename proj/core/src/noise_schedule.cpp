#include "difforge/noise_schedule.hpp"

#include <stdexcept>
#include <string>

namespace difforge {

NoiseSchedule NoiseSchedule::linear(std::size_t steps, double beta_start, double beta_end) {
    if (steps == 0) throw std::invalid_argument("noise schedule needs at least one step");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
        throw std::invalid_argument("noise schedule requires 0 < beta_start <= beta_end < 1");
    std::vector<double> betas(steps);
    if (steps == 1) {
        betas[0] = beta_start;
    } else {
        for (std::size_t i = 0; i < steps; ++i)
            betas[i] = beta_start + (beta_end - beta_start) * static_cast<double>(i) / static_cast<double>(steps - 1);
    }
    return NoiseSchedule(std::move(betas));
}

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> betas) {
    if (betas.empty()) throw std::invalid_argument("noise schedule needs at least one step");
    for (double b : betas)
        if (!(b > 0.0 && b < 1.0)) throw std::invalid_argument("every beta must lie in (0, 1)");
    return NoiseSchedule(std::move(betas));
}

NoiseSchedule::NoiseSchedule(std::vector<double> betas) : beta_(std::move(betas)), alpha_bar_(beta_.size()) {
    double prod = 1.0;
    for (std::size_t i = 0; i < beta_.size(); ++i) {
        prod *= 1.0 - beta_[i];
        alpha_bar_[i] = prod;
    }
}

void NoiseSchedule::check(std::size_t t) const {
    if (t < 1 || t > beta_.size())
        throw std::out_of_range("timestep " + std::to_string(t) + " outside [1, " + std::to_string(beta_.size()) + "]");
}

double NoiseSchedule::beta(std::size_t t) const {
    check(t);
    return beta_[t - 1];
}

double NoiseSchedule::alpha_bar(std::size_t t) const {
    check(t);
    return alpha_bar_[t - 1];
}

double NoiseSchedule::posterior_sigma2(std::size_t t) const { return beta(t); }

}  // namespace difforge
