#pragma once

#include <cstddef>
#include <vector>

namespace difforge {

/// Variance schedule beta_1..beta_T with its cumulative products. Step
/// indices are 1-based throughout, matching the usual diffusion notation.
class NoiseSchedule {
   public:
    /// Betas linearly interpolated from beta_start to beta_end inclusive.
    /// Requires 0 < beta_start <= beta_end < 1 and steps >= 1.
    static NoiseSchedule linear(std::size_t steps, double beta_start = 1e-4, double beta_end = 0.02);
    /// Arbitrary betas, each in (0, 1).
    static NoiseSchedule from_betas(std::vector<double> betas);

    std::size_t steps() const { return beta_.size(); }
    double beta(std::size_t t) const;
    double alpha_bar(std::size_t t) const;
    /// alpha_bar(0) == 1 by convention, for the final sampling step.
    double alpha_bar_or_one(std::size_t t) const { return t == 0 ? 1.0 : alpha_bar(t); }
    /// Reverse-process variance; fixed to beta_t.
    double posterior_sigma2(std::size_t t) const;

    const std::vector<double>& betas() const { return beta_; }
    const std::vector<double>& alpha_bars() const { return alpha_bar_; }

   private:
    explicit NoiseSchedule(std::vector<double> betas);
    void check(std::size_t t) const;

    std::vector<double> beta_;
    std::vector<double> alpha_bar_;
};

}  // namespace difforge
