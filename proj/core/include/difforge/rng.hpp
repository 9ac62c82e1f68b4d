#pragma once

#include <array>
#include <cstdint>

#include "difforge/grid.hpp"

namespace difforge {

/// xoshiro256** seeded through splitmix64. The stream depends only on the
/// seed, so results are portable across platforms and standard libraries
/// (std::normal_distribution is not).
class Rng {
   public:
    using State = std::array<std::uint64_t, 4>;

    explicit Rng(std::uint64_t seed = 0);

    std::uint64_t next_u64();
    /// Uniform in [0, 1) with 53 random bits.
    double uniform();
    /// Uniform integer in [lo, hi], inclusive.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
    /// Standard normal via Box-Muller; the second variate is cached.
    double normal();

    /// Independent generator for a sub-task, derived from this one's seed.
    Rng fork(std::uint64_t stream) const;

    std::uint64_t seed() const { return seed_; }
    State state() const { return s_; }
    /// Restores a generator captured with seed(), state(), has_spare(), spare().
    void set_state(std::uint64_t seed, const State& s, bool has_spare, double spare);
    bool has_spare() const { return has_spare_; }
    double spare() const { return spare_; }

   private:
    State s_{};
    std::uint64_t seed_ = 0;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// I.i.d. standard normal samples.
Grid randn(Shape shape, Rng& rng);

}  // namespace difforge
