#pragma once

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "difforge/autograd.hpp"
#include "difforge/rng.hpp"

namespace difforge::testing {

struct GradCheckResult {
    double worst = 0.0;
    std::string where;
};

/// Compares reverse-mode gradients of `loss` against central differences at
/// `probes` random coordinates of each leaf.
inline GradCheckResult grad_check(std::vector<std::pair<std::string, Var>> leaves, const std::function<Var()>& loss, std::size_t probes, Rng& rng,
                                  double step = 1e-5) {
    for (auto& [_, v] : leaves) v.zero_grad();
    backward(loss());
    GradCheckResult res;
    for (auto& [name, v] : leaves) {
        const Grid analytic = v.grad();
        const std::size_t n = v.value().size();
        for (std::size_t p = 0; p < std::min(probes, n); ++p) {
            const std::size_t i = probes >= n ? p : static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n) - 1));
            Grid& val = v.mutable_value();
            const double orig = val[i];
            double fp, fm;
            {
                NoGradGuard g;
                val[i] = orig + step;
                fp = loss().value()[0];
                val[i] = orig - step;
                fm = loss().value()[0];
            }
            val[i] = orig;
            const double numeric = (fp - fm) / (2 * step);
            const double a = analytic.empty() ? 0.0 : analytic[i];
            const double scale = std::max({std::abs(a), std::abs(numeric), 1e-3});
            const double rel = std::abs(a - numeric) / scale;
            if (rel > res.worst) {
                res.worst = rel;
                res.where = name + "[" + std::to_string(i) + "] analytic " + std::to_string(a) + " numeric " + std::to_string(numeric);
            }
        }
    }
    return res;
}

}  // namespace difforge::testing
