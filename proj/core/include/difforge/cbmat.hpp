#pragma once

#include <cstddef>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "difforge/class_mask.hpp"
#include "difforge/rng.hpp"

namespace difforge::cbmat {

/// Fraction of all pixels carrying each class; sums to 1.
struct ClassFrequencies {
    std::vector<double> f;
};

ClassFrequencies compute_frequencies(std::span<const ClassMask> masks, std::size_t num_classes);

/// How per-class base probabilities are derived from frequencies.
enum class AblationLaw {
    inverse,       // delta0 * (1 - f_c)
    proportional,  // delta0 * f_c
};

/// How the base probability decays over training.
enum class AnnealingMode {
    closed_form,  // delta_c(0) * (1 + cos(pi e / E)) / 2
    compounded,   // delta_c(0) * prod_{j=1..e} (1 + cos(pi j / E)) / 2
};

AblationLaw parse_ablation_law(const std::string& s);
AnnealingMode parse_annealing_mode(const std::string& s);
std::string to_string(AblationLaw law);
std::string to_string(AnnealingMode mode);

struct AblationPolicy {
    double delta0 = 1.0;
    /// Probability at epoch 0, one per class. Protected classes hold 0.
    std::vector<double> delta;
    std::set<std::size_t> protected_classes;
    std::size_t max_epoch = 1;
    AnnealingMode annealing = AnnealingMode::closed_form;
};

/// Background and surrounding tissue.
std::set<std::size_t> default_protected();

AblationPolicy init_policy(const ClassFrequencies& freq, double delta0, std::set<std::size_t> protected_classes, std::size_t max_epoch,
                           AblationLaw law = AblationLaw::inverse, AnnealingMode annealing = AnnealingMode::closed_form);

/// Ablation probability of class c at the given epoch (0 <= epoch <= max_epoch).
double annealed_probability(const AblationPolicy& policy, std::size_t c, std::size_t epoch);

/// Copy of `mask` where each non-protected class present is relabeled to 0
/// with its annealed probability. One uniform draw per present class, in
/// ascending class order.
ClassMask ablate(const ClassMask& mask, const AblationPolicy& policy, std::size_t epoch, Rng& rng);

}  // namespace difforge::cbmat
