#include "difforge/cbmat.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace difforge::cbmat {

ClassFrequencies compute_frequencies(std::span<const ClassMask> masks, std::size_t num_classes) {
    if (masks.empty()) throw std::invalid_argument("compute_frequencies: empty mask collection");
    const auto hist = class_histogram(masks, num_classes);
    std::size_t total = 0;
    for (auto n : hist) total += n;
    if (total == 0) throw std::invalid_argument("compute_frequencies: masks contain no pixels");
    ClassFrequencies freq;
    freq.f.resize(num_classes);
    for (std::size_t c = 0; c < num_classes; ++c) freq.f[c] = static_cast<double>(hist[c]) / static_cast<double>(total);
    return freq;
}

AblationLaw parse_ablation_law(const std::string& s) {
    if (s == "inverse") return AblationLaw::inverse;
    if (s == "proportional") return AblationLaw::proportional;
    throw std::invalid_argument("unknown ablation law '" + s + "' (expected inverse|proportional)");
}

AnnealingMode parse_annealing_mode(const std::string& s) {
    if (s == "closed_form") return AnnealingMode::closed_form;
    if (s == "compounded") return AnnealingMode::compounded;
    throw std::invalid_argument("unknown annealing mode '" + s + "' (expected closed_form|compounded)");
}

std::string to_string(AblationLaw law) { return law == AblationLaw::inverse ? "inverse" : "proportional"; }
std::string to_string(AnnealingMode mode) { return mode == AnnealingMode::closed_form ? "closed_form" : "compounded"; }

std::set<std::size_t> default_protected() { return {tissue::kBackground, tissue::kSurrounding}; }

AblationPolicy init_policy(const ClassFrequencies& freq, double delta0, std::set<std::size_t> protected_classes, std::size_t max_epoch,
                           AblationLaw law, AnnealingMode annealing) {
    if (!(delta0 >= 0.0 && delta0 <= 1.0)) throw std::invalid_argument("delta0 must lie in [0, 1]");
    if (max_epoch == 0) throw std::invalid_argument("max_epoch must be at least 1");
    AblationPolicy policy;
    policy.delta0 = delta0;
    policy.protected_classes = std::move(protected_classes);
    policy.protected_classes.insert(tissue::kBackground);
    policy.max_epoch = max_epoch;
    policy.annealing = annealing;
    policy.delta.resize(freq.f.size());
    for (std::size_t c = 0; c < freq.f.size(); ++c) {
        if (policy.protected_classes.count(c)) continue;
        const double share = law == AblationLaw::inverse ? 1.0 - freq.f[c] : freq.f[c];
        policy.delta[c] = std::clamp(delta0 * share, 0.0, 1.0);
    }
    return policy;
}

namespace {
double cosine_factor(std::size_t epoch, std::size_t max_epoch) {
    if (epoch == max_epoch) return 0.0;  // cos(pi) rounds to -1 + 1e-16 otherwise
    return 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(epoch) / static_cast<double>(max_epoch)));
}
}  // namespace

double annealed_probability(const AblationPolicy& policy, std::size_t c, std::size_t epoch) {
    if (epoch > policy.max_epoch) throw std::out_of_range("epoch beyond max_epoch");
    if (c >= policy.delta.size()) throw std::out_of_range("class index outside policy");
    const double base = policy.delta[c];
    if (policy.annealing == AnnealingMode::closed_form) return base * cosine_factor(epoch, policy.max_epoch);
    double p = base;
    for (std::size_t j = 1; j <= epoch; ++j) p *= cosine_factor(j, policy.max_epoch);
    return p;
}

ClassMask ablate(const ClassMask& mask, const AblationPolicy& policy, std::size_t epoch, Rng& rng) {
    std::vector<bool> present(policy.delta.size(), false);
    for (auto l : mask.labels) {
        if (l >= present.size()) throw std::out_of_range("mask label outside policy class range");
        present[l] = true;
    }
    std::vector<bool> drop(present.size(), false);
    bool any = false;
    for (std::size_t c = 0; c < present.size(); ++c) {
        if (!present[c] || policy.protected_classes.count(c)) continue;
        if (rng.uniform() < annealed_probability(policy, c, epoch)) {
            drop[c] = true;
            any = true;
        }
    }
    ClassMask out = mask;
    if (any)
        for (auto& l : out.labels)
            if (drop[l]) l = tissue::kBackground;
    return out;
}

}  // namespace difforge::cbmat
