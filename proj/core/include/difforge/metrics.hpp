#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "difforge/class_mask.hpp"
#include "difforge/grid.hpp"

namespace difforge::metrics {

inline constexpr double kIdenticalPsnr = std::numeric_limits<double>::infinity();

/// 10 log10(range^2 / MSE). Identical inputs give +inf.
double psnr(const Grid& reference, const Grid& test, double data_range);

struct SsimOptions {
    std::size_t window = 7;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
};

/// Mean SSIM over all fully contained Gaussian-weighted windows. Works on
/// the trailing two axes; leading axes are treated as independent planes
/// and averaged.
double ssim(const Grid& reference, const Grid& test, double data_range, const SsimOptions& options = {});

/// 2|A∩B| / (|A|+|B|) for one class; nullopt when the class is absent from
/// both masks.
std::optional<double> dice(const ClassMask& prediction, const ClassMask& target, std::uint8_t class_id);

/// Dice pooled over a collection of mask pairs (counts summed before the
/// ratio).
std::optional<double> dice(std::span<const ClassMask> predictions, std::span<const ClassMask> targets, std::uint8_t class_id);

struct MetricReport {
    std::optional<double> psnr_db;
    std::optional<double> ssim;
    std::vector<std::optional<double>> dice_per_class;
};

/// Mean of the defined entries; undefined classes are skipped.
std::optional<double> mean_defined(std::span<const std::optional<double>> values);

}  // namespace difforge::metrics
