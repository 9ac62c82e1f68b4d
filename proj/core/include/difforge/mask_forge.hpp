#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "difforge/class_mask.hpp"
#include "difforge/rng.hpp"

namespace difforge::forge {

struct Pixel {
    long row = 0;
    long col = 0;
    auto operator<=>(const Pixel&) const = default;
};

/// One 8-connected component of a class. Pixels are kept sorted and unique.
/// Coordinates may fall outside a mask after rotation; placement decides.
struct Region {
    std::uint8_t class_id = 0;
    std::vector<Pixel> pixels;

    bool empty() const { return pixels.empty(); }
    std::size_t size() const { return pixels.size(); }
};

/// Maximal 8-connected components of `class_id`, in raster order of their
/// first pixel.
std::vector<Region> connected_components(const ClassMask& mask, std::uint8_t class_id);

/// Rotation about the region centroid, rounding each mapped pixel to the
/// nearest grid point. Collisions merge, so the count can shrink slightly
/// for angles that are not multiples of 180 degrees.
Region rotate_region(const Region& region, double degrees);

struct Placement {
    ClassMask mask;
    Region placed;  // the region at its destination
};

/// Translates the region to an offset drawn uniformly from every offset at
/// which all destination pixels are in bounds and currently `host`.
/// nullopt when no such offset exists.
std::optional<Placement> paste_region(const ClassMask& mask, const Region& region, Rng& rng, std::uint8_t host = tissue::kNormalLung);

enum class StructuringElement { disc, square };

/// Grows the region by the structuring element; only `host` pixels change.
ClassMask dilate_region(const ClassMask& mask, const Region& region, std::size_t radius, StructuringElement element = StructuringElement::disc,
                        std::uint8_t host = tissue::kNormalLung);

struct BalanceConfig {
    /// Minimum share of lung pixels (normal + diseased) per balanced class.
    std::map<std::uint8_t, double> target_threshold{{tissue::kEmphysema, 0.06}, {tissue::kIld, 0.22}};
    double p_rotate = 0.5;
    double p_paste = 1.0;
    double p_dilate = 0.3;
    std::size_t max_iterations = 1000;
    std::size_t dilation_radius = 2;
    StructuringElement element = StructuringElement::disc;
    std::vector<double> rotation_angles{90.0, 180.0, 270.0};
    /// Donor regions pushed through the transform cascade per new sample.
    std::size_t regions_per_sample = 4;
};

struct ClassShare {
    double before = 0.0;
    double after = 0.0;
};

struct IterationRecord {
    std::size_t iteration = 0;
    std::uint8_t target = 0;
    std::size_t donor = 0;
    double share_before = 0.0;
    double share_after = 0.0;
};

struct BalanceReport {
    /// Shares of lung pixels, per class, for classes 2..C-1.
    std::map<std::uint8_t, ClassShare> lung_share;
    /// Shares of all pixels, per class.
    std::map<std::uint8_t, ClassShare> pixel_share;
    std::size_t iterations = 0;
    std::size_t added_samples = 0;
    bool reached_threshold = false;
    std::vector<std::uint8_t> unbalanceable;
    std::vector<IterationRecord> history;
    std::uint64_t seed = 0;
};

struct BalanceResult {
    /// The originals (unchanged copies) followed by the added samples.
    std::vector<ClassMask> masks;
    /// For each added sample, the index of the original it was edited from.
    std::vector<std::size_t> source;
    BalanceReport report;

    std::span<const ClassMask> added() const { return std::span<const ClassMask>(masks).subspan(masks.size() - source.size()); }
};

/// Iterative rebalancing: while some balanced class is below its threshold,
/// take the least represented one, edit a copy of a donor mask that has it
/// (rotate, paste, dilate in cascade) and append the copy. Only normal-lung
/// pixels ever change.
BalanceResult balance_dataset(std::span<const ClassMask> masks, const BalanceConfig& config, Rng& rng, std::uint64_t seed = 0);

/// Share of lung pixels carrying each class (index = class id).
std::vector<double> lung_shares(std::span<const ClassMask> masks, std::size_t num_classes = tissue::kNumClasses);

}  // namespace difforge::forge
