#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "difforge/class_mask.hpp"
#include "difforge/grid.hpp"
#include "difforge/rng.hpp"

namespace difforge::corpus {

inline constexpr double kMinHu = -1000.0;
inline constexpr double kMaxHu = 1000.0;

/// Texture of one tissue class: a smoothed Gaussian random field with the
/// given mean and standard deviation (HU) and blur radius (pixels).
struct TexturePalette {
    double mean_hu = 0.0;
    double spread_hu = 0.0;
    double correlation_length = 1.0;
};

struct CorpusSpec {
    std::size_t n_samples = 500;
    std::size_t size = 32;
    std::size_t slices_per_patient = 10;
    std::array<TexturePalette, tissue::kNumClasses> palette{{
        {-1000.0, 0.0, 1.0},  // background (air)
        {40.0, 80.0, 2.0},    // surrounding tissue
        {-800.0, 40.0, 1.5},  // normal lung
        {-950.0, 25.0, 1.0},  // emphysema
        {-300.0, 120.0, 1.5}, // ILD
    }};
    /// Pixel shares per class. Background and surrounding tissue together
    /// form the non-lung share.
    std::array<double, tissue::kNumClasses> target_frequencies{0.400, 0.436, 0.123, 0.003, 0.038};
    /// Fraction of slices that carry each disease; blob sizes are scaled so
    /// the expected share still matches the target.
    double emphysema_slice_rate = 0.25;
    double ild_slice_rate = 0.6;
    std::uint64_t seed = 1;

    /// Throws std::invalid_argument on inconsistent settings.
    void validate() const;
};

struct SliceRecord {
    Grid hu;  // (H,W), integer HU values
    ClassMask mask;
    std::string patient_id;
};

std::vector<SliceRecord> generate_corpus(const CorpusSpec& spec);

/// Clip to [-1000, 1000] and set every pixel outside the body (background
/// label) to -1000. Idempotent.
Grid clip_and_mask(const Grid& hu, const ClassMask& mask);
/// clip_and_mask followed by the affine map [-1000, 1000] -> [-1, 1].
Grid preprocess(const Grid& hu, const ClassMask& mask);

inline double normalize_hu(double hu) { return hu / kMaxHu; }
inline double denormalize_hu(double v) { return v * kMaxHu; }
/// Maps a normalized grid back to HU (no rounding).
Grid to_hu(const Grid& normalized);

/// Preprocessed images stacked into (B,1,H,W).
Grid stack_images(std::span<const SliceRecord> records);
std::vector<ClassMask> masks_of(std::span<const SliceRecord> records);

/// Splits whole patients between train and test.
std::pair<std::vector<SliceRecord>, std::vector<SliceRecord>> split_by_patient(std::span<const SliceRecord> records, double train_fraction, Rng& rng);

std::vector<std::string> patient_ids(std::span<const SliceRecord> records);

/// images/NNNNN.pgm (16-bit HU+1000), masks/NNNNN.pgm and corpus.json.
/// `extra` is merged into the JSON manifest (seed, palette, ...).
void save_corpus(const std::filesystem::path& dir, std::span<const SliceRecord> records, const std::string& extra_json = "{}");
std::vector<SliceRecord> load_corpus(const std::filesystem::path& dir);

/// Order-sensitive FNV-1a hash of all images, masks and patient ids.
std::uint64_t corpus_hash(std::span<const SliceRecord> records);

}  // namespace difforge::corpus
