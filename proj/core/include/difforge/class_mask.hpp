#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace difforge {

/// Project-wide label assignment.
namespace tissue {
inline constexpr std::uint8_t kBackground = 0;
inline constexpr std::uint8_t kSurrounding = 1;
inline constexpr std::uint8_t kNormalLung = 2;
inline constexpr std::uint8_t kEmphysema = 3;
inline constexpr std::uint8_t kIld = 4;
inline constexpr std::size_t kNumClasses = 5;

inline bool is_lung(std::uint8_t label) { return label >= kNormalLung && label <= kIld; }
inline bool is_disease(std::uint8_t label) { return label == kEmphysema || label == kIld; }

inline const char* name(std::size_t label) {
    static constexpr const char* kNames[kNumClasses] = {"background", "surrounding_tissue", "normal_lung", "emphysema", "ild"};
    return label < kNumClasses ? kNames[label] : "unknown";
}
}  // namespace tissue

/// Per-pixel integer class labels, row-major.
struct ClassMask {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> labels;

    ClassMask() = default;
    ClassMask(std::size_t h, std::size_t w, std::uint8_t fill = 0) : height(h), width(w), labels(h * w, fill) {}

    std::size_t size() const { return labels.size(); }
    std::uint8_t& at(std::size_t r, std::size_t c) { return labels[r * width + c]; }
    std::uint8_t at(std::size_t r, std::size_t c) const { return labels[r * width + c]; }
    bool contains(long r, long c) const { return r >= 0 && c >= 0 && r < static_cast<long>(height) && c < static_cast<long>(width); }

    std::size_t count(std::uint8_t label) const;
    std::uint8_t max_label() const;

    bool operator==(const ClassMask&) const = default;
};

/// Per-class pixel histogram of length num_classes. Labels must be < num_classes.
std::vector<std::size_t> class_histogram(std::span<const ClassMask> masks, std::size_t num_classes);

/// Concatenation of all labels, in order, for batched losses.
std::vector<std::uint8_t> flatten_labels(std::span<const ClassMask> masks);

}  // namespace difforge
