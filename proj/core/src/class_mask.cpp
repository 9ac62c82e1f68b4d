#include "difforge/class_mask.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace difforge {

std::size_t ClassMask::count(std::uint8_t label) const { return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), label)); }

std::uint8_t ClassMask::max_label() const { return labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()); }

std::vector<std::size_t> class_histogram(std::span<const ClassMask> masks, std::size_t num_classes) {
    std::vector<std::size_t> hist(num_classes, 0);
    for (const auto& m : masks)
        for (auto l : m.labels) {
            if (l >= num_classes) throw std::out_of_range("label " + std::to_string(l) + " >= class count " + std::to_string(num_classes));
            ++hist[l];
        }
    return hist;
}

std::vector<std::uint8_t> flatten_labels(std::span<const ClassMask> masks) {
    std::vector<std::uint8_t> out;
    for (const auto& m : masks) out.insert(out.end(), m.labels.begin(), m.labels.end());
    return out;
}

}  // namespace difforge
