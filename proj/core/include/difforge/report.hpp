#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "difforge/class_mask.hpp"

namespace difforge::report {

/// Column order of per-class Dice tables: display name and tissue label.
struct DiceColumn {
    std::string name;
    std::uint8_t class_id;
};
std::vector<DiceColumn> dice_columns();

/// Per-class Dice deltas (augmented minus baseline) between two evaluation
/// results produced by evaluate_segmentation. Throws std::invalid_argument
/// when the two were computed on different test sets.
nlohmann::json compare_runs(const nlohmann::json& baseline, const nlohmann::json& augmented, std::uint8_t rare_class = tissue::kEmphysema);

/// JSON Schema (draft 2020-12) of the compare_runs output.
const nlohmann::json& delta_report_schema();

/// Structural check against delta_report_schema(). Returns the list of
/// problems; empty means valid.
std::vector<std::string> validate_delta_report(const nlohmann::json& report);

/// CSV with a header row and one row per named evaluation result.
std::string dice_table_csv(const std::vector<std::pair<std::string, nlohmann::json>>& rows);

}  // namespace difforge::report
