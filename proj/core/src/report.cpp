#include "difforge/report.hpp"

#include <sstream>
#include <stdexcept>

namespace difforge::report {

using nlohmann::json;

std::vector<DiceColumn> dice_columns() {
    return {{"healthy", tissue::kNormalLung}, {"emphysema", tissue::kEmphysema}, {"fibrosis", tissue::kIld}};
}

namespace {
json dice_of(const json& eval, std::uint8_t class_id) {
    const auto& d = eval.at("dice");
    const std::string key = tissue::name(class_id);
    return d.contains(key) ? d.at(key) : json(nullptr);
}

std::string fmt(const json& v) {
    if (v.is_null()) return "";
    std::ostringstream os;
    os.precision(4);
    os << std::fixed << v.get<double>();
    return os.str();
}
}  // namespace

json compare_runs(const json& baseline, const json& augmented, std::uint8_t rare_class) {
    if (baseline.value("test_hash", "") != augmented.value("test_hash", ""))
        throw std::invalid_argument("compare_runs: runs were evaluated on different test sets");
    json classes = json::array();
    json rare_delta = nullptr;
    for (std::uint8_t c = 0; c < tissue::kNumClasses; ++c) {
        const json b = dice_of(baseline, c), a = dice_of(augmented, c);
        json delta = nullptr;
        std::string direction = "undefined";
        if (!a.is_null() && !b.is_null()) {
            const double d = a.get<double>() - b.get<double>();
            delta = d;
            direction = d > 0 ? "up" : d < 0 ? "down" : "none";
        }
        classes.push_back({{"class", tissue::name(c)}, {"class_id", c}, {"baseline", b}, {"augmented", a}, {"delta", delta}, {"direction", direction}});
        if (c == rare_class) rare_delta = delta;
    }
    return {{"schema", "difforge.delta_report/1"},
            {"test_hash", baseline.value("test_hash", "")},
            {"classes", classes},
            {"rare_class", tissue::name(rare_class)},
            {"rare_delta", rare_delta},
            {"rare_improved", !rare_delta.is_null() && rare_delta.get<double>() > 0}};
}

const json& delta_report_schema() {
    static const json schema = json::parse(R"({
  "$schema": "https://json-schema.org/draft/2020-12/schema",
  "title": "difforge delta report",
  "type": "object",
  "required": ["schema", "test_hash", "classes", "rare_class", "rare_delta", "rare_improved"],
  "properties": {
    "schema": {"const": "difforge.delta_report/1"},
    "test_hash": {"type": "string"},
    "classes": {
      "type": "array",
      "items": {
        "type": "object",
        "required": ["class", "class_id", "baseline", "augmented", "delta", "direction"],
        "properties": {
          "class": {"type": "string"},
          "class_id": {"type": "integer", "minimum": 0},
          "baseline": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
          "augmented": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
          "delta": {"type": ["number", "null"], "minimum": -1, "maximum": 1},
          "direction": {"enum": ["up", "down", "none", "undefined"]}
        }
      }
    },
    "rare_class": {"type": "string"},
    "rare_delta": {"type": ["number", "null"]},
    "rare_improved": {"type": "boolean"}
  }
})");
    return schema;
}

std::vector<std::string> validate_delta_report(const json& r) {
    std::vector<std::string> errs;
    auto need = [&](const json& obj, const char* key, bool (json::*is)() const, const std::string& where) {
        if (!obj.contains(key))
            errs.push_back(where + key + ": missing");
        else if (!(obj.at(key).*is)())
            errs.push_back(where + key + ": wrong type");
    };
    if (!r.is_object()) return {"report: not an object"};
    need(r, "schema", &json::is_string, "");
    need(r, "test_hash", &json::is_string, "");
    need(r, "rare_class", &json::is_string, "");
    need(r, "rare_improved", &json::is_boolean, "");
    if (!r.contains("rare_delta") || !(r.at("rare_delta").is_number() || r.at("rare_delta").is_null())) errs.push_back("rare_delta: wrong type");
    if (r.value("schema", "") != "difforge.delta_report/1") errs.push_back("schema: unexpected value");
    if (!r.contains("classes") || !r.at("classes").is_array()) {
        errs.push_back("classes: missing or not an array");
        return errs;
    }
    for (std::size_t i = 0; i < r.at("classes").size(); ++i) {
        const json& c = r.at("classes")[i];
        const std::string where = "classes[" + std::to_string(i) + "].";
        if (!c.is_object()) {
            errs.push_back(where + ": not an object");
            continue;
        }
        need(c, "class", &json::is_string, where);
        need(c, "class_id", &json::is_number_unsigned, where);
        for (const char* k : {"baseline", "augmented", "delta"}) {
            if (!c.contains(k)) {
                errs.push_back(where + k + ": missing");
                continue;
            }
            const json& v = c.at(k);
            const double lo = std::string(k) == "delta" ? -1.0 : 0.0;
            if (!(v.is_null() || (v.is_number() && v.get<double>() >= lo && v.get<double>() <= 1.0))) errs.push_back(where + k + ": out of range");
        }
        const std::string dir = c.value("direction", "");
        if (dir != "up" && dir != "down" && dir != "none" && dir != "undefined") errs.push_back(where + "direction: unexpected value");
    }
    return errs;
}

std::string dice_table_csv(const std::vector<std::pair<std::string, json>>& rows) {
    std::ostringstream os;
    os << "run";
    for (const auto& col : dice_columns()) os << ',' << col.name;
    os << '\n';
    for (const auto& [name, eval] : rows) {
        os << name;
        for (const auto& col : dice_columns()) os << ',' << fmt(dice_of(eval, col.class_id));
        os << '\n';
    }
    return os.str();
}

}  // namespace difforge::report
