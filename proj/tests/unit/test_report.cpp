#include <gtest/gtest.h>

#include "difforge/report.hpp"

using namespace difforge;
using nlohmann::json;

namespace {
json eval(double healthy, double emph, json ild, const std::string& hash = "00ff") {
    return {{"dice", {{"background", 0.99}, {"surrounding_tissue", 0.9}, {"normal_lung", healthy}, {"emphysema", emph}, {"ild", ild}}},
            {"n_slices", 10},
            {"test_hash", hash}};
}
}  // namespace

TEST(Report, IdenticalRunsGiveZeroDeltas) {
    const json a = eval(0.9, 0.4, 0.6);
    const json d = report::compare_runs(a, a);
    for (const auto& c : d.at("classes")) {
        EXPECT_EQ(c.at("delta").get<double>(), 0.0);
        EXPECT_EQ(c.at("direction"), "none");
    }
    EXPECT_FALSE(d.at("rare_improved").get<bool>());
    EXPECT_TRUE(report::validate_delta_report(d).empty());
}

TEST(Report, SignedDeltasAndRareFlag) {
    const json d = report::compare_runs(eval(0.9, 0.4, nullptr), eval(0.89, 0.5, 0.3));
    EXPECT_EQ(d.at("rare_class"), "emphysema");
    EXPECT_NEAR(d.at("rare_delta").get<double>(), 0.1, 1e-12);
    EXPECT_TRUE(d.at("rare_improved").get<bool>());
    const auto& cls = d.at("classes");
    EXPECT_EQ(cls[tissue::kNormalLung].at("direction"), "down");
    EXPECT_EQ(cls[tissue::kIld].at("direction"), "undefined");
    EXPECT_TRUE(cls[tissue::kIld].at("delta").is_null());
    EXPECT_TRUE(report::validate_delta_report(d).empty());
}

TEST(Report, MismatchedTestSetsRejected) {
    EXPECT_THROW(report::compare_runs(eval(0.9, 0.4, 0.6, "aa"), eval(0.9, 0.4, 0.6, "bb")), std::invalid_argument);
}

TEST(Report, SchemaCheckCatchesBrokenReports) {
    json d = report::compare_runs(eval(0.9, 0.4, 0.6), eval(0.9, 0.4, 0.6));
    EXPECT_EQ(report::delta_report_schema().at("required").size(), 6u);
    json bad = d;
    bad.erase("rare_delta");
    EXPECT_FALSE(report::validate_delta_report(bad).empty());
    bad = d;
    bad["classes"][0]["baseline"] = 1.5;
    EXPECT_FALSE(report::validate_delta_report(bad).empty());
    bad = d;
    bad["classes"][1]["direction"] = "sideways";
    EXPECT_FALSE(report::validate_delta_report(bad).empty());
    EXPECT_FALSE(report::validate_delta_report(json::array()).empty());
}

TEST(Report, DiceTableLayout) {
    const std::string csv = report::dice_table_csv({{"baseline", eval(0.9, 0.4, nullptr)}, {"augmented", eval(0.91, 0.5, 0.7)}});
    EXPECT_EQ(csv, "run,healthy,emphysema,fibrosis\nbaseline,0.9000,0.4000,\naugmented,0.9100,0.5000,0.7000\n");
}
