#pragma once

#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "difforge/corpus.hpp"
#include "difforge/mask_forge.hpp"
#include "difforge/nets.hpp"
#include "difforge/optim.hpp"
#include "difforge/trainer.hpp"

// JSON mappings for every configuration type. Missing keys keep their
// defaults; unknown keys and wrong types raise ConfigError.

namespace difforge {

class ConfigError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

void to_json(nlohmann::json& j, const UNetArch& a);
void from_json(const nlohmann::json& j, UNetArch& a);

/// Converts `j` to T, rethrowing any parse problem as ConfigError.
template <typename T>
T config_from_json(const nlohmann::json& j, const std::string& what) {
    try {
        return j.get<T>();
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(what + ": " + e.what());
    }
}

}  // namespace difforge

namespace difforge::optim {
void to_json(nlohmann::json& j, const CyclicLr& c);
void from_json(const nlohmann::json& j, CyclicLr& c);
void to_json(nlohmann::json& j, const OptimizerConfig& c);
void from_json(const nlohmann::json& j, OptimizerConfig& c);
}  // namespace difforge::optim

namespace difforge::cbmat {
void to_json(nlohmann::json& j, const AblationLaw& v);
void from_json(const nlohmann::json& j, AblationLaw& v);
void to_json(nlohmann::json& j, const AnnealingMode& v);
void from_json(const nlohmann::json& j, AnnealingMode& v);
}  // namespace difforge::cbmat

namespace difforge::corpus {
void to_json(nlohmann::json& j, const TexturePalette& p);
void from_json(const nlohmann::json& j, TexturePalette& p);
void to_json(nlohmann::json& j, const CorpusSpec& s);
void from_json(const nlohmann::json& j, CorpusSpec& s);
}  // namespace difforge::corpus

namespace difforge::forge {
void to_json(nlohmann::json& j, const BalanceConfig& c);
void from_json(const nlohmann::json& j, BalanceConfig& c);
void to_json(nlohmann::json& j, const BalanceReport& r);
}  // namespace difforge::forge

namespace difforge::train {
void to_json(nlohmann::json& j, const ScheduleConfig& c);
void from_json(const nlohmann::json& j, ScheduleConfig& c);
void to_json(nlohmann::json& j, const CbmatConfig& c);
void from_json(const nlohmann::json& j, CbmatConfig& c);
void to_json(nlohmann::json& j, const EarlyStop& c);
void from_json(const nlohmann::json& j, EarlyStop& c);
void to_json(nlohmann::json& j, const DiffusionConfig& c);
void from_json(const nlohmann::json& j, DiffusionConfig& c);
void to_json(nlohmann::json& j, const SegConfig& c);
void from_json(const nlohmann::json& j, SegConfig& c);
void to_json(nlohmann::json& j, const AugmentOptions& c);
void from_json(const nlohmann::json& j, AugmentOptions& c);
}  // namespace difforge::train
