#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"
#include "touchformer/dataio.hpp"
#include "touchformer/harness.hpp"
#include "touchformer/model.hpp"

namespace touchformer {

// Everything a CLI run reads from its JSON config. Sections: "train",
// "model", "corruption", "synthetic". Missing keys keep their defaults;
// unknown keys are rejected.
struct ExperimentConfig {
    TrainConfig train;
    TouchFormerConfig model;
    CorruptionSpec corruption;
    SyntheticSpec synthetic;
};

nlohmann::json to_json(const TouchFormerConfig& cfg);
nlohmann::json to_json(const TrainConfig& cfg);
nlohmann::json to_json(const CorruptionSpec& spec);
nlohmann::json to_json(const SyntheticSpec& spec);
nlohmann::json to_json(const ExperimentConfig& cfg);

TouchFormerConfig model_config_from_json(const nlohmann::json& j);
ExperimentConfig experiment_from_json(const nlohmann::json& j);

// Parses a JSON file; syntax errors become FormatError naming the file.
nlohmann::json read_json_file(const std::filesystem::path& path);

// Sets "section.key" to `value`, parsed as JSON when possible and kept as a
// string otherwise ("0.5" -> number, "ssmc" -> string, "[\"S\"]" -> array).
void set_config_value(nlohmann::json& j, const std::string& dotted_key, const std::string& value);

}  // namespace touchformer
