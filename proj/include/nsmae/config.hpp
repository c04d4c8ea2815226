#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "nsmae/synth.hpp"
#include "nsmae/trainer.hpp"

namespace nsmae::config {

// Full run configuration assembled from defaults + optional JSON file +
// dotted-key flag overrides.
struct AppConfig {
  train::TrainConfig train;
  synth::SynthDatasetParams synth;
  std::uint64_t hash = 0;  // FNV-1a 64 of the canonical JSON
};

// Every key with its default; the schema is exactly this tree.
nlohmann::json default_config_json();

// Strict merge: unknown keys or type mismatches are errors naming the
// offending dotted path.
nlohmann::json merge_config(nlohmann::json base, const nlohmann::json& overlay);

// Apply "dotted.path=value" overrides; the path must exist in the schema.
// Values parse as JSON literals, falling back to plain strings.
nlohmann::json apply_override(nlohmann::json base, const std::string& assignment);

std::uint64_t fnv1a_hash(const std::string& bytes);

AppConfig make_app_config(const nlohmann::json& full);

// defaults -> optional file -> overrides, validated at each step.
AppConfig load_config(const std::string& config_path, const std::vector<std::string>& overrides);

}  // namespace nsmae::config
