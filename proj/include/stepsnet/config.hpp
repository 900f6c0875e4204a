#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "stepsnet/harness.hpp"

// Run configuration as files: a small nested key-value text format (JSON
// accepted as an alternative), dotted-path overrides, eager validation with
// unknown keys rejected, and a stable 64-bit content hash for manifests.

namespace stepsnet {

// Parsed text config: the value tree plus the line each dotted key was
// defined on, for error messages.
struct ParsedConfig {
    nlohmann::json values;
    std::map<std::string, int> lines;
};

// Text grammar, line oriented:
//   key value...   scalars and lists; numbers, true/false, bare strings
//   key {          opens a nested section, } on its own line closes it
//   # comment      blank lines and comments are skipped
ParsedConfig parse_config_text(const std::string& text);

// Renders a value tree back to the text grammar (round-trips structurally).
std::string config_to_text(const nlohmann::json& values);

// Applies `path.to.key=value` onto the tree. Values parse like text-format
// tokens; commas make lists.
void apply_override(nlohmann::json& values, const std::string& assignment);

// Reads a config file (.json parses as JSON, anything else as text), applies
// overrides, extracts and validates a TrainConfig. Unknown keys, type
// mismatches, and invariant violations all raise ConfigError naming the key.
TrainConfig load_train_config(const std::string& path,
                              const std::vector<std::string>& overrides = {});

// Same extraction from an in-memory tree (used by loaders and presets).
TrainConfig train_config_from_json(const nlohmann::json& values,
                                   const std::map<std::string, int>& lines = {});

nlohmann::json train_config_to_json(const TrainConfig& cfg);
std::string train_config_to_text(const TrainConfig& cfg);

// FNV-1a over the canonical JSON dump, as 16 hex digits.
std::string config_hash(const nlohmann::json& values);

// Ready-made desk-scale run configs. Unknown names raise ConfigError listing
// the choices.
std::vector<std::string> train_preset_names();
TrainConfig train_preset(const std::string& name);

// The genconfig derivation: widths from the halving schedule, depths from the
// doubling allocation, uniform heads.
TrainConfig derive_train_config(std::size_t base_depth, std::size_t width,
                                std::size_t steps, BlockKind kind,
                                const std::string& task, std::size_t heads = 1);

}  // namespace stepsnet
