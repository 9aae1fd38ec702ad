#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mffd/detector_model.hpp"
#include "mffd/training_eval.hpp"

namespace mffd {

/// Everything a run needs besides its data paths.
struct RunConfig {
    std::string preset = "paper";
    DetectorConfig model;
    TrainConfig train;
    FocalLossConfig focal;
    std::uint64_t init_seed = 1;  // detector parameter initialisation
    std::string embeddings;       // FEMB path, used with model.semantic_source = file

    /// Both nested configs; InvalidConfig on failure.
    void validate() const;
};

/// Model and training settings for the single-core surrogate experiment.
RunConfig desk_run_config();

/// Every accepted key, in the order resolved_line() prints them.
const std::vector<std::string>& config_keys();

/// Applies one `key=value` assignment. Unknown keys and unparsable values
/// are InvalidConfig. `preset` resets every other key to the preset's value.
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value);
void apply_override(RunConfig& cfg, const std::string& assignment);

/// Parses `key = value` lines with `#` comments and optional `[section]`
/// headers that prefix the keys below them. A `preset` line is applied
/// before the remaining keys wherever it appears.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

/// File config (if any) followed by overrides in order.
RunConfig resolve_config(const std::filesystem::path& path, const std::vector<std::string>& overrides);

/// Space-separated `key=value` pairs for every key; feeding them back as
/// overrides reproduces the config exactly.
std::string resolved_line(const RunConfig& cfg);
/// The same pairs one per line, readable by load_config.
std::string config_text(const RunConfig& cfg);

}  // namespace mffd
