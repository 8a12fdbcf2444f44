#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>

#include "refdx/confidence.hpp"

namespace refdx::service {

/// Flattened view of a TOML-style file. Keys under a `[section]` header are
/// stored as "section.key"; string values are unquoted.
using ConfigTable = std::map<std::string, std::string>;

/// Supports `[section]`, `key = value`, `#` comments, basic strings, numbers
/// and booleans. Throws ConfigError naming the offending line.
ConfigTable parse_config_text(std::string_view text);

struct EngineConfig {
    std::filesystem::path library_path;
    std::optional<std::filesystem::path> case_store_path;
    std::size_t k_neighbors = 30;
    std::size_t top_n = 5;
    EnsembleSpec ensemble;
    std::optional<double> theta_star;
    std::string listen_address = "127.0.0.1:8080";
    /// Unset means "whatever the library carries".
    std::optional<std::size_t> dim;
    /// Sidecar holding calibration results; defaults to
    /// "<library_path>.state.json".
    std::optional<std::filesystem::path> state_path;
    std::uint64_t featurizer_seed = 0;
    std::size_t search_threads = 1;
    /// Write merged libraries back to library_path after each augment.
    bool persist_library = false;

    /// Throws ConfigError for out-of-range values.
    void validate() const;
    std::filesystem::path effective_state_path() const;
    /// Splits listen_address into host and port; throws ConfigError.
    std::pair<std::string, int> listen_endpoint() const;
};

/// Environment variable overriding `key`: ENGINE_ + upper-cased key with '.'
/// replaced by '_', e.g. "ensemble.seed" -> ENGINE_ENSEMBLE_SEED.
std::string env_name(std::string_view key);

/// Overwrites table entries from ENGINE_* variables found through `getenv`.
void apply_env_overrides(ConfigTable& table,
                         const std::function<std::optional<std::string>(const std::string&)>& getenv);

/// Relative paths are resolved against `base_dir`. Throws ConfigError on
/// unknown keys or unparsable values.
EngineConfig config_from_table(const ConfigTable& table, const std::filesystem::path& base_dir = {});

/// Reads the file, applies process environment overrides, overlays the state
/// sidecar and validates.
EngineConfig load_config(const std::filesystem::path& path);

/// Persisted calibration outcome.
struct EngineState {
    std::optional<double> theta_star;
    std::optional<std::uint64_t> calibrated_generation;
    /// Generation of the library file last written by a persisting augment.
    std::optional<std::uint64_t> library_generation;
};

std::optional<EngineState> load_state(const std::filesystem::path& path);
/// Written to a temporary file and renamed into place.
void save_state(const std::filesystem::path& path, const EngineState& state);

}  // namespace refdx::service
