#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace refdx::harness {

/// One acceptance bound: observed `relation` bound, e.g. 0.98 >= 0.95.
struct Check {
    std::string name;
    std::string relation;  // ">=", "<=", "<", ">"
    double bound = 0.0;
    double observed = 0.0;
    bool pass = false;
};

Check make_check(std::string name, double observed, std::string relation, double bound);

struct ExperimentReport {
    std::string experiment;
    std::uint64_t seed = 0;
    /// Every parameter in effect, defaults included.
    nlohmann::json config;
    nlohmann::json metrics;
    std::vector<std::string> columns;
    std::vector<std::vector<std::string>> rows;
    std::vector<Check> checks;
    /// Wall-clock only; everything else is reproducible from (name, config, seed).
    std::map<std::string, double> timings_ms;

    bool passed() const;
};

nlohmann::json to_json(const ExperimentReport& report);
/// The report's table as CSV, header first.
std::string to_csv(const ExperimentReport& report);

struct RunOptions {
    /// Worker threads for per-query work; results do not depend on it.
    std::size_t threads = 1;
};

const std::vector<std::string>& experiment_names();

/// `config` overrides the experiment's defaults; unknown keys are rejected
/// with InvalidArgument. Throws UnknownExperiment.
ExperimentReport run_experiment(std::string_view name, const nlohmann::json& config,
                                std::uint64_t seed, const RunOptions& options = {});

/// Self-contained demo inputs: library.grdl, queries.jsonl, validation.jsonl,
/// site_local.jsonl, site_queries.jsonl, case_store.jsonl, scored.json,
/// review_sheet.json, query.json and engine.toml. Returns the written paths.
std::vector<std::filesystem::path> write_demo_bundle(const std::filesystem::path& dir,
                                                     std::uint64_t seed);

}  // namespace refdx::harness
