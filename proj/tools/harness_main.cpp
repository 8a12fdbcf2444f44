// harness: synthetic experiments and demo inputs.
//
//   harness list
//   harness run <experiment> [--config cfg.json] [--seed N] [--threads T] [--out report.json] [--csv table.csv]
//   harness bundle <dir> [--seed N]
//
// Exit status: 0 when every check passes, 1 when a check fails or a data
// error occurs, 2 on usage errors.

#include <cstdio>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "refdx/error.hpp"
#include "refdx/harness/experiments.hpp"
#include "refdx/json.hpp"

namespace {

using nlohmann::json;
namespace rh = refdx::harness;

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw refdx::Error(refdx::ErrorCode::IoFailure, "cannot open " + path, path);
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw refdx::Error(refdx::ErrorCode::MalformedBody, "invalid JSON in " + path, e.what());
    }
}

void write_or_print(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::cout << text;
        return;
    }
    std::ofstream out(path, std::ios::trunc);
    out << text;
    if (!out) throw refdx::Error(refdx::ErrorCode::IoFailure, "cannot write " + path, path);
}

void print_summary(const rh::ExperimentReport& report) {
    std::cerr << report.experiment << " (seed " << report.seed << ")\n";
    for (const auto& c : report.checks) {
        std::fprintf(stderr, "  %s  %s: %.6f %s %.6f\n", c.pass ? "PASS" : "FAIL", c.name.c_str(),
                     c.observed, c.relation.c_str(), c.bound);
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Synthetic experiments for the reference-library diagnosis engine"};
    app.require_subcommand(1);

    auto* list = app.add_subcommand("list", "List experiment names");

    auto* run = app.add_subcommand("run", "Run one experiment");
    std::string name, config_path, out_path, csv_path;
    std::uint64_t seed = 0;
    std::size_t threads = 1;
    run->add_option("experiment", name, "Experiment name")->required();
    run->add_option("--config", config_path, "JSON object overriding experiment defaults");
    run->add_option("--seed", seed, "Base seed");
    run->add_option("--threads", threads, "Worker threads (results do not depend on it)")
        ->check(CLI::PositiveNumber);
    run->add_option("--out", out_path, "Report JSON path (default stdout)");
    run->add_option("--csv", csv_path, "Also write the result table as CSV");

    auto* bundle = app.add_subcommand("bundle", "Write demo inputs for the refdx CLI and service");
    std::string bundle_dir;
    bundle->add_option("dir", bundle_dir, "Output directory")->required();
    bundle->add_option("--seed", seed, "Seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (list->parsed()) {
            for (const auto& n : rh::experiment_names()) std::cout << n << '\n';
            return 0;
        }
        if (bundle->parsed()) {
            for (const auto& p : rh::write_demo_bundle(bundle_dir, seed)) std::cout << p.string() << '\n';
            return 0;
        }
        const json config = config_path.empty() ? json::object() : read_json_file(config_path);
        const rh::ExperimentReport report = rh::run_experiment(name, config, seed, {threads});
        write_or_print(out_path, rh::to_json(report).dump(2) + "\n");
        if (!csv_path.empty()) write_or_print(csv_path, rh::to_csv(report));
        print_summary(report);
        return report.passed() ? 0 : 1;
    } catch (const refdx::Error& e) {
        std::cerr << refdx::error_json(e).dump() << '\n';
        return 1;
    }
}
