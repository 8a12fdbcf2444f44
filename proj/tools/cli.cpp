#include "cli.hpp"

#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include <pthread.h>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "refdx/json.hpp"
#include "refdx/service/engine.hpp"
#include "refdx/service/http.hpp"

namespace refdx::cli {
namespace {

using nlohmann::json;
using service::Engine;
using service::EngineConfig;

struct Globals {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> k;
    std::optional<std::size_t> n;
    std::optional<double> theta;
    std::string format = "json";
};

EngineConfig make_config(const Globals& g, const std::string& library) {
    EngineConfig c;
    if (!g.config.empty()) {
        c = service::load_config(g.config);
    } else {
        service::ConfigTable table;
        service::apply_env_overrides(table, [](const std::string& name) -> std::optional<std::string> {
            const char* v = std::getenv(name.c_str());
            return v ? std::optional<std::string>(v) : std::nullopt;
        });
        c = service::config_from_table(table);
    }
    if (!library.empty()) c.library_path = library;
    if (g.seed) c.ensemble.seed = *g.seed;
    if (g.k) c.k_neighbors = *g.k;
    if (g.n) c.top_n = *g.n;
    if (g.theta) c.theta_star = *g.theta;
    c.validate();
    return c;
}

json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path, path);
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::MalformedBody, "invalid JSON in " + path, e.what());
    }
}

bool is_manifest(const std::string& path) {
    return std::filesystem::path(path).extension() == ".jsonl";
}

std::optional<std::size_t> body_count(const json& body, const char* key) {
    if (!body.contains(key) || body[key].is_null()) return std::nullopt;
    const auto& v = body[key];
    if (!v.is_number_integer() || v.get<std::int64_t>() < 1) {
        throw Error(ErrorCode::MalformedBody, std::string("'") + key + "' must be a positive integer", key);
    }
    return v.get<std::size_t>();
}

// Left-aligned text table.
std::string table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
    std::vector<std::size_t> width(header.size());
    for (std::size_t i = 0; i < header.size(); ++i) width[i] = header[i].size();
    for (const auto& r : rows) {
        for (std::size_t i = 0; i < r.size() && i < width.size(); ++i) width[i] = std::max(width[i], r[i].size());
    }
    std::ostringstream out;
    auto line = [&](const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            out << std::left << std::setw(static_cast<int>(width[i] + (i + 1 < cells.size() ? 2 : 0)))
                << cells[i];
        }
        out << '\n';
    };
    line(header);
    for (const auto& r : rows) line(r);
    return out.str();
}

std::string num(double v, int precision = 6) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(precision) << v;
    return s.str();
}

std::string diagnosis_table(const json& r) {
    std::vector<std::vector<std::string>> rows;
    std::size_t rank = 1;
    for (const auto& l : r["ranked_labels"]) {
        rows.push_back({std::to_string(rank++), std::to_string(l["class_id"].get<int>()),
                        l["name"].get<std::string>(), num(l["score"].get<double>())});
    }
    std::string out = table({"rank", "class", "label", "score"}, rows);
    if (r.contains("cscore")) {
        out += "final " + r["final_label"].get<std::string>() + "  cscore " + num(r["cscore"].get<double>(), 4) +
               "  theta " + num(r["theta"].get<double>(), 4) + "  " +
               (r["reliable"].get<bool>() ? "reliable" : "REVIEW") + "\n";
    }
    out += "generation " + std::to_string(r["generation"].get<std::uint64_t>()) + "\n";
    return out;
}

std::string retrieval_table(const json& r) {
    std::vector<std::vector<std::string>> rows;
    std::size_t rank = 1;
    for (const auto& h : r["hits"]) {
        rows.push_back({std::to_string(rank++), std::to_string(h["item_id"].get<std::uint64_t>()),
                        num(h["score"].get<double>()), h.value("external_ref", ""), h.value("source_tag", "")});
    }
    return table({"rank", "id", "score", "ref", "source"}, rows);
}

std::string metrics_table(const json& m) {
    std::vector<std::vector<std::string>> rows;
    for (const auto& [k, acc] : m["top_k_accuracy"].items()) {
        rows.push_back({k, num(acc.get<double>()), num(m["macro_recall"][k].get<double>())});
    }
    return table({"k", "accuracy", "macro_recall"}, rows) + "samples " +
           std::to_string(m["n_samples"].get<std::size_t>()) + "\n";
}

std::string calibration_table(const json& c) {
    std::string out = "theta* " + num(c["theta_star"].get<double>(), 9) + "  J " +
                      num(c["youden_star"].get<double>()) + "  positives " +
                      std::to_string(c["positives"].get<std::size_t>()) + "  negatives " +
                      std::to_string(c["negatives"].get<std::size_t>()) + "\n";
    if (c.contains("metrics")) out += metrics_table(c["metrics"]);
    return out;
}

// Flat key/value rendering for everything without a dedicated table.
std::string kv_table(const json& j) {
    std::vector<std::vector<std::string>> rows;
    for (const auto& [key, v] : j.items()) rows.push_back({key, v.is_string() ? v.get<std::string>() : v.dump()});
    return table({"key", "value"}, rows);
}

class Output {
public:
    Output(std::ostream& out, const std::string& format) : out_(out), table_(format == "table") {}

    void emit(const json& j, const std::function<std::string(const json&)>& render = kv_table) {
        out_ << (table_ ? render(j) : j.dump(2) + "\n");
    }

    void emit_many(const json& arr, const std::function<std::string(const json&)>& render) {
        if (!table_) {
            out_ << arr.dump(2) << '\n';
            return;
        }
        for (const auto& item : arr) {
            if (item.contains("id")) out_ << "query " << item["id"].dump() << '\n';
            out_ << render(item["result"]) << '\n';
        }
    }

private:
    std::ostream& out_;
    bool table_;
};

int serve(Engine& engine, std::ostream& out) {
    // Block the shutdown signals before the server threads start so only
    // this thread receives them.
    sigset_t set;
    sigemptyset(&set);
    sigaddset(&set, SIGINT);
    sigaddset(&set, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &set, nullptr);

    const auto [host, port] = engine.config().listen_endpoint();
    service::HttpServer server(engine);
    const int bound = server.bind(host, port);
    server.start();
    out << json{{"listening", host + ":" + std::to_string(bound)},
                {"generation", engine.current()->generation()}}.dump()
        << std::endl;
    int sig = 0;
    sigwait(&set, &sig);
    server.stop();
    return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Reference-library diagnosis engine"};
    app.name("refdx");
    app.require_subcommand(1);

    Globals g;
    app.add_option("--config", g.config, "Engine config file (TOML subset)");
    app.add_option("--seed", g.seed, "Ensemble seed");
    app.add_option("--k", g.k, "Neighbors per query")->check(CLI::PositiveNumber);
    app.add_option("--n", g.n, "Labels to report")->check(CLI::PositiveNumber);
    app.add_option("--theta", g.theta, "Confidence threshold")->check(CLI::Range(0.0, 1.0 + 1e-9));
    app.add_option("--format", g.format, "Output format")->check(CLI::IsMember({"json", "table"}));

    std::string manifest, library, query_file, store, out_path, site, validation, scored_path;
    std::vector<std::string> labels;
    std::vector<std::size_t> ks{1, 3, 5};
    bool confident = false;
    std::string listen;

    auto* ingest = app.add_subcommand("ingest", "Build a binary library from a JSONL manifest");
    ingest->add_option("manifest", manifest)->required();
    ingest->add_option("out_library", out_path)->required();
    ingest->add_option("--labels", labels, "Class names in id order (default: first appearance)")
        ->delimiter(',');

    auto* build = app.add_subcommand("build", "Load a library, build its index and print a summary");
    build->add_option("library", library)->required();

    auto* diagnose = app.add_subcommand("diagnose", "Rank labels for a query body or a JSONL manifest");
    diagnose->add_option("library", library)->required();
    diagnose->add_option("query_file", query_file)->required();
    diagnose->add_flag("--confident", confident, "Add the Monte-Carlo confidence report (needs theta)");

    auto* calibrate = app.add_subcommand("calibrate", "Choose theta* by Youden's index and persist it");
    calibrate->add_option("library", library);
    calibrate->add_option("validation_manifest", validation);
    calibrate->add_option("--scored", scored_path, "JSON array of [cscore, correct] pairs");

    auto* retrieve = app.add_subcommand("retrieve", "Similar cases from a store");
    retrieve->add_option("store", store)->required();
    retrieve->add_option("query_file", query_file)->required();

    auto* eval = app.add_subcommand("eval", "Top-k accuracy and recall on a labeled manifest");
    eval->add_option("library", library)->required();
    eval->add_option("test_manifest", manifest)->required();
    eval->add_option("--topk", ks, "Accuracy cut-offs")->delimiter(',')->check(CLI::PositiveNumber);

    auto* augment = app.add_subcommand("augment", "Merge site-local items into a library");
    augment->add_option("library", library)->required();
    augment->add_option("manifest", manifest)->required();
    augment->add_option("--site", site, "Site id")->required();
    augment->add_option("--out", out_path, "Write the merged library here");

    auto* serve_cmd = app.add_subcommand("serve", "Serve the HTTP API");
    serve_cmd->add_option("library", library, "Overrides library_path from --config");
    serve_cmd->add_option("--listen", listen, "host:port, overrides listen_address");

    for (auto* sub : app.get_subcommands({})) sub->fallthrough();

    std::vector<const char*> argv{"refdx"};
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
        if (calibrate->parsed() && scored_path.empty() && validation.empty()) {
            throw CLI::ValidationError("calibrate", "give a validation manifest or --scored");
        }
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 2;
    }

    Output output(out, g.format);
    try {
        if (ingest->parsed()) {
            const auto records = read_manifest(manifest);
            const LabelCatalog catalog = labels.empty() ? catalog_from_manifest(records) : LabelCatalog(labels);
            const auto snap = snapshot_from_manifest(records, catalog);
            save_library(*snap, out_path);
            output.emit(json{{"library", out_path},
                             {"items", snap->size()},
                             {"dim", snap->dim()},
                             {"classes", catalog.names()},
                             {"generation", snap->generation()}});
            return 0;
        }
        if (build->parsed()) {
            Engine engine(make_config(g, library));
            output.emit(engine.health());
            return 0;
        }
        if (diagnose->parsed()) {
            Engine engine(make_config(g, library));
            const auto& catalog = engine.current()->library()->catalog();
            auto run_one = [&](const Embedding& q, std::optional<std::size_t> k, std::optional<std::size_t> n) {
                const auto r = confident ? engine.diagnose_confident(q, k, n) : engine.diagnose(q, k, n);
                return service::to_json(r, catalog);
            };
            if (is_manifest(query_file)) {
                json results = json::array();
                for (const auto& rec : read_manifest(query_file)) {
                    results.push_back({{"id", rec.id}, {"result", run_one(normalize(rec.vector), g.k, g.n)}});
                }
                output.emit_many(results, diagnosis_table);
            } else {
                const json body = read_json(query_file);
                const Embedding q = service::parse_query(engine, body);
                output.emit(run_one(q, g.k ? g.k : body_count(body, "k"), g.n ? g.n : body_count(body, "n")),
                            diagnosis_table);
            }
            return 0;
        }
        if (calibrate->parsed()) {
            if (!scored_path.empty()) {
                json body = read_json(scored_path);
                if (body.is_object()) body = body.at("scored");
                const auto scored = body.get<std::vector<ScoredPrediction>>();
                if (library.empty()) {
                    output.emit(json(calibrate_threshold(scored)), calibration_table);
                    return 0;
                }
                Engine engine(make_config(g, library));
                json j = engine.calibrate(scored);
                j["generation"] = engine.current()->generation();
                output.emit(j, calibration_table);
                return 0;
            }
            Engine engine(make_config(g, library));
            const auto result = engine.calibrate_validation(read_manifest(validation));
            json j = result.calibration;
            j["generation"] = result.generation;
            j["metrics"] = result.metrics;
            output.emit(j, calibration_table);
            return 0;
        }
        if (retrieve->parsed()) {
            const auto cases = service::load_case_store(store);
            Engine engine(make_config(g, ""), cases->snapshot(), cases);
            const auto k = g.k;
            if (is_manifest(query_file)) {
                json results = json::array();
                for (const auto& rec : read_manifest(query_file)) {
                    results.push_back({{"id", rec.id}, {"result", to_json(engine.retrieve(normalize(rec.vector), k))}});
                }
                output.emit_many(results, retrieval_table);
            } else {
                const json body = read_json(query_file);
                const Embedding q = service::parse_query(engine, body);
                output.emit(to_json(engine.retrieve(q, k ? k : body_count(body, "k"))), retrieval_table);
            }
            return 0;
        }
        if (eval->parsed()) {
            Engine engine(make_config(g, library));
            output.emit(json(engine.evaluate(read_manifest(manifest), ks)), metrics_table);
            return 0;
        }
        if (augment->parsed()) {
            Engine engine(make_config(g, library));
            const auto outcome = engine.augment(read_manifest(manifest), site);
            if (!out_path.empty()) save_library(*engine.current()->library(), out_path);
            output.emit(json{{"site_id", outcome.site_id},
                             {"old_generation", outcome.old_generation},
                             {"new_generation", outcome.new_generation},
                             {"added", outcome.added}});
            return 0;
        }
        if (serve_cmd->parsed()) {
            EngineConfig config = make_config(g, library);
            if (!listen.empty()) config.listen_address = listen;
            config.validate();
            Engine engine(config);
            return serve(engine, out);
        }
    } catch (const Error& e) {
        err << error_json(e).dump() << '\n';
        return 1;
    } catch (const json::exception& e) {
        err << error_json(Error(ErrorCode::MalformedBody, "malformed JSON input", e.what())).dump() << '\n';
        return 1;
    } catch (const std::filesystem::filesystem_error& e) {
        err << error_json(Error(ErrorCode::IoFailure, e.what(), e.path1().string())).dump() << '\n';
        return 1;
    }
    return 2;
}

}  // namespace refdx::cli
