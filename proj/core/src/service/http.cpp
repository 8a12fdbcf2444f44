#include "refdx/service/http.hpp"

#include <sstream>

#include <httplib.h>

#include "refdx/json.hpp"

namespace refdx::service {
namespace {

using nlohmann::json;

std::optional<std::size_t> optional_count(const json& body, const char* key) {
    if (!body.contains(key) || body[key].is_null()) return std::nullopt;
    const auto& v = body[key];
    if (!v.is_number_integer() || v.get<std::int64_t>() < 1) {
        throw Error(ErrorCode::MalformedBody, std::string("'") + key + "' must be a positive integer",
                    key);
    }
    return v.get<std::size_t>();
}

RgbImage parse_image(const json& image) {
    if (image.contains("base64")) {
        const auto bytes = base64_decode(image.at("base64").get<std::string>());
        return decode_image(bytes);
    }
    RgbImage out;
    out.width = image.at("width").get<std::size_t>();
    out.height = image.at("height").get<std::size_t>();
    out.pixels = image.at("rgb").get<std::vector<std::uint8_t>>();
    return out;
}

// Manifest records embedded in a request body go through the same line
// parser as manifest files so validation is identical.
std::vector<ManifestRecord> manifest_from_body(const json& body) {
    if (body.contains("items")) {
        const auto& items = body["items"];
        if (!items.is_array()) throw Error(ErrorCode::MalformedBody, "'items' must be an array");
        std::stringstream lines;
        for (const auto& item : items) lines << item.dump() << '\n';
        return parse_manifest(lines);
    }
    if (body.contains("manifest")) return read_manifest(body["manifest"].get<std::string>());
    throw Error(ErrorCode::MalformedBody, "expected 'items' or 'manifest'");
}

json parse_body(std::string_view text) {
    try {
        json body = json::parse(text);
        if (!body.is_object()) throw Error(ErrorCode::MalformedBody, "body must be a JSON object");
        return body;
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::MalformedBody, std::string("body is not valid JSON: ") + e.what());
    }
}

ApiResponse route(Engine& engine, std::string_view method, std::string_view path,
                  std::string_view text) {
    auto require = [&](std::string_view m) {
        if (method != m) {
            throw Error(ErrorCode::MalformedBody,
                        std::string(path) + " expects " + std::string(m), std::string(method));
        }
    };
    if (path == "/v1/health") {
        require("GET");
        return {200, engine.health()};
    }
    if (path == "/v1/metrics") {
        require("GET");
        auto report = engine.metrics();
        if (!report) {
            throw Error(ErrorCode::NotFound,
                        "no metrics yet; calibrate on a validation manifest or run an evaluation");
        }
        return {200, json(*report)};
    }
    if (path == "/v1/diagnose" || path == "/v1/diagnose/confident") {
        require("POST");
        const json body = parse_body(text);
        const Embedding q = parse_query(engine, body);
        const auto k = optional_count(body, "k");
        const auto n = optional_count(body, "n");
        const auto r = path == "/v1/diagnose" ? engine.diagnose(q, k, n)
                                              : engine.diagnose_confident(q, k, n);
        return {200, to_json(r, engine.current()->library()->catalog())};
    }
    if (path == "/v1/retrieve") {
        require("POST");
        const json body = parse_body(text);
        const Embedding q = parse_query(engine, body);
        return {200, to_json(engine.retrieve(q, optional_count(body, "k")))};
    }
    if (path == "/v1/libraries/augment") {
        require("POST");
        const json body = parse_body(text);
        if (!body.contains("site_id") || !body["site_id"].is_string()) {
            throw Error(ErrorCode::MalformedBody, "'site_id' (string) is required");
        }
        const auto records = manifest_from_body(body);
        const auto out = engine.augment(records, body["site_id"].get<std::string>());
        return {200, json{{"site_id", out.site_id},
                          {"old_generation", out.old_generation},
                          {"new_generation", out.new_generation},
                          {"added", out.added}}};
    }
    if (path == "/v1/calibrate") {
        require("POST");
        const json body = parse_body(text);
        if (body.contains("scored")) {
            const auto scored = body["scored"].get<std::vector<ScoredPrediction>>();
            json j = engine.calibrate(scored);
            j["generation"] = engine.current()->generation();
            return {200, j};
        }
        const auto records = manifest_from_body(body);
        const auto out = engine.calibrate_validation(records);
        json j = out.calibration;
        j["generation"] = out.generation;
        j["metrics"] = out.metrics;
        return {200, j};
    }
    throw Error(ErrorCode::NotFound, "no route for " + std::string(path), std::string(path));
}

}  // namespace

int http_status(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::DimMismatch:
        case ErrorCode::IdCollision:
            return 409;
        case ErrorCode::UnknownLabel:
        case ErrorCode::UnknownClassId:
        case ErrorCode::OneClassOnly:
            return 422;
        case ErrorCode::NotFound:
            return 404;
        case ErrorCode::InvalidArgument:
        case ErrorCode::ZeroVector:
        case ErrorCode::NonFinite:
        case ErrorCode::NotNormalized:
        case ErrorCode::MalformedBody:
        case ErrorCode::MalformedManifest:
        case ErrorCode::EmptyManifest:
        case ErrorCode::ThetaUnset:
        case ErrorCode::TooSmall:
        case ErrorCode::UndecodableImage:
        case ErrorCode::IncompleteSheet:
        case ErrorCode::EmptyEvaluation:
        case ErrorCode::IoFailure:
            return 400;
        default:
            return 500;
    }
}

Embedding parse_query(const Engine& engine, const json& body) {
    try {
        if (body.contains("vector")) {
            return normalize(body["vector"].get<std::vector<float>>());
        }
        if (body.contains("image")) return engine.featurize(parse_image(body["image"]));
    } catch (const json::exception& e) {
        throw Error(ErrorCode::MalformedBody, std::string("bad query payload: ") + e.what());
    }
    throw Error(ErrorCode::MalformedBody, "expected 'vector' or 'image'");
}

ApiResponse handle_request(Engine& engine, std::string_view method, std::string_view path,
                           std::string_view body) {
    try {
        return route(engine, method, path, body);
    } catch (const Error& e) {
        return {http_status(e.code()), error_json(e)};
    } catch (const json::exception& e) {
        return {400, error_json(Error(ErrorCode::MalformedBody, e.what()))};
    } catch (const std::exception& e) {
        return {500, json{{"code", "INTERNAL"}, {"message", e.what()}, {"detail", ""}}};
    }
}

struct HttpServer::Impl {
    explicit Impl(Engine& e) : engine(e) {}
    Engine& engine;
    httplib::Server server;
};

HttpServer::HttpServer(Engine& engine) : impl_(std::make_unique<Impl>(engine)) {
    auto handler = [this](const httplib::Request& req, httplib::Response& res) {
        const ApiResponse r = handle_request(impl_->engine, req.method, req.path, req.body);
        res.status = r.status;
        res.set_header("Access-Control-Allow-Origin", "*");
        res.set_content(r.body.dump(), "application/json");
    };
    impl_->server.Get(R"(/v1/.*)", handler);
    impl_->server.Post(R"(/v1/.*)", handler);
    impl_->server.Options(R"(/v1/.*)", [](const httplib::Request&, httplib::Response& res) {
        res.set_header("Access-Control-Allow-Origin", "*");
        res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
        res.set_header("Access-Control-Allow-Headers", "Content-Type");
        res.status = 204;
    });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
    const int bound = port == 0 ? impl_->server.bind_to_any_port(host)
                                : (impl_->server.bind_to_port(host, port) ? port : -1);
    if (bound < 0) {
        throw Error(ErrorCode::IoFailure,
                    "cannot listen on " + host + ":" + std::to_string(port));
    }
    return bound;
}

void HttpServer::run() { impl_->server.listen_after_bind(); }

void HttpServer::start() {
    thread_ = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
}

void HttpServer::stop() {
    impl_->server.stop();
    if (thread_.joinable()) thread_.join();
}

}  // namespace refdx::service
