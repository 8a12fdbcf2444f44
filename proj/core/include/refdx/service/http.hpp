#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <thread>

#include <nlohmann/json.hpp>

#include "refdx/service/engine.hpp"

namespace refdx::service {

struct ApiResponse {
    int status = 200;
    nlohmann::json body;
};

/// HTTP status for an engine error: 400 for malformed input, 409 for dim or
/// id conflicts, 422 for unknown labels, 404 for missing resources.
int http_status(ErrorCode code) noexcept;

/// Query embedding from a request body carrying either "vector": [...] (any
/// nonzero scale) or "image": {"width", "height", "rgb": [...]} /
/// {"base64": "..."} routed through the toy featurizer.
Embedding parse_query(const Engine& engine, const nlohmann::json& body);

/// Routes one request. Never throws; errors come back as
/// {"code", "message", "detail"} with the mapped status.
ApiResponse handle_request(Engine& engine, std::string_view method, std::string_view path,
                           std::string_view body);

/// cpp-httplib front end over handle_request.
class HttpServer {
public:
    explicit HttpServer(Engine& engine);
    ~HttpServer();
    HttpServer(const HttpServer&) = delete;
    HttpServer& operator=(const HttpServer&) = delete;

    /// Port 0 picks a free port. Returns the bound port; throws IoFailure.
    int bind(const std::string& host, int port);
    /// Serves on the calling thread until stop().
    void run();
    /// Serves on a background thread.
    void start();
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
    std::thread thread_;
};

}  // namespace refdx::service
