#include "refdx/service/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace refdx::service {
namespace {

const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys = {
        "library_path",     "case_store_path", "k_neighbors",    "top_n",
        "ensemble.passes",  "ensemble.mask_rate", "ensemble.seed", "theta_star",
        "listen_address",   "dim",             "state_path",     "featurizer.seed",
        "search.threads",   "persist_library",
    };
    return keys;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

[[noreturn]] void fail_line(std::size_t line, const std::string& what) {
    throw Error(ErrorCode::ConfigError, "config line " + std::to_string(line) + ": " + what,
                std::to_string(line));
}

// Parses a quoted string starting at s[0] == '"'; returns the unquoted value
// and leaves `rest` at whatever follows the closing quote.
std::string parse_quoted(std::string_view s, std::size_t line, std::string_view& rest) {
    std::string out;
    std::size_t i = 1;
    for (; i < s.size(); ++i) {
        const char c = s[i];
        if (c == '"') break;
        if (c != '\\') {
            out.push_back(c);
            continue;
        }
        if (++i == s.size()) fail_line(line, "dangling escape");
        switch (s[i]) {
            case '"': out.push_back('"'); break;
            case '\\': out.push_back('\\'); break;
            case 'n': out.push_back('\n'); break;
            case 't': out.push_back('\t'); break;
            default: fail_line(line, std::string("unsupported escape \\") + s[i]);
        }
    }
    if (i >= s.size()) fail_line(line, "unterminated string");
    rest = s.substr(i + 1);
    return out;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
    T value{};
    const char* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, value);
    if (ec != std::errc() || ptr != end) {
        throw Error(ErrorCode::ConfigError, "'" + key + "' is not a valid number: " + text, key);
    }
    return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
    if (text == "true") return true;
    if (text == "false") return false;
    throw Error(ErrorCode::ConfigError, "'" + key + "' must be true or false", key);
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    std::filesystem::path path(p);
    return path.is_relative() && !base.empty() ? base / path : path;
}

}  // namespace

ConfigTable parse_config_text(std::string_view text) {
    ConfigTable table;
    std::string section;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const std::size_t nl = std::min(text.find('\n', pos), text.size());
        std::string_view line = text.substr(pos, nl - pos);
        pos = nl + 1;
        ++line_no;

        line = trim(line);
        if (line.empty() || line.front() == '#') {
            if (nl == text.size()) break;
            continue;
        }
        if (line.front() == '[') {
            const auto close = line.find(']');
            if (close == std::string_view::npos) fail_line(line_no, "unterminated section header");
            const auto after = trim(line.substr(close + 1));
            if (!after.empty() && after.front() != '#') fail_line(line_no, "text after section");
            section = std::string(trim(line.substr(1, close - 1)));
            if (section.empty()) fail_line(line_no, "empty section name");
        } else {
            const auto eq = line.find('=');
            if (eq == std::string_view::npos) fail_line(line_no, "expected key = value");
            const std::string key(trim(line.substr(0, eq)));
            if (key.empty()) fail_line(line_no, "missing key");
            std::string_view raw = trim(line.substr(eq + 1));
            if (raw.empty()) fail_line(line_no, "missing value for '" + key + "'");
            std::string value;
            if (raw.front() == '"') {
                std::string_view rest;
                value = parse_quoted(raw, line_no, rest);
                rest = trim(rest);
                if (!rest.empty() && rest.front() != '#') fail_line(line_no, "text after value");
            } else {
                const auto hash = raw.find('#');
                value = std::string(trim(raw.substr(0, hash)));
            }
            const std::string full = section.empty() ? key : section + "." + key;
            if (table.contains(full)) fail_line(line_no, "duplicate key '" + full + "'");
            table[full] = value;
        }
        if (nl == text.size()) break;
    }
    return table;
}

std::string env_name(std::string_view key) {
    std::string out = "ENGINE_";
    for (char c : key) {
        out.push_back(c == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
    }
    return out;
}

void apply_env_overrides(
    ConfigTable& table,
    const std::function<std::optional<std::string>(const std::string&)>& getenv) {
    for (const auto& key : known_keys()) {
        if (auto value = getenv(env_name(key))) table[key] = *value;
    }
}

EngineConfig config_from_table(const ConfigTable& table, const std::filesystem::path& base_dir) {
    for (const auto& [key, _] : table) {
        if (!known_keys().contains(key)) {
            throw Error(ErrorCode::ConfigError, "unknown config key '" + key + "'", key);
        }
    }
    EngineConfig c;
    auto get = [&](const char* key) -> const std::string* {
        auto it = table.find(key);
        return it == table.end() ? nullptr : &it->second;
    };
    if (auto v = get("library_path")) c.library_path = resolve(base_dir, *v);
    if (auto v = get("case_store_path"); v && !v->empty()) {
        c.case_store_path = resolve(base_dir, *v);
    }
    if (auto v = get("state_path"); v && !v->empty()) c.state_path = resolve(base_dir, *v);
    if (auto v = get("k_neighbors")) c.k_neighbors = parse_number<std::size_t>("k_neighbors", *v);
    if (auto v = get("top_n")) c.top_n = parse_number<std::size_t>("top_n", *v);
    if (auto v = get("ensemble.passes")) {
        c.ensemble.passes = parse_number<std::size_t>("ensemble.passes", *v);
    }
    if (auto v = get("ensemble.mask_rate")) {
        c.ensemble.mask_rate = parse_number<double>("ensemble.mask_rate", *v);
    }
    if (auto v = get("ensemble.seed")) {
        c.ensemble.seed = parse_number<std::uint64_t>("ensemble.seed", *v);
    }
    if (auto v = get("theta_star")) c.theta_star = parse_number<double>("theta_star", *v);
    if (auto v = get("listen_address")) c.listen_address = *v;
    if (auto v = get("dim")) c.dim = parse_number<std::size_t>("dim", *v);
    if (auto v = get("featurizer.seed")) {
        c.featurizer_seed = parse_number<std::uint64_t>("featurizer.seed", *v);
    }
    if (auto v = get("search.threads")) {
        c.search_threads = parse_number<std::size_t>("search.threads", *v);
    }
    if (auto v = get("persist_library")) c.persist_library = parse_bool("persist_library", *v);
    return c;
}

void EngineConfig::validate() const {
    auto bad = [](const std::string& what) { throw Error(ErrorCode::ConfigError, what); };
    if (k_neighbors < 1) bad("k_neighbors must be >= 1");
    if (top_n < 1) bad("top_n must be >= 1");
    if (ensemble.passes < 1) bad("ensemble.passes must be >= 1");
    if (!(ensemble.mask_rate >= 0.0 && ensemble.mask_rate < 1.0)) {
        bad("ensemble.mask_rate must be in [0, 1)");
    }
    if (theta_star && !(*theta_star >= 0.0 && *theta_star <= kThetaUpperSentinel)) {
        bad("theta_star must be in [0, 1]");
    }
    if (dim && *dim < 2) bad("dim must be >= 2");
    listen_endpoint();
}

std::filesystem::path EngineConfig::effective_state_path() const {
    if (state_path) return *state_path;
    return std::filesystem::path(library_path.string() + ".state.json");
}

std::pair<std::string, int> EngineConfig::listen_endpoint() const {
    const auto colon = listen_address.rfind(':');
    if (colon == std::string::npos || colon == 0) {
        throw Error(ErrorCode::ConfigError,
                    "listen_address must look like host:port, got '" + listen_address + "'");
    }
    const std::string port_text = listen_address.substr(colon + 1);
    const int port = parse_number<int>("listen_address", port_text);
    if (port < 0 || port > 65535) throw Error(ErrorCode::ConfigError, "port out of range");
    return {listen_address.substr(0, colon), port};
}

EngineConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorCode::ConfigError, "cannot read config file " + path.string(),
                    path.string());
    }
    std::stringstream buf;
    buf << in.rdbuf();
    ConfigTable table = parse_config_text(buf.str());
    apply_env_overrides(table, [](const std::string& name) -> std::optional<std::string> {
        const char* v = std::getenv(name.c_str());
        return v ? std::optional<std::string>(v) : std::nullopt;
    });
    EngineConfig config = config_from_table(table, path.parent_path());
    if (auto state = load_state(config.effective_state_path()); state && state->theta_star) {
        config.theta_star = state->theta_star;
    }
    config.validate();
    return config;
}

std::optional<EngineState> load_state(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) return std::nullopt;
    try {
        const auto j = nlohmann::json::parse(in);
        EngineState s;
        if (j.contains("theta_star") && !j["theta_star"].is_null()) {
            s.theta_star = j["theta_star"].get<double>();
        }
        if (j.contains("calibrated_generation") && !j["calibrated_generation"].is_null()) {
            s.calibrated_generation = j["calibrated_generation"].get<std::uint64_t>();
        }
        if (j.contains("library_generation") && !j["library_generation"].is_null()) {
            s.library_generation = j["library_generation"].get<std::uint64_t>();
        }
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ConfigError,
                    "state file " + path.string() + " is not valid: " + e.what(), path.string());
    }
}

void save_state(const std::filesystem::path& path, const EngineState& state) {
    nlohmann::json j = nlohmann::json::object();
    auto put = [&](const char* key, const auto& opt) {
        j[key] = opt ? nlohmann::json(*opt) : nlohmann::json(nullptr);
    };
    put("theta_star", state.theta_star);
    put("calibrated_generation", state.calibrated_generation);
    put("library_generation", state.library_generation);

    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        out << j.dump(2) << '\n';
        if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + tmp.string(), tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        throw Error(ErrorCode::IoFailure, "cannot replace " + path.string() + ": " + ec.message(),
                    path.string());
    }
}

}  // namespace refdx::service
