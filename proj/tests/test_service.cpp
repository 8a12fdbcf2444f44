#include <atomic>
#include <fstream>
#include <thread>

#include <gtest/gtest.h>
#include <opencv2/imgcodecs.hpp>

#include "refdx/json.hpp"
#include "refdx/service/config.hpp"
#include "refdx/service/engine.hpp"
#include "refdx/service/featurize.hpp"
#include "refdx/service/http.hpp"
#include <httplib.h>
#include "support.hpp"

namespace refdx::service {
namespace {

using nlohmann::json;
using test::TempDir;

// ------------------------------------------------------------------ config

TEST(Config, ParsesSectionsStringsAndComments) {
    const auto t = parse_config_text(
        "# engine\n"
        "library_path = \"data/lib.grdl\"  # trailing comment\n"
        "k_neighbors = 15\n"
        "\n"
        "[ensemble]\n"
        "passes = 50\n"
        "mask_rate = 0.2\n"
        "name = \"a \\\"quoted\\\" # not a comment\"\n");
    EXPECT_EQ(t.at("library_path"), "data/lib.grdl");
    EXPECT_EQ(t.at("k_neighbors"), "15");
    EXPECT_EQ(t.at("ensemble.passes"), "50");
    EXPECT_EQ(t.at("ensemble.mask_rate"), "0.2");
    EXPECT_EQ(t.at("ensemble.name"), "a \"quoted\" # not a comment");
}

TEST(Config, RejectsMalformedLines) {
    EXPECT_REFDX_ERROR(parse_config_text("k_neighbors\n"), ErrorCode::ConfigError);
    EXPECT_REFDX_ERROR(parse_config_text("a = 1\na = 2\n"), ErrorCode::ConfigError);
    EXPECT_REFDX_ERROR(parse_config_text("[unterminated\n"), ErrorCode::ConfigError);
    EXPECT_REFDX_ERROR(parse_config_text("p = \"open\n"), ErrorCode::ConfigError);
    try {
        parse_config_text("a = 1\n\nbroken line\n");
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
    }
}

TEST(Config, TableToConfig) {
    ConfigTable t{{"library_path", "lib.grdl"},
                  {"k_neighbors", "12"},
                  {"top_n", "3"},
                  {"ensemble.passes", "40"},
                  {"ensemble.mask_rate", "0.25"},
                  {"ensemble.seed", "9"},
                  {"theta_star", "0.6"},
                  {"listen_address", "0.0.0.0:9000"},
                  {"dim", "64"},
                  {"persist_library", "true"}};
    const auto c = config_from_table(t, "/srv/refdx");
    EXPECT_EQ(c.library_path, std::filesystem::path("/srv/refdx/lib.grdl"));
    EXPECT_EQ(c.k_neighbors, 12u);
    EXPECT_EQ(c.top_n, 3u);
    EXPECT_EQ(c.ensemble.passes, 40u);
    EXPECT_DOUBLE_EQ(c.ensemble.mask_rate, 0.25);
    EXPECT_EQ(c.ensemble.seed, 9u);
    EXPECT_EQ(c.theta_star, 0.6);
    EXPECT_EQ(c.dim, 64u);
    EXPECT_TRUE(c.persist_library);
    EXPECT_EQ(c.listen_endpoint(), (std::pair<std::string, int>{"0.0.0.0", 9000}));
    EXPECT_EQ(c.effective_state_path(), std::filesystem::path("/srv/refdx/lib.grdl.state.json"));
}

TEST(Config, Defaults) {
    const EngineConfig c;
    EXPECT_EQ(c.k_neighbors, 30u);
    EXPECT_EQ(c.top_n, 5u);
    EXPECT_EQ(c.ensemble.passes, 100u);
    EXPECT_DOUBLE_EQ(c.ensemble.mask_rate, 0.1);
    EXPECT_FALSE(c.theta_star.has_value());
}

TEST(Config, RangeChecks) {
    auto bad = [](ConfigTable t) { EXPECT_REFDX_ERROR(config_from_table(t).validate(), ErrorCode::ConfigError); };
    bad({{"k_neighbors", "0"}});
    bad({{"top_n", "0"}});
    bad({{"ensemble.passes", "0"}});
    bad({{"ensemble.mask_rate", "1.0"}});
    bad({{"theta_star", "1.5"}});
    bad({{"k_neighbors", "ten"}});
    bad({{"listen_address", "nohost"}});
    bad({{"colour", "blue"}});
}

TEST(Config, EnvironmentOverrides) {
    EXPECT_EQ(env_name("ensemble.seed"), "ENGINE_ENSEMBLE_SEED");
    EXPECT_EQ(env_name("k_neighbors"), "ENGINE_K_NEIGHBORS");
    ConfigTable t{{"k_neighbors", "30"}};
    apply_env_overrides(t, [](const std::string& name) -> std::optional<std::string> {
        if (name == "ENGINE_K_NEIGHBORS") return "7";
        if (name == "ENGINE_ENSEMBLE_SEED") return "42";
        return std::nullopt;
    });
    EXPECT_EQ(t.at("k_neighbors"), "7");
    EXPECT_EQ(t.at("ensemble.seed"), "42");
    EXPECT_EQ(config_from_table(t).ensemble.seed, 42u);
}

TEST(Config, LoadConfigOverlaysState) {
    TempDir dir;
    {
        std::ofstream f(dir / "engine.toml");
        f << "library_path = \"lib.grdl\"\ntheta_star = 0.3\n";
    }
    EXPECT_EQ(load_config(dir / "engine.toml").theta_star, 0.3);
    save_state(dir / "lib.grdl.state.json", EngineState{0.7, 2, std::nullopt});
    const auto c = load_config(dir / "engine.toml");
    EXPECT_EQ(c.theta_star, 0.7);
    EXPECT_EQ(c.library_path, dir / "lib.grdl");
    const auto st = load_state(dir / "lib.grdl.state.json");
    ASSERT_TRUE(st);
    EXPECT_EQ(st->calibrated_generation, 2u);
    EXPECT_FALSE(st->library_generation);
    EXPECT_FALSE(load_state(dir / "missing.json"));
    EXPECT_REFDX_ERROR(load_config(dir / "missing.toml"), ErrorCode::ConfigError);
}

// --------------------------------------------------------------- featurize

RgbImage solid(std::size_t w, std::size_t h, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    RgbImage img{w, h, {}};
    for (std::size_t i = 0; i < w * h; ++i) img.pixels.insert(img.pixels.end(), {r, g, b});
    return img;
}

TEST(Featurize, ConstantImage) {
    const auto raw = raw_features(solid(40, 33, 255, 51, 0));
    ASSERT_EQ(raw.size(), kRawFeatureDim);
    for (std::size_t cell = 0; cell < kFeatureGrid * kFeatureGrid; ++cell) {
        EXPECT_DOUBLE_EQ(raw[cell * 6 + 0], 1.0);
        EXPECT_DOUBLE_EQ(raw[cell * 6 + 2], 0.2);
        EXPECT_DOUBLE_EQ(raw[cell * 6 + 4], 0.0);
        for (int ch = 0; ch < 3; ++ch) EXPECT_DOUBLE_EQ(raw[cell * 6 + 2 * ch + 1], 0.0);
    }
    const auto e = toy_featurize(solid(40, 33, 255, 51, 0), 64, 1);
    EXPECT_EQ(e.dim(), 64u);
    EXPECT_NEAR(l2_norm(e.values()), 1.0, 1e-6);
}

TEST(Featurize, BoxStatisticsMatchDirectComputation) {
    // 64x32 splits into 4x2 boxes; check one cell by hand.
    RgbImage img{64, 32, {}};
    std::mt19937_64 gen(3);
    for (std::size_t i = 0; i < 64 * 32 * 3; ++i) img.pixels.push_back(static_cast<std::uint8_t>(gen() % 256));
    const auto raw = raw_features(img);
    const std::size_t cy = 5, cx = 9, ch = 1;
    double sum = 0, sq = 0;
    for (std::size_t y = cy * 2; y < cy * 2 + 2; ++y) {
        for (std::size_t x = cx * 4; x < cx * 4 + 4; ++x) sum += img.pixels[(y * 64 + x) * 3 + ch] / 255.0;
    }
    const double mean = sum / 8;
    for (std::size_t y = cy * 2; y < cy * 2 + 2; ++y) {
        for (std::size_t x = cx * 4; x < cx * 4 + 4; ++x) {
            const double d = img.pixels[(y * 64 + x) * 3 + ch] / 255.0 - mean;
            sq += d * d;
        }
    }
    const std::size_t base = (cy * kFeatureGrid + cx) * 6 + ch * 2;
    EXPECT_NEAR(raw[base], mean, 1e-12);
    EXPECT_NEAR(raw[base + 1], std::sqrt(sq / 8), 1e-12);
}

TEST(Featurize, DeterministicAndSensitive) {
    RgbImage a = solid(64, 64, 10, 120, 200);
    const auto e1 = toy_featurize(a, 128, 5);
    EXPECT_EQ(e1, toy_featurize(a, 128, 5));
    RgbImage b = a;
    for (std::size_t y = 32; y < 64; ++y) {
        for (std::size_t x = 32; x < 64; ++x) b.pixels[(y * 64 + x) * 3] = 250;
    }
    const auto e2 = toy_featurize(b, 128, 5);
    double cos = 0;
    for (std::size_t i = 0; i < 128; ++i) cos += static_cast<double>(e1[i]) * e2[i];
    EXPECT_LT(cos, 1.0 - 1e-6);
    EXPECT_NE(toy_featurize(a, 128, 6), e1);
}

TEST(Featurize, Errors) {
    EXPECT_REFDX_ERROR(raw_features(solid(31, 64, 0, 0, 0)), ErrorCode::TooSmall);
    RgbImage bad = solid(32, 32, 0, 0, 0);
    bad.pixels.pop_back();
    EXPECT_REFDX_ERROR(raw_features(bad), ErrorCode::InvalidArgument);
    const std::vector<std::uint8_t> junk{1, 2, 3, 4};
    EXPECT_REFDX_ERROR(decode_image(junk), ErrorCode::UndecodableImage);
    EXPECT_REFDX_ERROR(base64_decode("ab$d"), ErrorCode::UndecodableImage);
}

TEST(Featurize, DecodesPngAsRgb) {
    cv::Mat bgr(40, 50, CV_8UC3, cv::Scalar(30, 20, 10));  // B, G, R
    std::vector<std::uint8_t> png;
    ASSERT_TRUE(cv::imencode(".png", bgr, png));
    const auto img = decode_image(png);
    EXPECT_EQ(img.width, 50u);
    EXPECT_EQ(img.height, 40u);
    EXPECT_EQ(img.pixels[0], 10);
    EXPECT_EQ(img.pixels[1], 20);
    EXPECT_EQ(img.pixels[2], 30);
}

TEST(Featurize, Base64) {
    const auto bytes = base64_decode("aGVsbG8=");
    EXPECT_EQ(std::string(bytes.begin(), bytes.end()), "hello");
    const auto unpadded = base64_decode("aGVsbG8\n");
    EXPECT_EQ(std::string(unpadded.begin(), unpadded.end()), "hello");
}

// ------------------------------------------------------------------ engine

class EngineTest : public ::testing::Test {
protected:
    void SetUp() override {
        lib_ = test::random_library(7, 120, 16, 4);
        EngineConfig config;
        config.k_neighbors = 10;
        config.ensemble = {20, 0.1, 3};
        engine_ = std::make_unique<Engine>(config, lib_);
    }
    Embedding row(std::size_t i) const {
        return Embedding::from_values({lib_->row(i).begin(), lib_->row(i).end()}, true);
    }
    SnapshotPtr lib_;
    std::unique_ptr<Engine> engine_;
};

TEST_F(EngineTest, DiagnoseMatchesDirectPrediction) {
    const auto r = engine_->diagnose(row(5));
    EXPECT_EQ(r.prediction, predict(row(5), VectorIndex::build(lib_), 10, 5));
    EXPECT_EQ(r.generation, lib_->generation());
    EXPECT_FALSE(r.confidence);
    const json j = to_json(r, lib_->catalog());
    EXPECT_EQ(j["ranked_labels"][0]["name"], lib_->catalog().name(r.prediction.top1()));
    EXPECT_TRUE(j.contains("timing_ms"));
}

TEST_F(EngineTest, ConfidentModeNeedsTheta) {
    EXPECT_REFDX_ERROR(engine_->diagnose_confident(row(0)), ErrorCode::ThetaUnset);
    const std::vector<ScoredPrediction> s{{0.9, true}, {0.2, false}};
    const auto cal = engine_->calibrate(s);
    EXPECT_EQ(engine_->theta(), cal.theta_star);
    const auto r = engine_->diagnose_confident(row(0));
    ASSERT_TRUE(r.confidence);
    EXPECT_EQ(r.confidence->theta, cal.theta_star);
    EXPECT_EQ(*r.confidence, mc_predict(row(0), lib_, {20, 0.1, 3}, 10, cal.theta_star));
    EXPECT_EQ(engine_->health()["theta_star"], cal.theta_star);
}

TEST_F(EngineTest, AugmentPublishesNextGeneration) {
    const auto before = engine_->current();
    std::mt19937_64 gen(1);
    const auto outcome = engine_->augment(test::random_records(gen, 25, 16, 4), "site-x");
    EXPECT_EQ(outcome.old_generation, before->generation());
    EXPECT_EQ(outcome.new_generation, before->generation() + 1);
    EXPECT_EQ(outcome.added, 25u);
    const auto h = engine_->health();
    EXPECT_EQ(h["generation"], outcome.new_generation);
    EXPECT_EQ(h["items"]["total"], 145);
    EXPECT_EQ(h["items"]["local"], 25);
    EXPECT_EQ(h["sites"]["site-x"]["local_items"], 25);
    // The old state is untouched for anyone still holding it.
    EXPECT_EQ(before->library()->size(), 120u);
    EXPECT_TRUE(engine_->current()->sites().consistent_with(*engine_->current()->library()));
}

TEST_F(EngineTest, AugmentErrorsLeaveStateAlone) {
    std::mt19937_64 gen(1);
    EXPECT_REFDX_ERROR(engine_->augment(test::random_records(gen, 3, 8, 4), "s"), ErrorCode::DimMismatch);
    auto recs = test::random_records(gen, 3, 16, 4);
    recs[0].label = "zzz";
    EXPECT_REFDX_ERROR(engine_->augment(recs, "s"), ErrorCode::UnknownLabel);
    EXPECT_REFDX_ERROR(engine_->augment(recs, ""), ErrorCode::InvalidArgument);
    EXPECT_EQ(engine_->current()->generation(), lib_->generation());
}

TEST_F(EngineTest, EvaluateStoresMetrics) {
    EXPECT_FALSE(engine_->metrics());
    std::vector<ManifestRecord> test_set;
    for (std::size_t i = 0; i < 40; ++i) {
        test_set.push_back({i, lib_->catalog().name(*lib_->record(i).class_id), "t",
                            {lib_->row(i).begin(), lib_->row(i).end()}, std::nullopt});
    }
    const std::vector<std::size_t> ks{1, 3};
    const auto m = engine_->evaluate(test_set, ks);
    EXPECT_EQ(engine_->metrics(), m);
    EXPECT_LE(m.top_k_accuracy.at(1), m.top_k_accuracy.at(3));
}

TEST_F(EngineTest, CalibrateValidationSetsThetaAndMetrics) {
    std::vector<ManifestRecord> val;
    std::mt19937_64 gen(2);
    for (std::size_t i = 0; i < 60; ++i) {
        auto v = std::vector<float>(lib_->row(i).begin(), lib_->row(i).end());
        const auto noise = test::gaussian(gen, 16);
        for (std::size_t d = 0; d < 16; ++d) v[d] += 0.3f * noise[d];
        val.push_back({i, lib_->catalog().name(*lib_->record(i).class_id), "v", v, std::nullopt});
    }
    const auto out = engine_->calibrate_validation(val);
    EXPECT_EQ(engine_->theta(), out.calibration.theta_star);
    EXPECT_EQ(out.calibration.positives + out.calibration.negatives, 60u);
    ASSERT_TRUE(engine_->metrics());
    EXPECT_EQ(engine_->metrics()->n_samples, 60u);
}

TEST_F(EngineTest, RetrieveFallsBackToLibrary) {
    const auto r = engine_->retrieve(row(3), 4);
    ASSERT_EQ(r.hits.size(), 4u);
    EXPECT_EQ(r.hits[0].hit.item_id, lib_->record(3).item_id);
    EXPECT_EQ(r.hits[0].external_ref, "base/" + std::to_string(lib_->record(3).item_id));
}

// -------------------------------------------------------------------- http

class HttpTest : public EngineTest {
protected:
    json vec_body(std::size_t i, json extra = json::object()) const {
        extra["vector"] = std::vector<float>(lib_->row(i).begin(), lib_->row(i).end());
        return extra;
    }
    ApiResponse post(std::string_view path, const json& body) {
        return handle_request(*engine_, "POST", path, body.dump());
    }
};

TEST_F(HttpTest, DiagnoseMatchesEngine) {
    const auto r = post("/v1/diagnose", vec_body(4, {{"k", 7}, {"n", 2}}));
    ASSERT_EQ(r.status, 200) << r.body;
    auto want = to_json(engine_->diagnose(row(4), 7, 2), lib_->catalog());
    auto got = r.body;
    got.erase("timing_ms");
    want.erase("timing_ms");
    EXPECT_EQ(got, want);
    EXPECT_EQ(got["ranked_labels"].size(), 2u);
}

TEST_F(HttpTest, ErrorStatuses) {
    auto expect = [](const ApiResponse& r, int status, const char* code) {
        EXPECT_EQ(r.status, status) << r.body;
        EXPECT_EQ(r.body["code"], code) << r.body;
        EXPECT_TRUE(r.body.contains("message"));
        EXPECT_TRUE(r.body.contains("detail"));
    };
    expect(post("/v1/diagnose/confident", vec_body(0)), 400, "THETA_UNSET");
    expect(post("/v1/diagnose", json{{"vector", {1.0, 2.0}}}), 409, "DIM_MISMATCH");
    expect(post("/v1/diagnose", json{{"vector", std::vector<float>(16, 0.0f)}}), 400, "ZERO_VECTOR");
    expect(post("/v1/diagnose", vec_body(0, {{"k", 0}})), 400, "MALFORMED_BODY");
    expect(handle_request(*engine_, "POST", "/v1/diagnose", "{not json"), 400, "MALFORMED_BODY");
    expect(handle_request(*engine_, "POST", "/v1/diagnose", "[1,2]"), 400, "MALFORMED_BODY");
    expect(handle_request(*engine_, "GET", "/v1/diagnose", ""), 400, "MALFORMED_BODY");
    expect(handle_request(*engine_, "GET", "/v1/nothing", ""), 404, "NOT_FOUND");
    expect(handle_request(*engine_, "GET", "/v1/metrics", ""), 404, "NOT_FOUND");
    json bad_label{{"site_id", "s"},
                   {"items", {{{"id", 1}, {"label", "zzz"}, {"vector", std::vector<float>(16, 1.0f)}}}}};
    expect(post("/v1/libraries/augment", bad_label), 422, "UNKNOWN_LABEL");
    expect(post("/v1/libraries/augment", json{{"items", json::array()}}), 400, "MALFORMED_BODY");
    expect(post("/v1/calibrate", json{{"scored", {{{"cscore", 0.5}, {"correct", true}}}}}), 422,
           "ONE_CLASS_ONLY");
}

TEST_F(HttpTest, AugmentCalibrateAndMetricsFlow) {
    json items = json::array();
    std::mt19937_64 gen(9);
    for (const auto& r : test::random_records(gen, 25, 16, 4)) {
        items.push_back({{"id", r.id}, {"label", *r.label}, {"vector", r.vector}});
    }
    const auto aug = post("/v1/libraries/augment", json{{"site_id", "site-b"}, {"items", items}});
    ASSERT_EQ(aug.status, 200) << aug.body;
    EXPECT_EQ(aug.body["added"], 25);
    EXPECT_EQ(aug.body["new_generation"], aug.body["old_generation"].get<std::uint64_t>() + 1);

    const auto health = handle_request(*engine_, "GET", "/v1/health", "");
    EXPECT_EQ(health.body["items"]["local"], 25);
    EXPECT_EQ(health.body["generation"], aug.body["new_generation"]);

    const json scored{{"scored",
                       {{{"cscore", 0.8}, {"correct", true}},
                        {{"cscore", 0.6}, {"correct", true}},
                        {{"cscore", 0.7}, {"correct", false}},
                        {{"cscore", 0.3}, {"correct", false}}}}};
    const auto cal = post("/v1/calibrate", scored);
    ASSERT_EQ(cal.status, 200) << cal.body;
    EXPECT_DOUBLE_EQ(cal.body["theta_star"].get<double>(), 0.45);

    const auto conf = post("/v1/diagnose/confident", vec_body(2));
    ASSERT_EQ(conf.status, 200) << conf.body;
    EXPECT_DOUBLE_EQ(conf.body["theta"].get<double>(), 0.45);
    EXPECT_TRUE(conf.body.contains("cscore"));
    EXPECT_TRUE(conf.body.contains("reliable"));

    json val = json::array();
    for (std::size_t i = 0; i < 30; ++i) {
        val.push_back({{"id", i},
                       {"label", lib_->catalog().name(*lib_->record(i).class_id)},
                       {"vector", std::vector<float>(lib_->row(i).begin(), lib_->row(i).end())}});
    }
    const auto cal2 = post("/v1/calibrate", json{{"items", val}});
    ASSERT_EQ(cal2.status, 200) << cal2.body;
    EXPECT_TRUE(cal2.body.contains("metrics"));
    const auto metrics = handle_request(*engine_, "GET", "/v1/metrics", "");
    ASSERT_EQ(metrics.status, 200);
    EXPECT_EQ(metrics.body, cal2.body["metrics"]);
}

TEST_F(HttpTest, ImageQueries) {
    EngineConfig config;
    config.featurizer_seed = 4;
    const auto lib = test::random_library(7, 40, 64, 3);
    Engine engine(config, lib);
    const RgbImage img = solid(48, 48, 200, 100, 50);
    json raw{{"image", {{"width", 48}, {"height", 48}, {"rgb", img.pixels}}}};
    const auto r = handle_request(engine, "POST", "/v1/diagnose", raw.dump());
    ASSERT_EQ(r.status, 200) << r.body;
    auto want = to_json(engine.diagnose(toy_featurize(img, 64, 4)), lib->catalog());
    auto got = r.body;
    got.erase("timing_ms");
    want.erase("timing_ms");
    EXPECT_EQ(got, want);

    json tiny{{"image", {{"width", 8}, {"height", 8}, {"rgb", std::vector<int>(192, 0)}}}};
    EXPECT_EQ(handle_request(engine, "POST", "/v1/diagnose", tiny.dump()).body["code"], "TOO_SMALL");
    json junk{{"image", {{"base64", "AAAA"}}}};
    EXPECT_EQ(handle_request(engine, "POST", "/v1/diagnose", junk.dump()).body["code"],
              "UNDECODABLE_IMAGE");
}

TEST_F(HttpTest, RetrieveEndpoint) {
    const auto r = post("/v1/retrieve", vec_body(9, {{"k", 3}}));
    ASSERT_EQ(r.status, 200) << r.body;
    auto want = to_json(engine_->retrieve(row(9), 3));
    auto got = r.body;
    got.erase("timing_ms");
    want.erase("timing_ms");
    EXPECT_EQ(got, want);
}

TEST_F(HttpTest, ServesOverSocket) {
    HttpServer server(*engine_);
    const int port = server.bind("127.0.0.1", 0);
    ASSERT_GT(port, 0);
    server.start();
    httplib::Client client("127.0.0.1", port);
    const auto health = client.Get("/v1/health");
    ASSERT_TRUE(health);
    EXPECT_EQ(health->status, 200);
    EXPECT_EQ(json::parse(health->body)["status"], "ok");
    EXPECT_EQ(health->get_header_value("Access-Control-Allow-Origin"), "*");
    const auto diag = client.Post("/v1/diagnose", vec_body(1).dump(), "application/json");
    ASSERT_TRUE(diag);
    EXPECT_EQ(diag->status, 200);
    const auto missing = client.Post("/v1/diagnose/confident", vec_body(1).dump(), "application/json");
    ASSERT_TRUE(missing);
    EXPECT_EQ(missing->status, 400);
    EXPECT_EQ(json::parse(missing->body)["code"], "THETA_UNSET");
    server.stop();
}

TEST(EngineFiles, PersistsThetaAndMergedLibrary) {
    TempDir dir;
    const auto lib = test::random_library(3, 50, 8, 2);
    save_library(*lib, dir / "lib.grdl");
    EngineConfig config;
    config.library_path = dir / "lib.grdl";
    config.persist_library = true;
    {
        Engine engine(config);
        const std::vector<ScoredPrediction> s{{0.8, true}, {0.6, true}, {0.7, false}, {0.3, false}};
        engine.calibrate(s);
        std::mt19937_64 gen(5);
        engine.augment(test::random_records(gen, 5, 8, 2), "site");
    }
    const auto st = load_state(dir / "lib.grdl.state.json");
    ASSERT_TRUE(st);
    EXPECT_DOUBLE_EQ(*st->theta_star, 0.45);
    EXPECT_EQ(st->library_generation, 2u);

    Engine reopened(config);
    EXPECT_EQ(reopened.theta(), st->theta_star);
    EXPECT_EQ(reopened.current()->generation(), 2u);
    EXPECT_EQ(reopened.current()->library()->size(), 55u);
    EXPECT_EQ(reopened.health()["sites"]["site"]["local_items"], 5);

    // An explicit theta wins over the sidecar.
    config.theta_star = 0.9;
    EXPECT_EQ(Engine(config).theta(), 0.9);
}

TEST(EngineFiles, CaseStoreFromManifest) {
    TempDir dir;
    std::mt19937_64 gen(3);
    auto recs = test::random_records(gen, 30, 8, 1, 1000, "archive");
    for (auto& r : recs) {
        r.label.reset();
        r.ref = "img/" + std::to_string(r.id) + ".png";
    }
    write_manifest(dir / "cases.jsonl", recs);
    const auto store = load_case_store(dir / "cases.jsonl");
    EXPECT_EQ(store->size(), 30u);
    Engine engine(EngineConfig{}, test::random_library(1, 10, 8, 2), store);
    const auto r = engine.retrieve(normalize(recs[7].vector), 3);
    EXPECT_EQ(r.hits[0].external_ref, "img/1007.png");
    EXPECT_EQ(engine.health()["case_store_items"], 30);
}

TEST(EngineConcurrency, ReadersSeeWholeGenerations) {
    // Expected predictions for every generation are computed up front by
    // replaying the same merges; each concurrent response must equal the
    // expectation for the generation it reports.
    const std::size_t dim = 16, augments = 5;
    const auto base = test::random_library(11, 200, dim, 4);
    std::mt19937_64 gen(12);
    std::vector<std::vector<ManifestRecord>> batches;
    for (std::size_t a = 0; a < augments; ++a) batches.push_back(test::random_records(gen, 30, dim, 4));
    std::vector<Embedding> queries;
    for (int i = 0; i < 8; ++i) queries.push_back(normalize(test::gaussian(gen, dim)));

    std::map<std::uint64_t, std::vector<Prediction>> expected;
    SnapshotPtr snap = base;
    for (std::size_t a = 0; a <= augments; ++a) {
        const auto index = VectorIndex::build(snap);
        for (const auto& q : queries) expected[snap->generation()].push_back(predict(q, index, 30, 5));
        if (a < augments) snap = merge(*snap, ingest_local(batches[a], *snap, "s" + std::to_string(a)));
    }

    Engine engine(EngineConfig{}, base);
    std::atomic<bool> done{false};
    std::atomic<int> checked{0};
    std::vector<std::thread> readers;
    for (int t = 0; t < 4; ++t) {
        readers.emplace_back([&, t] {
            std::size_t i = static_cast<std::size_t>(t);
            while (!done.load() || i < 40) {
                const auto& q = queries[i % queries.size()];
                const auto r = engine.diagnose(q);
                EXPECT_EQ(r.prediction, expected.at(r.generation)[i % queries.size()]);
                ++checked;
                ++i;
            }
        });
    }
    for (std::size_t a = 0; a < augments; ++a) engine.augment(batches[a], "s" + std::to_string(a));
    done = true;
    for (auto& th : readers) th.join();
    EXPECT_GT(checked.load(), 0);
    EXPECT_EQ(engine.current()->generation(), base->generation() + augments);
}

}  // namespace
}  // namespace refdx::service
