#include <cmath>
#include <fstream>

#include <gtest/gtest.h>

#include "refdx/harness/experiments.hpp"
#include "refdx/harness/generate.hpp"
#include "refdx/json.hpp"
#include "refdx/library_io.hpp"
#include "refdx/retrieval.hpp"
#include "support.hpp"

namespace refdx::harness {
namespace {

using nlohmann::json;

double dot(const Vec& a, const Vec& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm(const Vec& a) { return std::sqrt(dot(a, a)); }

TEST(Generate, RngIsReproducibleAndStreamsDiffer) {
    Rng a(5), b(5);
    for (int i = 0; i < 100; ++i) EXPECT_EQ(a.normal(), b.normal());
    Rng s1 = Rng::stream(5, 1), s2 = Rng::stream(5, 2);
    EXPECT_NE(s1.uniform(), s2.uniform());
    Rng m(9);
    double sum = 0, sq = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const double x = m.normal();
        sum += x;
        sq += x * x;
    }
    EXPECT_NEAR(sum / n, 0.0, 0.05);
    EXPECT_NEAR(sq / n, 1.0, 0.05);
    for (int i = 0; i < 1000; ++i) EXPECT_LT(m.below(7), 7u);
}

TEST(Generate, CentroidsRespectMinimumAngleAndOrthogonalExtras) {
    Rng rng(3);
    const std::size_t n = 11, extra = 4, dim = 128;
    const double cone = 0.3;
    const auto c = place_centroids(rng, n, dim, cone, 5.0, extra);
    ASSERT_EQ(c.size(), n + extra);
    for (const auto& v : c) EXPECT_NEAR(norm(v), 1.0, 1e-9);
    const double min_cos = std::cos(5.0 * std::acos(-1.0) / 180.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) EXPECT_LE(dot(c[i], c[j]), min_cos + 1e-12);
    }
    // Extras are equidistant from every in-distribution centroid.
    for (std::size_t e = n; e < n + extra; ++e) {
        const double d0 = distance(c[e], c[0]);
        for (std::size_t i = 1; i < n; ++i) EXPECT_NEAR(distance(c[e], c[i]), d0, 1e-9);
    }
}

TEST(Generate, ClustersAreDeterministicAndShaped) {
    ClusterSpec spec;
    spec.n_classes = 4;
    spec.ref_per_class = 10;
    spec.query_per_class = 3;
    spec.dim = 32;
    spec.seed = 7;
    const auto a = gen_clusters(spec);
    const auto b = gen_clusters(spec);
    ASSERT_EQ(a.reference.size(), 40u);
    ASSERT_EQ(a.queries.size(), 12u);
    EXPECT_EQ(a.catalog.name(0), "class_00");
    for (std::size_t i = 0; i < a.reference.size(); ++i) {
        EXPECT_EQ(a.reference[i].vector, b.reference[i].vector);
        EXPECT_EQ(a.reference[i].id, i);
    }
    EXPECT_EQ(a.queries[0].id, 40u);
    for (std::size_t i = 0; i < a.queries.size(); ++i) {
        EXPECT_EQ(*a.queries[i].label, a.catalog.name(a.query_truths[i]));
    }
    spec.seed = 8;
    EXPECT_NE(gen_clusters(spec).reference[0].vector, a.reference[0].vector);
    spec.n_classes = 0;
    EXPECT_REFDX_ERROR(gen_clusters(spec), ErrorCode::InvalidArgument);
}

TEST(Generate, NoiseHasRequestedRmsNorm) {
    Rng rng(1);
    const std::size_t dim = 512;
    Vec centroid(dim, 0.0);
    centroid[0] = 1.0;
    // Before normalization |x - c| ~ sigma; after it the angle to c is ~atan(sigma).
    const double sigma = 0.2;
    double mean_cos = 0;
    for (int i = 0; i < 200; ++i) mean_cos += sample_point(rng, centroid, sigma)[0];
    EXPECT_NEAR(mean_cos / 200, 1.0 / std::sqrt(1 + sigma * sigma), 0.01);
}

json small_topk() {
    return {{"n_classes", 4}, {"ref_per_class", 20}, {"query_per_class", 5}, {"dim", 32}, {"sigma", 1.5},
            {"neighbors", {5, 10}}, {"ks", {1, 3}}};
}

json strip_timings(json j) {
    j.erase("timings_ms");
    return j;
}

TEST(Experiments, Registry) {
    const auto& names = experiment_names();
    for (const char* n : {"topk_curve", "shift_recovery", "triage", "ood", "retrieval_hitrate"}) {
        EXPECT_NE(std::find(names.begin(), names.end(), n), names.end()) << n;
    }
    EXPECT_REFDX_ERROR(run_experiment("nope", json::object(), 0), ErrorCode::UnknownExperiment);
    EXPECT_REFDX_ERROR(run_experiment("topk_curve", json{{"colour", 1}}, 0), ErrorCode::InvalidArgument);
}

TEST(Experiments, ReproducibleAcrossRunsAndThreads) {
    const auto a = run_experiment("topk_curve", small_topk(), 3);
    const auto b = run_experiment("topk_curve", small_topk(), 3, RunOptions{2});
    EXPECT_EQ(strip_timings(to_json(a)), strip_timings(to_json(b)));
    const auto c = run_experiment("topk_curve", small_topk(), 4);
    EXPECT_NE(to_json(a)["metrics"], to_json(c)["metrics"]);

    const json j = to_json(a);
    for (const char* key : {"experiment", "seed", "config", "metrics", "table", "checks", "passed"}) {
        EXPECT_TRUE(j.contains(key)) << key;
    }
    // Defaults are echoed alongside overrides.
    EXPECT_EQ(j["config"]["dim"], 32);
    EXPECT_TRUE(j["config"].contains("sigma"));
    EXPECT_EQ(j["passed"], a.passed());
}

TEST(Experiments, CsvMatchesTable) {
    const auto r = run_experiment("topk_curve", small_topk(), 1);
    const auto csv = to_csv(r);
    std::istringstream in(csv);
    std::string line;
    std::size_t lines = 0;
    std::getline(in, line);
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), static_cast<long>(r.columns.size()) - 1);
    while (std::getline(in, line)) ++lines;
    EXPECT_EQ(lines, r.rows.size());
}

TEST(Experiments, ChecksEvaluateRelations) {
    EXPECT_TRUE(make_check("a", 0.5, ">=", 0.5).pass);
    EXPECT_FALSE(make_check("a", 0.5, ">", 0.5).pass);
    EXPECT_TRUE(make_check("a", 0.4, "<", 0.5).pass);
    EXPECT_FALSE(make_check("a", std::nan(""), "<=", 1.0).pass);
    EXPECT_REFDX_ERROR(make_check("a", 0.4, "==", 0.5), ErrorCode::InvalidArgument);
}

TEST(Experiments, SmallShiftRunStillRecovers) {
    const json cfg{{"n_classes", 4}, {"ref_per_class", 40}, {"query_per_class", 20},
                   {"local_per_class", 20}, {"dim", 64}, {"ks", {1, 3}}};
    const auto r = run_experiment("shift_recovery", cfg, 0);
    const json m = to_json(r)["metrics"]["shifted"];
    EXPECT_GT(m["after"]["topk"]["1"].get<double>(), m["before"]["topk"]["1"].get<double>()) << m.dump();
}

TEST(Experiments, RetrievalHitrateSmall) {
    const json cfg{{"n_classes", 3}, {"ref_per_class", 30}, {"queries", 10}, {"dim", 16}};
    const auto r = run_experiment("retrieval_hitrate", cfg, 2);
    for (const auto& c : r.checks) EXPECT_TRUE(c.pass) << c.name << " " << c.observed;
}

TEST(DemoBundle, WritesLoadableFiles) {
    test::TempDir dir;
    const auto files = write_demo_bundle(dir.path(), 0);
    for (const char* name : {"library.grdl", "queries.jsonl", "validation.jsonl", "site_local.jsonl",
                             "site_queries.jsonl", "case_store.jsonl", "scored.json", "review_sheet.json",
                             "query.json", "engine.toml"}) {
        EXPECT_TRUE(std::filesystem::exists(dir / name)) << name;
    }
    EXPECT_EQ(files.size(), 10u);
    const auto lib = load_library(dir / "library.grdl");
    EXPECT_EQ(lib->catalog().size(), 11u);
    EXPECT_EQ(lib->size(), 440u);
    EXPECT_EQ(read_manifest(dir / "queries.jsonl").size(), 55u);
    for (const auto& r : read_manifest(dir / "case_store.jsonl")) {
        EXPECT_FALSE(r.label);
        ASSERT_TRUE(r.ref);
    }
    std::ifstream sheet(dir / "review_sheet.json");
    const auto s = json::parse(sheet).get<ReviewSheet>();
    EXPECT_NO_THROW(s.validate());

    test::TempDir again;
    write_demo_bundle(again.path(), 0);
    EXPECT_EQ(encode_library(*load_library(again / "library.grdl")), encode_library(*lib));
}

}  // namespace
}  // namespace refdx::harness
