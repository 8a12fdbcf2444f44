#include <gtest/gtest.h>

#include "refdx/harness/oracle.hpp"
#include "refdx/retrieval.hpp"
#include "support.hpp"

namespace refdx {
namespace {

std::vector<ManifestRecord> unlabeled_store(std::size_t n, std::size_t dim, std::uint64_t seed) {
    std::mt19937_64 gen(seed);
    auto recs = test::random_records(gen, n, dim, 1, 100, "archive");
    for (auto& r : recs) {
        r.label.reset();
        r.ref = "cases/" + std::to_string(r.id) + ".png";
    }
    return recs;
}

TEST(CaseStore, RetrievesWithExternalRefs) {
    const auto recs = unlabeled_store(200, 16, 1);
    const auto store = CaseStore::from_manifest(recs);
    EXPECT_EQ(store.size(), 200u);
    const auto q = normalize(recs[42].vector);
    const auto hits = retrieve_cases(store, q, 5);
    ASSERT_EQ(hits.size(), 5u);
    EXPECT_EQ(hits[0].hit.item_id, 142u);
    EXPECT_FALSE(hits[0].hit.class_id.has_value());
    EXPECT_EQ(hits[0].external_ref, "cases/142.png");
    EXPECT_EQ(hits[0].source_tag, "archive");
    EXPECT_EQ(store.meta(142).external_ref, "cases/142.png");
    // Same order as the raw index.
    const auto raw = store.index().search(q, 5);
    for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(hits[i].hit, raw[i]);
}

TEST(CaseStore, DefaultRefsFromSourceTag) {
    const auto lib = test::random_library(3, 10, 8, 2);
    const CaseStore store(lib, {{4, "x.png"}});
    EXPECT_EQ(store.meta(4).external_ref, "x.png");
    EXPECT_EQ(store.meta(5).external_ref, "base/5");
    EXPECT_REFDX_ERROR(CaseStore(lib, {{99, "y.png"}}), ErrorCode::InvalidArgument);
}

TEST(CaseStore, DefaultCountIsTen) {
    const auto store = CaseStore::from_manifest(unlabeled_store(50, 8, 2));
    std::mt19937_64 gen(4);
    EXPECT_EQ(retrieve_cases(store, normalize(test::gaussian(gen, 8))).size(), 10u);
}

ReviewSheet sheet_from(const std::vector<std::vector<bool>>& rows_a, const std::vector<std::vector<bool>>& rows_b) {
    ReviewSheet s;
    s.reviewers = {"a", "b"};
    for (std::size_t i = 0; i < rows_a.size(); ++i) {
        ReviewQuery q;
        q.query_id = "q" + std::to_string(i);
        for (std::size_t j = 0; j < rows_a[i].size(); ++j) q.candidates.push_back(j);
        q.verdicts["a"] = rows_a[i];
        q.verdicts["b"] = rows_b[i];
        s.queries.push_back(q);
    }
    return s;
}

TEST(HitRate, AnyRelevantInTopK) {
    const auto s = sheet_from({{false, true, false}, {false, false, false}, {true, false, false}},
                              {{true, false, false}, {false, false, true}, {false, false, false}});
    const std::vector<std::size_t> ks{1, 2, 3};
    const auto r = topk_hit_rate(s, ks);
    EXPECT_DOUBLE_EQ(r.per_reviewer.at("a").at(1), 1.0 / 3);
    EXPECT_DOUBLE_EQ(r.per_reviewer.at("a").at(2), 2.0 / 3);
    EXPECT_DOUBLE_EQ(r.per_reviewer.at("b").at(3), 2.0 / 3);
    EXPECT_DOUBLE_EQ(r.average.at(1), 1.0 / 3);
}

TEST(HitRate, MatchesCountingOracleAndIsMonotone) {
    std::mt19937_64 gen(8);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t nq = 1 + gen() % 40;
        std::vector<std::vector<bool>> a(nq), b(nq);
        for (std::size_t i = 0; i < nq; ++i) {
            for (int j = 0; j < 10; ++j) {
                a[i].push_back(gen() % 5 == 0);
                b[i].push_back(gen() % 3 == 0);
            }
        }
        const std::vector<std::size_t> ks{1, 3, 5, 10};
        const auto r = topk_hit_rate(sheet_from(a, b), ks);
        const auto wa = harness::oracle::hit_rates(a, ks);
        const auto wb = harness::oracle::hit_rates(b, ks);
        double prev = 0.0;
        for (std::size_t k : ks) {
            EXPECT_NEAR(r.per_reviewer.at("a").at(k), wa.at(k), 1e-12);
            EXPECT_NEAR(r.per_reviewer.at("b").at(k), wb.at(k), 1e-12);
            EXPECT_GE(r.average.at(k), prev);
            prev = r.average.at(k);
        }
    }
}

TEST(ReviewSheet, Validation) {
    auto s = sheet_from({{true, false}}, {{false, true}});
    EXPECT_NO_THROW(s.validate());

    auto short_row = s;
    short_row.queries[0].verdicts["a"].pop_back();
    EXPECT_REFDX_ERROR(short_row.validate(), ErrorCode::IncompleteSheet);

    auto missing = s;
    missing.queries[0].verdicts.erase("b");
    EXPECT_REFDX_ERROR(missing.validate(), ErrorCode::IncompleteSheet);

    auto stranger = s;
    stranger.queries[0].verdicts["c"] = {true, true};
    EXPECT_REFDX_ERROR(stranger.validate(), ErrorCode::InvalidArgument);

    auto dup = s;
    dup.queries[0].candidates[1] = dup.queries[0].candidates[0];
    EXPECT_REFDX_ERROR(dup.validate(), ErrorCode::InvalidArgument);

    const std::vector<std::size_t> ks{1};
    EXPECT_REFDX_ERROR(topk_hit_rate(short_row, ks), ErrorCode::IncompleteSheet);
}

}  // namespace
}  // namespace refdx
