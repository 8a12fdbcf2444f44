#include "refdx/retrieval.hpp"

#include <set>

namespace refdx {

CaseStore::CaseStore(SnapshotPtr snapshot, const std::map<ItemId, std::string>& external_refs)
    : index_(VectorIndex::build(std::move(snapshot))) {
    const auto& snap = *index_.snapshot();
    meta_.reserve(snap.size());
    for (const auto& r : snap.records()) {
        meta_[r.item_id] = CaseMeta{r.source_tag + "/" + std::to_string(r.item_id), r.source_tag};
    }
    for (const auto& [id, ref] : external_refs) {
        auto it = meta_.find(id);
        if (it == meta_.end()) {
            throw Error(ErrorCode::InvalidArgument,
                        "external ref given for unknown item " + std::to_string(id));
        }
        it->second.external_ref = ref;
    }
}

CaseStore CaseStore::from_manifest(std::span<const ManifestRecord> records) {
    const LabelCatalog catalog = catalog_from_manifest(records);
    std::map<ItemId, std::string> refs;
    for (const auto& rec : records) {
        if (rec.ref) refs[rec.id] = *rec.ref;
    }
    return CaseStore(snapshot_from_manifest(records, catalog), refs);
}

const CaseMeta& CaseStore::meta(ItemId id) const {
    auto it = meta_.find(id);
    if (it == meta_.end()) {
        throw Error(ErrorCode::InvalidArgument, "no case with id " + std::to_string(id));
    }
    return it->second;
}

std::vector<CaseHit> retrieve_cases(const CaseStore& store, const Embedding& query, std::size_t k,
                                    const SearchOptions& options) {
    const RankedHits hits = store.index().search(query, k, options);
    std::vector<CaseHit> out;
    out.reserve(hits.size());
    for (const Hit& h : hits.entries) {
        const CaseMeta& m = store.meta(h.item_id);
        out.push_back(CaseHit{h, m.external_ref, m.source_tag});
    }
    return out;
}

void ReviewSheet::validate() const {
    if (reviewers.empty()) throw Error(ErrorCode::IncompleteSheet, "sheet lists no reviewers");
    const std::set<std::string> known(reviewers.begin(), reviewers.end());
    if (known.size() != reviewers.size()) {
        throw Error(ErrorCode::InvalidArgument, "duplicate reviewer name");
    }
    if (queries.empty()) throw Error(ErrorCode::IncompleteSheet, "sheet has no queries");
    for (const auto& q : queries) {
        if (q.candidates.empty()) {
            throw Error(ErrorCode::IncompleteSheet, "query '" + q.query_id + "' has no candidates");
        }
        if (std::set<ItemId>(q.candidates.begin(), q.candidates.end()).size() !=
            q.candidates.size()) {
            throw Error(ErrorCode::InvalidArgument,
                        "query '" + q.query_id + "' lists a candidate twice");
        }
        for (const auto& [reviewer, row] : q.verdicts) {
            if (!known.contains(reviewer)) {
                throw Error(ErrorCode::InvalidArgument,
                            "query '" + q.query_id + "' has verdicts from unknown reviewer '" +
                                reviewer + "'");
            }
        }
        for (const auto& reviewer : reviewers) {
            auto it = q.verdicts.find(reviewer);
            if (it == q.verdicts.end() || it->second.size() != q.candidates.size()) {
                throw Error(ErrorCode::IncompleteSheet,
                            "query '" + q.query_id + "' lacks a complete verdict row from '" +
                                reviewer + "'",
                            q.query_id);
            }
        }
    }
}

HitRateReport topk_hit_rate(const ReviewSheet& sheet, std::span<const std::size_t> ks) {
    sheet.validate();
    const std::set<std::size_t> kset(ks.begin(), ks.end());
    for (std::size_t k : kset) {
        if (k == 0) throw Error(ErrorCode::InvalidArgument, "k must be >= 1");
        for (const auto& q : sheet.queries) {
            if (k > q.candidates.size()) {
                throw Error(ErrorCode::InvalidArgument,
                            "k=" + std::to_string(k) + " exceeds the " +
                                std::to_string(q.candidates.size()) + " candidates of query '" +
                                q.query_id + "'");
            }
        }
    }

    HitRateReport report;
    const auto n_queries = static_cast<double>(sheet.queries.size());
    for (const auto& reviewer : sheet.reviewers) {
        for (std::size_t k : kset) {
            std::size_t hits = 0;
            for (const auto& q : sheet.queries) {
                const auto& row = q.verdicts.at(reviewer);
                for (std::size_t i = 0; i < k; ++i) {
                    if (row[i]) {
                        ++hits;
                        break;
                    }
                }
            }
            report.per_reviewer[reviewer][k] = static_cast<double>(hits) / n_queries;
        }
    }
    for (std::size_t k : kset) {
        double sum = 0.0;
        for (const auto& reviewer : sheet.reviewers) sum += report.per_reviewer[reviewer][k];
        report.average[k] = sum / static_cast<double>(sheet.reviewers.size());
    }
    return report;
}

}  // namespace refdx
