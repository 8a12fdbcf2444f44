#pragma once

#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "refdx/index.hpp"
#include "refdx/library_io.hpp"

namespace refdx {

struct CaseMeta {
    std::string external_ref;  // opaque: file path or URL
    std::string source_tag;
};

/// Searchable case corpus; labels are optional. Every item carries metadata.
class CaseStore {
public:
    /// Items without an entry in `external_refs` get "<source_tag>/<item_id>".
    /// Throws EmptyLibrary, InvalidArgument (ref for an unknown id).
    explicit CaseStore(SnapshotPtr snapshot,
                       const std::map<ItemId, std::string>& external_refs = {});

    /// Unlabeled store from manifest records, taking refs from their `ref`
    /// field. Labels, when present, are kept.
    static CaseStore from_manifest(std::span<const ManifestRecord> records);

    const VectorIndex& index() const noexcept { return index_; }
    const SnapshotPtr& snapshot() const noexcept { return index_.snapshot(); }
    const CaseMeta& meta(ItemId id) const;
    std::size_t size() const noexcept { return index_.size(); }

private:
    VectorIndex index_;
    std::unordered_map<ItemId, CaseMeta> meta_;
};

struct CaseHit {
    Hit hit;
    std::string external_ref;
    std::string source_tag;
};

inline constexpr std::size_t kDefaultCaseCount = 10;

std::vector<CaseHit> retrieve_cases(const CaseStore& store, const Embedding& query,
                                    std::size_t k = kDefaultCaseCount,
                                    const SearchOptions& options = {});

/// Reviewer judgments over retrieved candidates, one row per query.
struct ReviewQuery {
    std::string query_id;
    std::vector<ItemId> candidates;
    /// reviewer -> relevant flag per candidate, same order as `candidates`.
    std::map<std::string, std::vector<bool>> verdicts;
};

struct ReviewSheet {
    std::vector<std::string> reviewers;
    std::vector<ReviewQuery> queries;

    /// Throws IncompleteSheet (missing reviewer row, wrong row length) or
    /// InvalidArgument (duplicate candidates, unknown reviewer).
    void validate() const;
};

struct HitRateReport {
    std::map<std::string, std::map<std::size_t, double>> per_reviewer;
    /// Mean over reviewers.
    std::map<std::size_t, double> average;
};

/// hit(query, reviewer, k) = any of the first k candidates marked relevant;
/// rates are means over queries.
HitRateReport topk_hit_rate(const ReviewSheet& sheet, std::span<const std::size_t> ks);

}  // namespace refdx
