#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "refdx/aligned.hpp"
#include "refdx/embedding.hpp"
#include "refdx/error.hpp"
#include "refdx/snapshot.hpp"

namespace refdx {

struct Hit {
    ItemId item_id = 0;
    std::optional<ClassId> class_id;
    Provenance provenance = Provenance::Base;
    double score = 0.0;  // cosine similarity, f64

    friend bool operator==(const Hit&, const Hit&) = default;
};

/// Top-k neighbors: scores non-increasing, ties by ascending item id.
struct RankedHits {
    std::vector<Hit> entries;

    std::size_t size() const noexcept { return entries.size(); }
    bool empty() const noexcept { return entries.empty(); }
    const Hit& operator[](std::size_t i) const { return entries[i]; }
    friend bool operator==(const RankedHits&, const RankedHits&) = default;
};

struct SearchOptions {
    /// Contiguous row chunks scanned concurrently; 0 means hardware
    /// concurrency. Results never depend on this value.
    std::size_t threads = 1;
};

struct IndexOptions {
    /// Libraries with at least this many rows also keep an int8 copy that
    /// prefilters searches with a per-row error bound; candidates are still
    /// rescored in f64, so results are identical either way.
    std::size_t quantize_min_rows = std::size_t{1} << 15;
};

/// Outcome of one query in a batch; exactly one of `hits` / `error` is set.
struct BatchResult {
    std::size_t position = 0;
    std::optional<RankedHits> hits;
    std::optional<Error> error;

    bool ok() const noexcept { return hits.has_value(); }
};

/// Exact cosine top-k over one immutable snapshot. Rows are the snapshot's
/// packed matrix itself, so the index holds no copy of the vectors.
class VectorIndex {
public:
    /// Throws EmptyLibrary for a snapshot with no items.
    static VectorIndex build(SnapshotPtr snapshot, const IndexOptions& options = {});

    std::uint64_t generation() const noexcept { return snapshot_->generation(); }
    std::size_t dim() const noexcept { return snapshot_->dim(); }
    std::size_t size() const noexcept { return snapshot_->size(); }
    const SnapshotPtr& snapshot() const noexcept { return snapshot_; }
    std::span<const float> row(std::size_t i) const { return snapshot_->row(i); }
    bool quantized() const noexcept { return !codes_.empty(); }
    const ItemRecord& record(std::size_t i) const { return snapshot_->record(i); }

    /// Throws DimMismatch, NotNormalized, InvalidArgument (k == 0).
    RankedHits search(const Embedding& query, std::size_t k,
                      const SearchOptions& options = {}) const;

    /// Element i equals search(queries[i], k); failures are reported per
    /// position rather than thrown.
    std::vector<BatchResult> batch_search(std::span<const Embedding> queries, std::size_t k,
                                          const SearchOptions& options = {}) const;

private:
    explicit VectorIndex(SnapshotPtr snapshot);

    void validate_query(const Embedding& query, std::size_t k) const;
    RankedHits search_unchecked(const Embedding& query, std::size_t k, std::size_t threads) const;
    void quantize();

    SnapshotPtr snapshot_;
    std::vector<double> inv_norms_;
    double max_inv_norm_dev_ = 0.0;
    // int8 prefilter: row r is approximately code_scale_[r] * codes_[r*dim..],
    // code_resid_[r] is the l2 norm of the approximation error.
    std::vector<std::int8_t, AlignedAllocator<std::int8_t>> codes_;
    std::vector<double> code_scale_;
    std::vector<double> code_resid_;
};

}  // namespace refdx
