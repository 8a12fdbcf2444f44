#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "refdx/diagnosis.hpp"
#include "refdx/library_io.hpp"

namespace refdx {

struct SiteInfo {
    std::size_t local_items = 0;
    std::string source_tag;
    std::uint64_t last_merge_generation = 0;

    friend bool operator==(const SiteInfo&, const SiteInfo&) = default;
};

/// Bookkeeping of which sites contributed LOCAL items to a library.
class SiteRegistry {
public:
    /// One entry per distinct LOCAL source tag; the merge generation is the
    /// snapshot's own generation.
    static SiteRegistry from_snapshot(const LibrarySnapshot& snapshot);

    void record_merge(const std::string& site_id, std::size_t added, std::uint64_t generation);

    const std::map<std::string, SiteInfo>& sites() const noexcept { return sites_; }
    /// Counts match the LOCAL items carrying each site's tag.
    bool consistent_with(const LibrarySnapshot& snapshot) const;

private:
    std::map<std::string, SiteInfo> sites_;
};

/// Turns site manifest records into LOCAL items: vectors normalized, labels
/// mapped through base's catalog, ids allocated above base's largest id in
/// manifest order. Throws EmptyManifest, UnknownLabel, DimMismatch.
std::vector<ReferenceItem> ingest_local(std::span<const ManifestRecord> records,
                                        const LibrarySnapshot& base, std::string_view site_id);
std::vector<ReferenceItem> ingest_local(const std::filesystem::path& manifest,
                                        const LibrarySnapshot& base, std::string_view site_id);

/// New snapshot (generation + 1) holding base rows followed by `local`.
/// `base` is never modified. Throws IdCollision, DimMismatch.
SnapshotPtr merge(const LibrarySnapshot& base, std::span<const ReferenceItem> local);

struct BeforeAfter {
    MetricsReport before;
    MetricsReport after;
};

/// Evaluates identical queries against both indices. Throws DimMismatch or
/// InvalidArgument when the indices disagree on dim or catalog.
BeforeAfter compare_before_after(const VectorIndex& base_index, const VectorIndex& merged_index,
                                 std::span<const Embedding> queries,
                                 std::span<const ClassId> truths, std::span<const std::size_t> ks,
                                 std::size_t k = kDefaultNeighbors, std::size_t n = kDefaultTopN);

}  // namespace refdx
