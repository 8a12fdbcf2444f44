#include "refdx/augment.hpp"

namespace refdx {

SiteRegistry SiteRegistry::from_snapshot(const LibrarySnapshot& snapshot) {
    SiteRegistry reg;
    for (const auto& r : snapshot.records()) {
        if (r.provenance != Provenance::Local) continue;
        auto& info = reg.sites_[r.source_tag];
        info.source_tag = r.source_tag;
        info.last_merge_generation = snapshot.generation();
        ++info.local_items;
    }
    return reg;
}

void SiteRegistry::record_merge(const std::string& site_id, std::size_t added,
                                std::uint64_t generation) {
    auto& info = sites_[site_id];
    info.source_tag = site_id;
    info.local_items += added;
    info.last_merge_generation = generation;
}

bool SiteRegistry::consistent_with(const LibrarySnapshot& snapshot) const {
    std::map<std::string, std::size_t> counts;
    for (const auto& r : snapshot.records()) {
        if (r.provenance == Provenance::Local) ++counts[r.source_tag];
    }
    std::size_t nonzero = 0;
    for (const auto& [site, info] : sites_) {
        auto it = counts.find(info.source_tag);
        const std::size_t have = it == counts.end() ? 0 : it->second;
        if (have != info.local_items) return false;
        if (info.local_items > 0) ++nonzero;
    }
    return nonzero == counts.size();
}

std::vector<ReferenceItem> ingest_local(std::span<const ManifestRecord> records,
                                        const LibrarySnapshot& base, std::string_view site_id) {
    if (records.empty()) throw Error(ErrorCode::EmptyManifest, "local manifest has no records");
    ItemId next = base.max_item_id() ? *base.max_item_id() + 1 : 0;
    std::vector<ReferenceItem> items;
    items.reserve(records.size());
    for (const auto& rec : records) {
        if (!rec.label) {
            throw Error(ErrorCode::UnknownLabel,
                        "local record " + std::to_string(rec.id) + " has no label");
        }
        if (rec.vector.size() != base.dim()) {
            throw Error(ErrorCode::DimMismatch,
                        "local record " + std::to_string(rec.id) + " has dim " +
                            std::to_string(rec.vector.size()) + ", library dim is " +
                            std::to_string(base.dim()));
        }
        ReferenceItem item;
        item.record.item_id = next++;
        item.record.class_id = base.catalog().id_of(*rec.label);
        item.record.provenance = Provenance::Local;
        item.record.source_tag = std::string(site_id);
        item.embedding = normalize(rec.vector);
        items.push_back(std::move(item));
    }
    return items;
}

std::vector<ReferenceItem> ingest_local(const std::filesystem::path& manifest,
                                        const LibrarySnapshot& base, std::string_view site_id) {
    const auto records = read_manifest(manifest);
    return ingest_local(records, base, site_id);
}

SnapshotPtr merge(const LibrarySnapshot& base, std::span<const ReferenceItem> local) {
    LibrarySnapshot::Builder builder(base.dim(), base.catalog());
    builder.reserve(base.size() + local.size());
    builder.add_all(base);
    for (const auto& item : local) {
        if (base.find(item.record.item_id)) {
            throw Error(ErrorCode::IdCollision,
                        "local item id " + std::to_string(item.record.item_id) +
                            " already exists in the base library",
                        std::to_string(item.record.item_id));
        }
        builder.add(item);
    }
    return std::move(builder).build(base.generation() + 1);
}

BeforeAfter compare_before_after(const VectorIndex& base_index, const VectorIndex& merged_index,
                                 std::span<const Embedding> queries,
                                 std::span<const ClassId> truths, std::span<const std::size_t> ks,
                                 std::size_t k, std::size_t n) {
    if (base_index.dim() != merged_index.dim()) {
        throw Error(ErrorCode::DimMismatch, "indices differ in dim");
    }
    const auto& catalog = base_index.snapshot()->catalog();
    if (!(catalog == merged_index.snapshot()->catalog())) {
        throw Error(ErrorCode::InvalidArgument, "indices use different catalogs");
    }
    std::vector<Prediction> before, after;
    before.reserve(queries.size());
    after.reserve(queries.size());
    for (const auto& q : queries) {
        before.push_back(predict(q, base_index, k, n));
        after.push_back(predict(q, merged_index, k, n));
    }
    return {evaluate(before, truths, ks, catalog.size()),
            evaluate(after, truths, ks, catalog.size())};
}

}  // namespace refdx
