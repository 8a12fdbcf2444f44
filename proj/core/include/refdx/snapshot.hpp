#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "refdx/aligned.hpp"
#include "refdx/catalog.hpp"
#include "refdx/embedding.hpp"

namespace refdx {

using ItemId = std::uint64_t;

enum class Provenance : std::uint8_t { Base = 0, Local = 1 };

std::string_view to_string(Provenance p) noexcept;

/// Row metadata: everything about a library entry except its vector.
struct ItemRecord {
    ItemId item_id = 0;
    std::optional<ClassId> class_id;  // nullopt in unlabeled case stores
    Provenance provenance = Provenance::Base;
    std::string source_tag;

    friend bool operator==(const ItemRecord&, const ItemRecord&) = default;
};

struct ReferenceItem {
    ItemRecord record;
    Embedding embedding;
};

class LibrarySnapshot;
using SnapshotPtr = std::shared_ptr<const LibrarySnapshot>;

/// Immutable, versioned reference library. Vectors are stored as one packed
/// row-major N x dim block; any change produces a new snapshot.
class LibrarySnapshot {
public:
    class Builder {
    public:
        Builder(std::size_t dim, LabelCatalog catalog);

        Builder& reserve(std::size_t n);
        /// `vector` must already be unit-norm (NotNormalized otherwise).
        Builder& add(ItemRecord record, std::span<const float> vector);
        Builder& add(const ReferenceItem& item);
        /// Appends every row of `other` (same dim required).
        Builder& add_all(const LibrarySnapshot& other);

        std::size_t size() const noexcept { return records_.size(); }

        /// Validates id uniqueness and class ids; throws IdCollision /
        /// UnknownClassId.
        SnapshotPtr build(std::uint64_t generation) &&;

    private:
        std::size_t dim_;
        LabelCatalog catalog_;
        std::vector<ItemRecord> records_;
        PackedMatrix matrix_;
    };

    std::uint64_t generation() const noexcept { return generation_; }
    std::size_t dim() const noexcept { return dim_; }
    const LabelCatalog& catalog() const noexcept { return catalog_; }
    std::size_t size() const noexcept { return records_.size(); }
    bool empty() const noexcept { return records_.empty(); }

    const ItemRecord& record(std::size_t row) const { return records_[row]; }
    const std::vector<ItemRecord>& records() const noexcept { return records_; }
    std::span<const float> row(std::size_t i) const {
        return {matrix_.data() + i * dim_, dim_};
    }
    std::span<const float> matrix() const noexcept { return matrix_; }

    /// Materializes row `i` as a standalone item.
    ReferenceItem item(std::size_t i) const;

    std::optional<std::size_t> find(ItemId id) const;
    /// Largest item id, or nullopt for an empty library.
    std::optional<ItemId> max_item_id() const noexcept { return max_id_; }
    std::size_t count(Provenance p) const noexcept;
    bool fully_labeled() const noexcept { return unlabeled_ == 0; }

    friend bool operator==(const LibrarySnapshot& a, const LibrarySnapshot& b);

private:
    LibrarySnapshot() = default;

    std::uint64_t generation_ = 0;
    std::size_t dim_ = 0;
    LabelCatalog catalog_;
    std::vector<ItemRecord> records_;
    PackedMatrix matrix_;
    std::unordered_map<ItemId, std::size_t> row_of_;
    std::optional<ItemId> max_id_;
    std::size_t local_ = 0;
    std::size_t unlabeled_ = 0;
};

}  // namespace refdx
