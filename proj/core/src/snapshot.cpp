#include "refdx/snapshot.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "refdx/error.hpp"

namespace refdx {

std::string_view to_string(Provenance p) noexcept {
    return p == Provenance::Local ? "LOCAL" : "BASE";
}

LibrarySnapshot::Builder::Builder(std::size_t dim, LabelCatalog catalog)
    : dim_(dim), catalog_(std::move(catalog)) {
    if (dim_ < 2) {
        throw Error(ErrorCode::InvalidArgument, "library dim must be >= 2, got " +
                                                    std::to_string(dim_));
    }
}

LibrarySnapshot::Builder& LibrarySnapshot::Builder::reserve(std::size_t n) {
    records_.reserve(n);
    matrix_.reserve(n * dim_);
    return *this;
}

LibrarySnapshot::Builder& LibrarySnapshot::Builder::add(ItemRecord record,
                                                        std::span<const float> vector) {
    if (vector.size() != dim_) {
        throw Error(ErrorCode::DimMismatch, "item " + std::to_string(record.item_id) + " has dim " +
                                                std::to_string(vector.size()) + ", library dim is " +
                                                std::to_string(dim_));
    }
    for (float x : vector) {
        if (!std::isfinite(x)) {
            throw Error(ErrorCode::NonFinite,
                        "item " + std::to_string(record.item_id) + " has a non-finite entry");
        }
    }
    const double norm = l2_norm(vector);
    if (std::abs(norm - 1.0) > kNormTolerance) {
        throw Error(ErrorCode::NotNormalized, "item " + std::to_string(record.item_id) +
                                                  " is not unit-norm (" + std::to_string(norm) +
                                                  ")");
    }
    records_.push_back(std::move(record));
    matrix_.insert(matrix_.end(), vector.begin(), vector.end());
    return *this;
}

LibrarySnapshot::Builder& LibrarySnapshot::Builder::add(const ReferenceItem& item) {
    if (!item.embedding.normalized()) {
        throw Error(ErrorCode::NotNormalized,
                    "item " + std::to_string(item.record.item_id) + " is not normalized");
    }
    return add(item.record, item.embedding.values());
}

LibrarySnapshot::Builder& LibrarySnapshot::Builder::add_all(const LibrarySnapshot& other) {
    if (other.dim() != dim_) {
        throw Error(ErrorCode::DimMismatch, "cannot combine dim " + std::to_string(other.dim()) +
                                                " rows into a dim " + std::to_string(dim_) +
                                                " library");
    }
    records_.insert(records_.end(), other.records_.begin(), other.records_.end());
    matrix_.insert(matrix_.end(), other.matrix_.begin(), other.matrix_.end());
    return *this;
}

SnapshotPtr LibrarySnapshot::Builder::build(std::uint64_t generation) && {
    std::shared_ptr<LibrarySnapshot> snap(new LibrarySnapshot());
    snap->generation_ = generation;
    snap->dim_ = dim_;
    snap->row_of_.reserve(records_.size());
    for (std::size_t i = 0; i < records_.size(); ++i) {
        const ItemRecord& r = records_[i];
        if (r.class_id && !catalog_.contains(*r.class_id)) {
            throw Error(ErrorCode::UnknownClassId,
                        "item " + std::to_string(r.item_id) + " cites class id " +
                            std::to_string(*r.class_id) + " outside a " +
                            std::to_string(catalog_.size()) + "-class catalog");
        }
        if (!snap->row_of_.emplace(r.item_id, i).second) {
            throw Error(ErrorCode::IdCollision,
                        "duplicate item id " + std::to_string(r.item_id),
                        std::to_string(r.item_id));
        }
        snap->max_id_ = snap->max_id_ ? std::max(*snap->max_id_, r.item_id) : r.item_id;
        if (r.provenance == Provenance::Local) ++snap->local_;
        if (!r.class_id) ++snap->unlabeled_;
    }
    snap->catalog_ = std::move(catalog_);
    snap->records_ = std::move(records_);
    snap->matrix_ = std::move(matrix_);
    return snap;
}

ReferenceItem LibrarySnapshot::item(std::size_t i) const {
    auto r = row(i);
    return ReferenceItem{records_[i],
                         Embedding::from_values(std::vector<float>(r.begin(), r.end()), true)};
}

std::optional<std::size_t> LibrarySnapshot::find(ItemId id) const {
    auto it = row_of_.find(id);
    if (it == row_of_.end()) return std::nullopt;
    return it->second;
}

std::size_t LibrarySnapshot::count(Provenance p) const noexcept {
    return p == Provenance::Local ? local_ : records_.size() - local_;
}

bool operator==(const LibrarySnapshot& a, const LibrarySnapshot& b) {
    if (a.generation_ != b.generation_ || a.dim_ != b.dim_ || !(a.catalog_ == b.catalog_) ||
        a.records_ != b.records_ || a.matrix_.size() != b.matrix_.size()) {
        return false;
    }
    if (a.matrix_.empty()) return true;
    // Bitwise payload comparison so -0.0f and 0.0f are told apart.
    return std::memcmp(a.matrix_.data(), b.matrix_.data(), a.matrix_.size() * sizeof(float)) == 0;
}

}  // namespace refdx
