#include "refdx/catalog.hpp"

#include "refdx/error.hpp"

namespace refdx {

LabelCatalog::LabelCatalog(std::vector<std::string> names) : names_(std::move(names)) {
    by_name_.reserve(names_.size());
    for (std::size_t i = 0; i < names_.size(); ++i) {
        if (names_[i].empty()) {
            throw Error(ErrorCode::InvalidArgument, "catalog entry " + std::to_string(i) +
                                                        " has an empty name");
        }
        if (!by_name_.emplace(names_[i], static_cast<ClassId>(i)).second) {
            throw Error(ErrorCode::InvalidArgument, "duplicate catalog name '" + names_[i] + "'");
        }
    }
}

const std::string& LabelCatalog::name(ClassId id) const {
    if (!contains(id)) {
        throw Error(ErrorCode::UnknownClassId, "class id " + std::to_string(id) +
                                                   " not in a catalog of " +
                                                   std::to_string(names_.size()) + " classes");
    }
    return names_[static_cast<std::size_t>(id)];
}

std::optional<ClassId> LabelCatalog::find(std::string_view name) const {
    auto it = by_name_.find(std::string(name));
    if (it == by_name_.end()) return std::nullopt;
    return it->second;
}

ClassId LabelCatalog::id_of(std::string_view name) const {
    if (auto id = find(name)) return *id;
    throw Error(ErrorCode::UnknownLabel, "label '" + std::string(name) + "' is not in the catalog",
                std::string(name));
}

}  // namespace refdx
