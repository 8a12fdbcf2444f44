#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace refdx {

using ClassId = std::int32_t;

/// Ordered disease-label set. Class ids are the positions 0..C-1.
class LabelCatalog {
public:
    LabelCatalog() = default;
    /// Throws InvalidArgument on empty or duplicate names.
    explicit LabelCatalog(std::vector<std::string> names);

    std::size_t size() const noexcept { return names_.size(); }
    bool empty() const noexcept { return names_.empty(); }
    bool contains(ClassId id) const noexcept {
        return id >= 0 && static_cast<std::size_t>(id) < names_.size();
    }
    const std::string& name(ClassId id) const;
    const std::vector<std::string>& names() const noexcept { return names_; }

    std::optional<ClassId> find(std::string_view name) const;
    /// Like find() but throws UnknownLabel.
    ClassId id_of(std::string_view name) const;

    friend bool operator==(const LabelCatalog& a, const LabelCatalog& b) {
        return a.names_ == b.names_;
    }

private:
    std::vector<std::string> names_;
    std::unordered_map<std::string, ClassId> by_name_;
};

}  // namespace refdx
