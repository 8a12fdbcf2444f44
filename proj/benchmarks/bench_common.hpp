#pragma once

#include <random>
#include <vector>

#include "refdx/snapshot.hpp"

namespace refdx::bench {

inline std::vector<float> gaussian(std::mt19937_64& gen, std::size_t dim) {
    std::normal_distribution<float> d(0.0f, 1.0f);
    std::vector<float> v(dim);
    for (auto& x : v) x = d(gen);
    return v;
}

inline SnapshotPtr random_library(std::size_t n, std::size_t dim, std::size_t classes, std::uint64_t seed) {
    std::vector<std::string> names;
    for (std::size_t c = 0; c < classes; ++c) names.push_back("c" + std::to_string(c));
    LibrarySnapshot::Builder b(dim, LabelCatalog(names));
    b.reserve(n);
    std::mt19937_64 gen(seed);
    for (std::size_t i = 0; i < n; ++i) {
        b.add(ItemRecord{i, static_cast<ClassId>(i % classes), Provenance::Base, "base"},
              normalize(gaussian(gen, dim)).values());
    }
    return std::move(b).build(1);
}

}  // namespace refdx::bench
