#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "refdx/error.hpp"
#include "refdx/library_io.hpp"

// Statement must throw refdx::Error carrying `code`.
#define EXPECT_REFDX_ERROR(statement, expected)                                    \
    do {                                                                          \
        try {                                                                     \
            statement;                                                            \
            ADD_FAILURE() << "expected " << ::refdx::to_string(expected);         \
        } catch (const ::refdx::Error& e_) {                                      \
            EXPECT_EQ(::refdx::to_string(e_.code()), ::refdx::to_string(expected)) \
                << e_.what();                                                     \
        }                                                                         \
    } while (0)

namespace refdx::test {

inline std::vector<float> gaussian(std::mt19937_64& gen, std::size_t dim) {
    std::normal_distribution<float> d(0.0f, 1.0f);
    std::vector<float> v(dim);
    for (auto& x : v) x = d(gen);
    return v;
}

inline LabelCatalog numbered_catalog(std::size_t classes) {
    std::vector<std::string> names;
    for (std::size_t c = 0; c < classes; ++c) names.push_back("c" + std::to_string(c));
    return LabelCatalog(names);
}

/// n random unit rows, round-robin labels, ids 0..n-1 unless `first_id`.
inline std::vector<ManifestRecord> random_records(std::mt19937_64& gen, std::size_t n, std::size_t dim,
                                                  std::size_t classes, std::uint64_t first_id = 0,
                                                  const std::string& source = "base") {
    std::vector<ManifestRecord> out;
    for (std::size_t i = 0; i < n; ++i) {
        ManifestRecord r;
        r.id = first_id + i;
        r.label = "c" + std::to_string(i % classes);
        r.source = source;
        r.vector = gaussian(gen, dim);
        out.push_back(std::move(r));
    }
    return out;
}

inline SnapshotPtr random_library(std::uint64_t seed, std::size_t n, std::size_t dim, std::size_t classes) {
    std::mt19937_64 gen(seed);
    return snapshot_from_manifest(random_records(gen, n, dim, classes), numbered_catalog(classes));
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    TempDir() {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() /
                ("refdx-test-" + std::to_string(rd()) + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

}  // namespace refdx::test
