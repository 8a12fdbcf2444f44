#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "refdx/snapshot.hpp"

namespace refdx {

/// Binary library layout (little-endian):
///   "GRDL" | u16 version=1 | u32 dim | u64 count
///   catalog: u32 n, then per class u16 id, u16 len, UTF-8 name
///   items:   u64 id, i32 class (-1 unlabeled), u8 provenance,
///            u16 len + UTF-8 source tag, dim x f32
inline constexpr std::uint16_t kLibraryFormatVersion = 1;

struct LoadOptions {
    /// Reject (instead of renormalizing) vectors whose norm drifted past
    /// kNormTolerance.
    bool strict = false;
    /// The file carries no generation; the loaded snapshot gets this one.
    std::uint64_t generation = 1;
};

std::vector<std::uint8_t> encode_library(const LibrarySnapshot& snapshot);
SnapshotPtr decode_library(std::span<const std::uint8_t> bytes, const LoadOptions& options = {});

SnapshotPtr load_library(const std::filesystem::path& path, const LoadOptions& options = {});
void save_library(const LibrarySnapshot& snapshot, const std::filesystem::path& path);

/// One line of a JSON-lines manifest:
///   {"id": 7, "label": "amd" | null, "source": "site-a", "vector": [...]}
/// `ref` is an optional opaque external reference used by case stores.
struct ManifestRecord {
    std::uint64_t id = 0;
    std::optional<std::string> label;
    std::string source;
    std::vector<float> vector;
    std::optional<std::string> ref;
};

std::vector<ManifestRecord> parse_manifest(std::istream& in);
std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path);
void write_manifest(std::ostream& out, std::span<const ManifestRecord> records);
void write_manifest(const std::filesystem::path& path, std::span<const ManifestRecord> records);

/// Catalog made of the manifest's distinct labels in first-appearance order.
LabelCatalog catalog_from_manifest(std::span<const ManifestRecord> records);

/// Normalizes each vector and maps labels through `catalog` (UnknownLabel on
/// a miss). Every item gets `provenance`; manifest ids are kept.
SnapshotPtr snapshot_from_manifest(std::span<const ManifestRecord> records,
                                   const LabelCatalog& catalog, std::uint64_t generation = 1,
                                   Provenance provenance = Provenance::Base);

}  // namespace refdx
