#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include <gtest/gtest.h>

#include "refdx/library_io.hpp"
#include "support.hpp"

namespace refdx {
namespace {

using test::TempDir;

TEST(Embedding, NormalizeGivesUnitNorm) {
    const std::vector<float> raw{3.0f, 4.0f};
    const Embedding e = normalize(raw);
    EXPECT_TRUE(e.normalized());
    EXPECT_FLOAT_EQ(e[0], 0.6f);
    EXPECT_FLOAT_EQ(e[1], 0.8f);
    EXPECT_NEAR(l2_norm(e.values()), 1.0, 1e-7);
}

TEST(Embedding, RejectsBadInput) {
    EXPECT_REFDX_ERROR(normalize(std::vector<float>{0.0f, 0.0f, 0.0f}), ErrorCode::ZeroVector);
    EXPECT_REFDX_ERROR(normalize(std::vector<float>{1.0f, std::numeric_limits<float>::quiet_NaN()}),
                       ErrorCode::NonFinite);
    EXPECT_REFDX_ERROR(normalize(std::vector<float>{1.0f}), ErrorCode::InvalidArgument);
    EXPECT_REFDX_ERROR(Embedding::from_values({1.0f, 1.0f}, true), ErrorCode::NotNormalized);
    EXPECT_FALSE(Embedding::from_values({1.0f, 1.0f}, false).normalized());
}

TEST(Catalog, MapsNamesAndIds) {
    const LabelCatalog cat({"normal", "amd", "dr"});
    EXPECT_EQ(cat.size(), 3u);
    EXPECT_EQ(cat.id_of("amd"), 1);
    EXPECT_EQ(cat.name(2), "dr");
    EXPECT_FALSE(cat.find("glaucoma").has_value());
    EXPECT_REFDX_ERROR(cat.id_of("glaucoma"), ErrorCode::UnknownLabel);
    EXPECT_REFDX_ERROR(cat.name(3), ErrorCode::UnknownClassId);
    EXPECT_REFDX_ERROR(LabelCatalog({"a", "a"}), ErrorCode::InvalidArgument);
}

TEST(Snapshot, BuilderValidatesRows) {
    const LabelCatalog cat({"a", "b"});
    const auto v = normalize(std::vector<float>{1.0f, 2.0f, 2.0f});
    {
        LibrarySnapshot::Builder b(3, cat);
        b.add(ItemRecord{1, 0, Provenance::Base, "s"}, v.values());
        b.add(ItemRecord{1, 1, Provenance::Base, "s"}, v.values());
        EXPECT_REFDX_ERROR(std::move(b).build(1), ErrorCode::IdCollision);
    }
    {
        LibrarySnapshot::Builder b(3, cat);
        b.add(ItemRecord{1, 5, Provenance::Base, "s"}, v.values());
        EXPECT_REFDX_ERROR(std::move(b).build(1), ErrorCode::UnknownClassId);
    }
    LibrarySnapshot::Builder b(3, cat);
    const std::vector<float> not_unit{1.0f, 1.0f, 1.0f};
    EXPECT_REFDX_ERROR(b.add(ItemRecord{1, 0, Provenance::Base, "s"}, not_unit), ErrorCode::NotNormalized);
    const std::vector<float> wrong_dim{1.0f, 0.0f};
    EXPECT_REFDX_ERROR(b.add(ItemRecord{1, 0, Provenance::Base, "s"}, wrong_dim), ErrorCode::DimMismatch);
}

TEST(Snapshot, CountsAndLookup) {
    const auto lib = test::random_library(1, 20, 8, 3);
    EXPECT_EQ(lib->size(), 20u);
    EXPECT_EQ(lib->count(Provenance::Base), 20u);
    EXPECT_EQ(lib->count(Provenance::Local), 0u);
    EXPECT_EQ(lib->max_item_id(), ItemId{19});
    ASSERT_TRUE(lib->find(7).has_value());
    EXPECT_EQ(lib->record(*lib->find(7)).item_id, 7u);
    EXPECT_FALSE(lib->find(99).has_value());
    EXPECT_TRUE(lib->fully_labeled());
}

TEST(LibraryIo, RoundTripIsByteExact) {
    for (std::size_t dim : {2u, 8u, 512u}) {
        const auto lib = test::random_library(dim, 300, dim, 11);
        const auto bytes = encode_library(*lib);
        const auto back = decode_library(bytes);
        EXPECT_EQ(*back, *lib);
        EXPECT_EQ(encode_library(*back), bytes);

        TempDir dir;
        save_library(*lib, dir / "lib.grdl");
        const auto loaded = load_library(dir / "lib.grdl");
        save_library(*loaded, dir / "again.grdl");
        std::ifstream a(dir / "lib.grdl", std::ios::binary), b(dir / "again.grdl", std::ios::binary);
        const std::string sa((std::istreambuf_iterator<char>(a)), {});
        const std::string sb((std::istreambuf_iterator<char>(b)), {});
        EXPECT_EQ(sa, sb);
        EXPECT_EQ(sa.size(), bytes.size());
    }
}

TEST(LibraryIo, KeepsUnlabeledAndLocalItems) {
    const LabelCatalog cat({"x", "y"});
    LibrarySnapshot::Builder b(2, cat);
    b.add(ItemRecord{10, std::nullopt, Provenance::Base, "store"}, normalize(std::vector<float>{1, 0}).values());
    b.add(ItemRecord{11, 1, Provenance::Local, "site-b"}, normalize(std::vector<float>{0, 1}).values());
    const auto lib = std::move(b).build(3);
    const auto back = decode_library(encode_library(*lib), LoadOptions{false, 3});
    EXPECT_EQ(*back, *lib);
    EXPECT_FALSE(back->record(0).class_id.has_value());
    EXPECT_EQ(back->record(1).provenance, Provenance::Local);
    EXPECT_EQ(back->record(1).source_tag, "site-b");
    EXPECT_EQ(back->generation(), 3u);
}

TEST(LibraryIo, HeaderLayout) {
    const auto lib = test::random_library(2, 4, 6, 2);
    const auto bytes = encode_library(*lib);
    ASSERT_GE(bytes.size(), 18u);
    EXPECT_EQ(std::memcmp(bytes.data(), "GRDL", 4), 0);
    EXPECT_EQ(bytes[4] | (bytes[5] << 8), kLibraryFormatVersion);
    EXPECT_EQ(bytes[6], 6);
    EXPECT_EQ(bytes[10], 4);
}

TEST(LibraryIo, RejectsCorruptFiles) {
    const auto lib = test::random_library(3, 5, 4, 2);
    auto bytes = encode_library(*lib);

    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    EXPECT_REFDX_ERROR(decode_library(bad_magic), ErrorCode::BadMagic);

    auto bad_version = bytes;
    bad_version[4] = 9;
    EXPECT_REFDX_ERROR(decode_library(bad_version), ErrorCode::VersionMismatch);

    auto truncated = bytes;
    truncated.resize(bytes.size() - 3);
    EXPECT_REFDX_ERROR(decode_library(truncated), ErrorCode::CorruptRecord);

    auto trailing = bytes;
    trailing.push_back(0);
    EXPECT_REFDX_ERROR(decode_library(trailing), ErrorCode::CorruptRecord);

    EXPECT_REFDX_ERROR(load_library("/nonexistent/lib.grdl"), ErrorCode::IoFailure);
}

TEST(LibraryIo, StrictLoadRejectsDriftedNorms) {
    const auto lib = test::random_library(4, 3, 4, 2);
    auto bytes = encode_library(*lib);
    // Scale the last float of the last row; its norm drifts well past tolerance.
    float f;
    std::memcpy(&f, bytes.data() + bytes.size() - 4, 4);
    f = f * 2.0f + 0.5f;
    std::memcpy(bytes.data() + bytes.size() - 4, &f, 4);
    EXPECT_REFDX_ERROR(decode_library(bytes, LoadOptions{true, 1}), ErrorCode::NotNormalized);
    const auto fixed = decode_library(bytes);
    EXPECT_NEAR(l2_norm(fixed->row(2)), 1.0, 1e-6);
}

TEST(Manifest, ParsesAndWritesRecords) {
    std::istringstream in(
        "{\"id\": 7, \"label\": \"amd\", \"source\": \"site-a\", \"vector\": [1, 2]}\n"
        "\n"
        "{\"id\": 8, \"label\": null, \"vector\": [0.5, 0.5], \"ref\": \"img/8.png\"}\n");
    const auto recs = parse_manifest(in);
    ASSERT_EQ(recs.size(), 2u);
    EXPECT_EQ(recs[0].id, 7u);
    EXPECT_EQ(recs[0].label, "amd");
    EXPECT_EQ(recs[0].source, "site-a");
    EXPECT_FALSE(recs[1].label.has_value());
    EXPECT_EQ(recs[1].ref, "img/8.png");

    std::ostringstream out;
    write_manifest(out, recs);
    std::istringstream again(out.str());
    const auto back = parse_manifest(again);
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back[1].vector, recs[1].vector);
    EXPECT_EQ(back[1].ref, recs[1].ref);
}

TEST(Manifest, ReportsTheOffendingLine) {
    std::istringstream in("{\"id\": 1, \"label\": \"a\", \"vector\": [1, 0]}\n{\"id\": \"x\"}\n");
    try {
        parse_manifest(in);
        FAIL() << "expected MALFORMED_MANIFEST";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::MalformedManifest);
        EXPECT_EQ(e.detail(), "line 2");
    }
    std::istringstream junk("not json\n");
    EXPECT_REFDX_ERROR(parse_manifest(junk), ErrorCode::MalformedManifest);
}

TEST(Manifest, SnapshotFromManifest) {
    std::mt19937_64 gen(5);
    auto recs = test::random_records(gen, 6, 4, 3);
    const auto cat = catalog_from_manifest(recs);
    EXPECT_EQ(cat.names(), (std::vector<std::string>{"c0", "c1", "c2"}));
    const auto lib = snapshot_from_manifest(recs, cat);
    EXPECT_EQ(lib->size(), 6u);
    EXPECT_EQ(lib->record(4).class_id, 1);
    recs[2].label = "unknown";
    EXPECT_REFDX_ERROR(snapshot_from_manifest(recs, cat), ErrorCode::UnknownLabel);
    EXPECT_REFDX_ERROR(snapshot_from_manifest(std::vector<ManifestRecord>{}, cat), ErrorCode::EmptyManifest);
}

TEST(Errors, NamesAreUpperSnake) {
    EXPECT_EQ(to_string(ErrorCode::DimMismatch), "DIM_MISMATCH");
    EXPECT_EQ(to_string(ErrorCode::ThetaUnset), "THETA_UNSET");
    EXPECT_EQ(to_string(ErrorCode::NotFound), "NOT_FOUND");
}

}  // namespace
}  // namespace refdx
