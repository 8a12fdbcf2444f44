#include "refdx/library_io.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <nlohmann/json.hpp>
#include <sstream>

#include "refdx/error.hpp"

namespace refdx {
namespace {

constexpr char kMagic[4] = {'G', 'R', 'D', 'L'};

class Writer {
public:
    void bytes(const void* p, std::size_t n) {
        auto b = static_cast<const std::uint8_t*>(p);
        out_.insert(out_.end(), b, b + n);
    }
    template <typename T>
    void le(T value) {
        using U = std::make_unsigned_t<T>;
        auto u = static_cast<U>(value);
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            out_.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
        }
    }
    void f32(float v) { le(std::bit_cast<std::uint32_t>(v)); }
    void str16(const std::string& s) {
        if (s.size() > 0xFFFF) {
            throw Error(ErrorCode::InvalidArgument, "string longer than 65535 bytes");
        }
        le(static_cast<std::uint16_t>(s.size()));
        bytes(s.data(), s.size());
    }
    std::vector<std::uint8_t> take() { return std::move(out_); }
    void reserve(std::size_t n) { out_.reserve(n); }

private:
    std::vector<std::uint8_t> out_;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

    void need(std::size_t n, const char* what) const {
        if (in_.size() - pos_ < n) {
            throw Error(ErrorCode::CorruptRecord,
                        std::string("library truncated while reading ") + what,
                        "offset " + std::to_string(pos_));
        }
    }
    template <typename T>
    T le(const char* what) {
        need(sizeof(T), what);
        std::make_unsigned_t<T> u = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            u |= static_cast<std::make_unsigned_t<T>>(in_[pos_ + i]) << (8 * i);
        }
        pos_ += sizeof(T);
        return static_cast<T>(u);
    }
    float f32(const char* what) { return std::bit_cast<float>(le<std::uint32_t>(what)); }
    std::string str16(const char* what) {
        const auto len = le<std::uint16_t>(what);
        need(len, what);
        std::string s(reinterpret_cast<const char*>(in_.data() + pos_), len);
        pos_ += len;
        return s;
    }
    std::span<const std::uint8_t> take(std::size_t n, const char* what) {
        need(n, what);
        auto s = in_.subspan(pos_, n);
        pos_ += n;
        return s;
    }
    bool done() const noexcept { return pos_ == in_.size(); }
    std::size_t pos() const noexcept { return pos_; }

private:
    std::span<const std::uint8_t> in_;
    std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_library(const LibrarySnapshot& snapshot) {
    Writer w;
    w.reserve(32 + snapshot.size() * (16 + snapshot.dim() * 4));
    w.bytes(kMagic, 4);
    w.le(kLibraryFormatVersion);
    w.le(static_cast<std::uint32_t>(snapshot.dim()));
    w.le(static_cast<std::uint64_t>(snapshot.size()));

    const auto& names = snapshot.catalog().names();
    w.le(static_cast<std::uint32_t>(names.size()));
    for (std::size_t c = 0; c < names.size(); ++c) {
        w.le(static_cast<std::uint16_t>(c));
        w.str16(names[c]);
    }
    for (std::size_t i = 0; i < snapshot.size(); ++i) {
        const ItemRecord& r = snapshot.record(i);
        w.le(r.item_id);
        w.le(static_cast<std::int32_t>(r.class_id.value_or(-1)));
        w.le(static_cast<std::uint8_t>(r.provenance));
        w.str16(r.source_tag);
        for (float x : snapshot.row(i)) w.f32(x);
    }
    return w.take();
}

SnapshotPtr decode_library(std::span<const std::uint8_t> bytes, const LoadOptions& options) {
    Reader r(bytes);
    auto magic = r.take(4, "magic");
    if (!std::equal(magic.begin(), magic.end(), std::begin(kMagic))) {
        throw Error(ErrorCode::BadMagic, "not a library file (bad magic)");
    }
    const auto version = r.le<std::uint16_t>("version");
    if (version != kLibraryFormatVersion) {
        throw Error(ErrorCode::VersionMismatch,
                    "unsupported library format version " + std::to_string(version));
    }
    const auto dim = r.le<std::uint32_t>("dim");
    const auto count = r.le<std::uint64_t>("item count");
    if (dim < 2) {
        throw Error(ErrorCode::DimMismatch, "library declares dim " + std::to_string(dim));
    }

    const auto n_classes = r.le<std::uint32_t>("catalog size");
    std::vector<std::string> names;
    names.reserve(n_classes);
    for (std::uint32_t c = 0; c < n_classes; ++c) {
        const auto id = r.le<std::uint16_t>("class id");
        if (id != c) {
            throw Error(ErrorCode::CorruptRecord, "catalog ids are not contiguous",
                        "expected " + std::to_string(c) + ", found " + std::to_string(id));
        }
        names.push_back(r.str16("class name"));
    }
    LabelCatalog catalog(std::move(names));

    // Every item needs at least 15 header bytes plus its payload.
    const std::size_t min_item = 15 + std::size_t{dim} * 4;
    if (count > (bytes.size() - r.pos()) / min_item) {
        throw Error(ErrorCode::CorruptRecord, "item count exceeds file size",
                    std::to_string(count) + " items declared");
    }

    LibrarySnapshot::Builder builder(dim, catalog);
    builder.reserve(count);
    std::vector<float> vec(dim);
    for (std::uint64_t i = 0; i < count; ++i) {
        ItemRecord rec;
        rec.item_id = r.le<std::uint64_t>("item id");
        const auto cls = r.le<std::int32_t>("class id");
        if (cls < -1) {
            throw Error(ErrorCode::CorruptRecord, "invalid class id " + std::to_string(cls));
        }
        if (cls >= 0) {
            if (!catalog.contains(cls)) {
                throw Error(ErrorCode::UnknownClassId,
                            "item " + std::to_string(rec.item_id) + " cites class id " +
                                std::to_string(cls) + " outside a " +
                                std::to_string(catalog.size()) + "-class catalog");
            }
            rec.class_id = cls;
        }
        const auto prov = r.le<std::uint8_t>("provenance");
        if (prov > 1) {
            throw Error(ErrorCode::CorruptRecord, "invalid provenance " + std::to_string(prov));
        }
        rec.provenance = static_cast<Provenance>(prov);
        rec.source_tag = r.str16("source tag");
        r.need(std::size_t{dim} * 4, "vector payload");
        for (auto& x : vec) x = r.f32("vector payload");

        const double norm = l2_norm(vec);
        if (!std::isfinite(norm)) {
            throw Error(ErrorCode::CorruptRecord,
                        "item " + std::to_string(rec.item_id) + " has non-finite payload");
        }
        if (std::abs(norm - 1.0) > kNormTolerance) {
            if (options.strict) {
                throw Error(ErrorCode::NotNormalized, "item " + std::to_string(rec.item_id) +
                                                          " drifted to norm " +
                                                          std::to_string(norm));
            }
            const Embedding fixed = normalize(vec);
            builder.add(std::move(rec), fixed.values());
        } else {
            builder.add(std::move(rec), vec);
        }
    }
    if (!r.done()) {
        throw Error(ErrorCode::CorruptRecord, "trailing bytes after last item",
                    "offset " + std::to_string(r.pos()));
    }
    return std::move(builder).build(options.generation);
}

SnapshotPtr load_library(const std::filesystem::path& path, const LoadOptions& options) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoFailure, "cannot open library " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return decode_library(bytes, options);
}

void save_library(const LibrarySnapshot& snapshot, const std::filesystem::path& path) {
    const auto bytes = encode_library(snapshot);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoFailure, "cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::IoFailure, "write failed for " + path.string());
}

std::vector<ManifestRecord> parse_manifest(std::istream& in) {
    std::vector<ManifestRecord> records;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = "line " + std::to_string(line_no);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw Error(ErrorCode::MalformedManifest, std::string("invalid JSON: ") + e.what(),
                        where);
        }
        try {
            ManifestRecord rec;
            rec.id = j.at("id").get<std::uint64_t>();
            const auto& label = j.at("label");
            if (!label.is_null()) rec.label = label.get<std::string>();
            if (auto it = j.find("source"); it != j.end() && !it->is_null()) {
                rec.source = it->get<std::string>();
            }
            rec.vector = j.at("vector").get<std::vector<float>>();
            if (auto it = j.find("ref"); it != j.end() && !it->is_null()) {
                rec.ref = it->get<std::string>();
            }
            records.push_back(std::move(rec));
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorCode::MalformedManifest,
                        std::string("manifest record has missing or mistyped fields: ") + e.what(),
                        where);
        }
    }
    return records;
}

std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoFailure, "cannot open manifest " + path.string());
    return parse_manifest(in);
}

void write_manifest(std::ostream& out, std::span<const ManifestRecord> records) {
    for (const auto& rec : records) {
        nlohmann::json j;
        j["id"] = rec.id;
        j["label"] = rec.label ? nlohmann::json(*rec.label) : nlohmann::json(nullptr);
        j["source"] = rec.source;
        j["vector"] = rec.vector;
        if (rec.ref) j["ref"] = *rec.ref;
        out << j.dump() << '\n';
    }
}

void write_manifest(const std::filesystem::path& path, std::span<const ManifestRecord> records) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoFailure, "cannot open " + path.string() + " for writing");
    write_manifest(out, records);
    if (!out) throw Error(ErrorCode::IoFailure, "write failed for " + path.string());
}

LabelCatalog catalog_from_manifest(std::span<const ManifestRecord> records) {
    std::vector<std::string> names;
    for (const auto& rec : records) {
        if (rec.label && std::find(names.begin(), names.end(), *rec.label) == names.end()) {
            names.push_back(*rec.label);
        }
    }
    return LabelCatalog(std::move(names));
}

SnapshotPtr snapshot_from_manifest(std::span<const ManifestRecord> records,
                                   const LabelCatalog& catalog, std::uint64_t generation,
                                   Provenance provenance) {
    if (records.empty()) throw Error(ErrorCode::EmptyManifest, "manifest has no records");
    LibrarySnapshot::Builder builder(records.front().vector.size(), catalog);
    builder.reserve(records.size());
    for (const auto& rec : records) {
        ItemRecord item;
        item.item_id = rec.id;
        if (rec.label) item.class_id = catalog.id_of(*rec.label);
        item.provenance = provenance;
        item.source_tag = rec.source;
        const Embedding e = normalize(rec.vector);
        builder.add(std::move(item), e.values());
    }
    return std::move(builder).build(generation);
}

}  // namespace refdx
