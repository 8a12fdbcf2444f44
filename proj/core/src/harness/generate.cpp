#include "refdx/harness/generate.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>

#include "refdx/error.hpp"
#include "refdx/random.hpp"

namespace refdx::harness {
namespace {

constexpr int kPlacementAttempts = 10000;

double dot(const Vec& a, const Vec& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

void make_unit(Vec& v) {
    const double n = std::sqrt(dot(v, v));
    for (double& x : v) x /= n;
}

// Removes the component along unit vector `u`.
void reject(Vec& v, const Vec& u) {
    const double d = dot(v, u);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= d * u[i];
}

}  // namespace

Rng::Rng(std::uint64_t seed) : gen_(mix64(seed)) {}

Rng Rng::stream(std::uint64_t seed, std::uint64_t part) { return Rng(substream_key(seed, part, 0)); }

double Rng::uniform() { return uniform01(gen_); }

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    const double u1 = 1.0 - uniform01(gen_);
    const double u2 = uniform01(gen_);
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t Rng::below(std::size_t n) {
    // Rejection keeps the draw unbiased.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
        x = gen_();
    } while (x >= limit);
    return static_cast<std::size_t>(x % n);
}

Vec Rng::normal_vector(std::size_t dim) {
    Vec v(dim);
    for (double& x : v) x = normal();
    return v;
}

void ClusterSpec::validate() const {
    auto bad = [](const std::string& m) { throw Error(ErrorCode::InvalidArgument, m); };
    if (n_classes < 1) bad("n_classes must be >= 1");
    if (dim < 2) bad("dim must be >= 2");
    if (!(sigma > 0.0)) bad("sigma must be > 0");
    if (!(cone_angle > 0.0 && cone_angle < std::numbers::pi / 2)) bad("cone_angle must be in (0, pi/2)");
    if (!class_names.empty() && class_names.size() != n_classes) {
        bad("class_names must list one name per class");
    }
}

LabelCatalog ClusterSpec::catalog() const {
    if (!class_names.empty()) return LabelCatalog(class_names);
    std::vector<std::string> names;
    for (std::size_t c = 0; c < n_classes; ++c) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "class_%02zu", c);
        names.emplace_back(buf);
    }
    return LabelCatalog(std::move(names));
}

std::vector<Vec> place_centroids(Rng& rng, std::size_t n, std::size_t dim, double cone_angle,
                                 double min_angle_deg, std::size_t extra) {
    Vec anchor = rng.normal_vector(dim);
    make_unit(anchor);
    const double ca = std::cos(cone_angle), sa = std::sin(cone_angle);
    const double max_cos = std::cos(min_angle_deg * std::numbers::pi / 180.0);

    std::vector<Vec> dirs;  // orthonormal basis of the in-distribution directions
    std::vector<Vec> out;
    for (std::size_t j = 0; j < n + extra; ++j) {
        bool placed = false;
        for (int attempt = 0; attempt < kPlacementAttempts && !placed; ++attempt) {
            Vec u = rng.normal_vector(dim);
            reject(u, anchor);
            if (j >= n) {
                // Orthogonal to the span of every in-distribution direction.
                for (const Vec& q : dirs) reject(u, q);
            }
            const double norm = std::sqrt(dot(u, u));
            if (norm < 1e-9) continue;
            for (double& x : u) x /= norm;
            Vec c(dim);
            for (std::size_t i = 0; i < dim; ++i) c[i] = ca * anchor[i] + sa * u[i];
            bool ok = true;
            for (const Vec& o : out) {
                if (dot(c, o) > max_cos) {
                    ok = false;
                    break;
                }
            }
            if (!ok) continue;
            out.push_back(std::move(c));
            if (j < n) {
                Vec q = u;
                for (const Vec& b : dirs) reject(q, b);
                const double qn = std::sqrt(dot(q, q));
                if (qn > 1e-9) {
                    for (double& x : q) x /= qn;
                    dirs.push_back(std::move(q));
                }
            }
            placed = true;
        }
        if (!placed) {
            throw Error(ErrorCode::CentroidPlacementFailed,
                        "could not place centroid " + std::to_string(j) + " after " +
                            std::to_string(kPlacementAttempts) + " attempts",
                        std::to_string(j));
        }
    }
    return out;
}

std::vector<float> sample_point(Rng& rng, const Vec& centroid, double sigma, const Vec* offset) {
    const std::size_t dim = centroid.size();
    const double sd = sigma / std::sqrt(static_cast<double>(dim));
    Vec x(dim);
    for (std::size_t i = 0; i < dim; ++i) {
        x[i] = centroid[i] + sd * rng.normal() + (offset ? (*offset)[i] : 0.0);
    }
    make_unit(x);
    return std::vector<float>(x.begin(), x.end());
}

Vec class_subspace_direction(Rng& rng, const std::vector<Vec>& centroids) {
    const std::size_t dim = centroids.front().size();
    Vec mean(dim, 0.0);
    for (const Vec& c : centroids) {
        for (std::size_t i = 0; i < dim; ++i) mean[i] += c[i] / static_cast<double>(centroids.size());
    }
    Vec d(dim, 0.0);
    for (const Vec& c : centroids) {
        const double w = rng.normal();
        for (std::size_t i = 0; i < dim; ++i) d[i] += w * (c[i] - mean[i]);
    }
    make_unit(d);
    return d;
}

double distance(const Vec& a, const Vec& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

std::vector<ManifestRecord> sample_records(Rng& rng, const Vec& centroid, std::size_t count,
                                           double sigma, std::uint64_t first_id,
                                           const std::optional<std::string>& label,
                                           const std::string& source, const Vec* offset) {
    std::vector<ManifestRecord> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        ManifestRecord r;
        r.id = first_id + i;
        r.label = label;
        r.source = source;
        r.vector = sample_point(rng, centroid, sigma, offset);
        out.push_back(std::move(r));
    }
    return out;
}

ClusterSet gen_clusters(const ClusterSpec& spec) {
    spec.validate();
    ClusterSet set;
    set.catalog = spec.catalog();
    Rng placement = Rng::stream(spec.seed, 1);
    set.centroids = place_centroids(placement, spec.n_classes, spec.dim, spec.cone_angle,
                                    spec.min_angle_deg);
    Rng ref_rng = Rng::stream(spec.seed, 2);
    Rng query_rng = Rng::stream(spec.seed, 3);
    std::uint64_t next_id = 0;
    for (std::size_t c = 0; c < spec.n_classes; ++c) {
        auto recs = sample_records(ref_rng, set.centroids[c], spec.ref_per_class, spec.sigma,
                                   next_id, set.catalog.name(static_cast<ClassId>(c)), "reference");
        next_id += recs.size();
        for (auto& r : recs) set.reference.push_back(std::move(r));
    }
    for (std::size_t c = 0; c < spec.n_classes; ++c) {
        auto recs = sample_records(query_rng, set.centroids[c], spec.query_per_class, spec.sigma,
                                   next_id, set.catalog.name(static_cast<ClassId>(c)), "query");
        next_id += recs.size();
        for (auto& r : recs) {
            set.query_truths.push_back(static_cast<ClassId>(c));
            set.queries.push_back(std::move(r));
        }
    }
    return set;
}

}  // namespace refdx::harness
