#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "refdx/catalog.hpp"
#include "refdx/library_io.hpp"

namespace refdx::harness {

/// Seeded generator with a hand-rolled normal sampler, so synthetic data is
/// identical across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed);
    /// Independent generator for a named part of an experiment.
    static Rng stream(std::uint64_t seed, std::uint64_t part);

    double uniform();
    double normal();
    /// Uniform integer in [0, n).
    std::size_t below(std::size_t n);
    std::vector<double> normal_vector(std::size_t dim);

private:
    std::mt19937_64 gen_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

struct ClusterSpec {
    std::size_t n_classes = 11;
    std::size_t ref_per_class = 200;
    std::size_t query_per_class = 50;
    std::size_t dim = 512;
    /// RMS norm of the additive Gaussian noise (per-coordinate sd sigma/sqrt(dim)).
    double sigma = 0.05;
    /// Centroids sit on a cone of this half-angle (radians) around a random
    /// anchor, so classes share a common component like real image features.
    double cone_angle = 0.3;
    double min_angle_deg = 5.0;
    std::uint64_t seed = 0;
    /// Empty means class_00, class_01, ...
    std::vector<std::string> class_names;

    /// Throws InvalidArgument.
    void validate() const;
    LabelCatalog catalog() const;
};

using Vec = std::vector<double>;

/// Places `n` centroids on the cone with pairwise angle >= min_angle_deg, then
/// `extra` more whose cone directions are orthogonal to those of the first
/// `n` (equidistant from every one of them). Throws CentroidPlacementFailed.
std::vector<Vec> place_centroids(Rng& rng, std::size_t n, std::size_t dim, double cone_angle,
                                 double min_angle_deg, std::size_t extra = 0);

/// unit(centroid + sigma/sqrt(dim) * N(0, I) + offset)
std::vector<float> sample_point(Rng& rng, const Vec& centroid, double sigma,
                                const Vec* offset = nullptr);

/// Unit vector in the span of the centered centroids, random weights.
Vec class_subspace_direction(Rng& rng, const std::vector<Vec>& centroids);

double distance(const Vec& a, const Vec& b);

struct ClusterSet {
    LabelCatalog catalog;
    std::vector<Vec> centroids;
    std::vector<ManifestRecord> reference;
    /// Labels carry the ground truth.
    std::vector<ManifestRecord> queries;
    std::vector<ClassId> query_truths;
};

/// Reference ids start at 0, query ids continue after them. Fully determined
/// by spec.seed.
ClusterSet gen_clusters(const ClusterSpec& spec);

/// Points around `centroid`, ids from `first_id`, labelled `label`.
std::vector<ManifestRecord> sample_records(Rng& rng, const Vec& centroid, std::size_t count,
                                           double sigma, std::uint64_t first_id,
                                           const std::optional<std::string>& label,
                                           const std::string& source, const Vec* offset = nullptr);

}  // namespace refdx::harness
