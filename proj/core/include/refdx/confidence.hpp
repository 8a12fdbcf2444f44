#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "refdx/diagnosis.hpp"

namespace refdx {

/// Monte-Carlo ensemble parameters: E passes, coordinate mask rate p.
struct EnsembleSpec {
    std::size_t passes = 100;
    double mask_rate = 0.1;
    std::uint64_t seed = 0;

    /// Throws EnsembleDegenerate (passes == 0) or InvalidArgument (p outside
    /// [0, 1)).
    void validate() const;
};

inline constexpr int kMaskRetries = 8;

/// Zeroes each coordinate with probability p (seeded by `key`), rescales
/// survivors by 1/(1-p) and renormalizes. p == 0 returns `e` unchanged.
/// If every coordinate is masked the draw is repeated on the next substream;
/// AllMasked is thrown after kMaskRetries retries.
Embedding perturb(const Embedding& e, double mask_rate, std::uint64_t key);

/// Source of per-pass libraries for Monte-Carlo prediction.
class EnsembleProvider {
public:
    virtual ~EnsembleProvider() = default;
    virtual std::size_t passes() const = 0;
    /// Index for pass t, 0 <= t < passes().
    virtual const VectorIndex& pass(std::size_t t) const = 0;
};

/// Simulated dropout: pass t (1-based in the key) perturbs every reference
/// row with substream (seed, t, item_id). Holds E copies of the library.
class DropoutEnsemble final : public EnsembleProvider {
public:
    DropoutEnsemble(const SnapshotPtr& base, const EnsembleSpec& spec);

    std::size_t passes() const override { return passes_.size(); }
    const VectorIndex& pass(std::size_t t) const override { return passes_.at(t); }
    const EnsembleSpec& spec() const noexcept { return spec_; }

private:
    EnsembleSpec spec_;
    std::vector<VectorIndex> passes_;
};

/// Per-pass libraries computed elsewhere, e.g. by a stochastic encoder. All
/// passes must share dim, catalog and item ids/labels in the same order.
class PrecomputedEnsemble final : public EnsembleProvider {
public:
    explicit PrecomputedEnsemble(std::vector<SnapshotPtr> pass_libraries);

    std::size_t passes() const override { return passes_.size(); }
    const VectorIndex& pass(std::size_t t) const override { return passes_.at(t); }

private:
    std::vector<VectorIndex> passes_;
};

struct ConfidenceReport {
    ClassId final_class = 0;
    double cscore = 0.0;
    bool reliable = false;
    double theta = 0.0;
    std::map<ClassId, std::size_t> votes;

    friend bool operator==(const ConfidenceReport&, const ConfidenceReport&) = default;
};

/// One top-1 vote per pass; final class is the modal vote (ties to the lower
/// class id), cscore the modal fraction, reliable = cscore >= theta.
ConfidenceReport mc_predict(const Embedding& query, const EnsembleProvider& ensemble,
                            std::size_t k = kDefaultNeighbors, double theta = 0.0);

/// Convenience form that builds a DropoutEnsemble for this one query.
ConfidenceReport mc_predict(const Embedding& query, const SnapshotPtr& snapshot,
                            const EnsembleSpec& spec, std::size_t k = kDefaultNeighbors,
                            double theta = 0.0);

struct ScoredPrediction {
    double cscore = 0.0;
    bool correct = false;
};

struct CurvePoint {
    double theta = 0.0;
    double sensitivity = 0.0;
    double specificity = 0.0;
    double youden = 0.0;
};

struct CalibrationResult {
    double theta_star = 0.0;
    double youden_star = 0.0;
    std::vector<CurvePoint> curve;
    std::size_t positives = 0;  // correct predictions
    std::size_t negatives = 0;  // incorrect predictions
};

/// Upper sentinel threshold: flags every score in [0, 1].
inline constexpr double kThetaUpperSentinel = 1.0 + 1e-9;

/// Candidate thresholds are 0, the midpoints of consecutive distinct scores
/// and kThetaUpperSentinel. theta* is the smallest candidate maximizing
/// J = sensitivity + specificity - 1. Throws OneClassOnly, InvalidArgument
/// (score outside [0, 1]).
CalibrationResult calibrate_threshold(std::span<const ScoredPrediction> scored);

/// Midpoint used for candidate thresholds; never collapses onto `lo`.
double threshold_between(double lo, double hi) noexcept;

struct TriageResult {
    std::vector<std::size_t> retained;  // positions with cscore >= theta
    std::vector<std::size_t> flagged;
};

TriageResult apply_threshold(std::span<const ConfidenceReport> reports, double theta);

/// Fraction of each category's reports flagged at theta. Throws
/// EmptyCategory.
std::map<std::string, double> ood_detection_rate(
    const std::map<std::string, std::vector<ConfidenceReport>>& by_category, double theta);

}  // namespace refdx
