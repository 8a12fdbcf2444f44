#include "refdx/confidence.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "refdx/random.hpp"

namespace refdx {
namespace {

// Writes the perturbed, renormalized copy of `in` into `out`. Returns false
// when no nonzero coordinate survived the mask.
bool mask_once(std::span<const float> in, double p, std::uint64_t key, std::span<float> out) {
    std::mt19937_64 gen(key);
    const double scale = 1.0 / (1.0 - p);
    std::vector<double> kept(in.size());
    double sq = 0.0;
    for (std::size_t i = 0; i < in.size(); ++i) {
        const bool masked = uniform01(gen) < p;
        kept[i] = masked ? 0.0 : static_cast<double>(in[i]) * scale;
        sq += kept[i] * kept[i];
    }
    if (!(sq > 0.0)) return false;
    const double inv = 1.0 / std::sqrt(sq);
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = static_cast<float>(kept[i] * inv);
    return true;
}

void perturb_into(std::span<const float> in, double p, std::uint64_t key, std::span<float> out) {
    for (int attempt = 0; attempt <= kMaskRetries; ++attempt) {
        const std::uint64_t k = attempt == 0 ? key : mix64(key ^ static_cast<std::uint64_t>(attempt));
        if (mask_once(in, p, k, out)) return;
    }
    throw Error(ErrorCode::AllMasked, "every coordinate was masked after " +
                                          std::to_string(kMaskRetries) + " retries");
}

}  // namespace

void EnsembleSpec::validate() const {
    if (passes == 0) throw Error(ErrorCode::EnsembleDegenerate, "ensemble needs at least one pass");
    if (!(mask_rate >= 0.0 && mask_rate < 1.0)) {
        throw Error(ErrorCode::InvalidArgument,
                    "mask rate must be in [0, 1), got " + std::to_string(mask_rate));
    }
}

Embedding perturb(const Embedding& e, double mask_rate, std::uint64_t key) {
    if (!(mask_rate >= 0.0 && mask_rate < 1.0)) {
        throw Error(ErrorCode::InvalidArgument,
                    "mask rate must be in [0, 1), got " + std::to_string(mask_rate));
    }
    if (!e.normalized()) throw Error(ErrorCode::NotNormalized, "perturb expects a unit vector");
    if (mask_rate == 0.0) return e;
    std::vector<float> out(e.dim());
    perturb_into(e.values(), mask_rate, key, out);
    return Embedding::from_values(std::move(out), true);
}

DropoutEnsemble::DropoutEnsemble(const SnapshotPtr& base, const EnsembleSpec& spec) : spec_(spec) {
    spec_.validate();
    if (!base || base->empty()) {
        throw Error(ErrorCode::EmptyLibrary, "cannot build an ensemble over an empty library");
    }
    passes_.reserve(spec_.passes);
    if (spec_.mask_rate == 0.0) {
        // Every pass would be an exact copy; share the base rows.
        for (std::size_t t = 0; t < spec_.passes; ++t) passes_.push_back(VectorIndex::build(base));
        return;
    }
    const std::size_t dim = base->dim();
    std::vector<float> row(dim);
    for (std::size_t t = 1; t <= spec_.passes; ++t) {
        LibrarySnapshot::Builder builder(dim, base->catalog());
        builder.reserve(base->size());
        for (std::size_t i = 0; i < base->size(); ++i) {
            const ItemRecord& rec = base->record(i);
            perturb_into(base->row(i), spec_.mask_rate, substream_key(spec_.seed, t, rec.item_id),
                         row);
            builder.add(rec, row);
        }
        passes_.push_back(VectorIndex::build(std::move(builder).build(base->generation())));
    }
}

PrecomputedEnsemble::PrecomputedEnsemble(std::vector<SnapshotPtr> pass_libraries) {
    if (pass_libraries.empty()) {
        throw Error(ErrorCode::EnsembleDegenerate, "ensemble needs at least one pass");
    }
    const auto& first = pass_libraries.front();
    for (const auto& lib : pass_libraries) {
        if (!lib || lib->empty()) {
            throw Error(ErrorCode::EmptyLibrary, "ensemble pass library is empty");
        }
        if (lib->dim() != first->dim()) {
            throw Error(ErrorCode::DimMismatch, "ensemble passes differ in dim");
        }
        if (!(lib->catalog() == first->catalog()) || lib->records() != first->records()) {
            throw Error(ErrorCode::InvalidArgument,
                        "ensemble passes must share catalog and item records");
        }
        passes_.push_back(VectorIndex::build(lib));
    }
}

ConfidenceReport mc_predict(const Embedding& query, const EnsembleProvider& ensemble,
                            std::size_t k, double theta) {
    if (ensemble.passes() == 0) {
        throw Error(ErrorCode::EnsembleDegenerate, "ensemble needs at least one pass");
    }
    ConfidenceReport report;
    for (std::size_t t = 0; t < ensemble.passes(); ++t) {
        const Prediction p = predict(query, ensemble.pass(t), k, 1);
        ++report.votes[p.top1()];
    }
    std::size_t best = 0;
    for (const auto& [cls, count] : report.votes) {
        if (count > best) {
            best = count;
            report.final_class = cls;
        }
    }
    report.cscore = static_cast<double>(best) / static_cast<double>(ensemble.passes());
    report.theta = theta;
    report.reliable = report.cscore >= theta;
    return report;
}

ConfidenceReport mc_predict(const Embedding& query, const SnapshotPtr& snapshot,
                            const EnsembleSpec& spec, std::size_t k, double theta) {
    const DropoutEnsemble ensemble(snapshot, spec);
    return mc_predict(query, ensemble, k, theta);
}

double threshold_between(double lo, double hi) noexcept {
    const double mid = 0.5 * (lo + hi);
    return mid > lo ? mid : hi;
}

CalibrationResult calibrate_threshold(std::span<const ScoredPrediction> scored) {
    CalibrationResult result;
    std::vector<ScoredPrediction> sorted(scored.begin(), scored.end());
    for (const auto& s : sorted) {
        if (!(s.cscore >= 0.0 && s.cscore <= 1.0)) {
            throw Error(ErrorCode::InvalidArgument,
                        "confidence score outside [0, 1]: " + std::to_string(s.cscore));
        }
        (s.correct ? result.positives : result.negatives)++;
    }
    if (result.positives == 0 || result.negatives == 0) {
        throw Error(ErrorCode::OneClassOnly,
                    "calibration needs both correct and incorrect predictions");
    }
    std::sort(sorted.begin(), sorted.end(),
              [](const ScoredPrediction& a, const ScoredPrediction& b) { return a.cscore < b.cscore; });

    const auto pos = static_cast<std::uint64_t>(result.positives);
    const auto neg = static_cast<std::uint64_t>(result.negatives);
    // Scores strictly below the current candidate.
    std::uint64_t below_pos = 0, below_neg = 0;
    std::uint64_t best_key = 0;
    bool have_best = false;

    auto emit = [&](double theta) {
        const std::uint64_t tp = pos - below_pos;
        const std::uint64_t tn = below_neg;
        const double sens = static_cast<double>(tp) / static_cast<double>(pos);
        const double spec = static_cast<double>(tn) / static_cast<double>(neg);
        result.curve.push_back({theta, sens, spec, sens + spec - 1.0});
        // J * pos * neg + pos * neg, compared in exact integers.
        const std::uint64_t key = tp * neg + tn * pos;
        if (!have_best || key > best_key) {
            best_key = key;
            have_best = true;
            result.theta_star = theta;
            result.youden_star = result.curve.back().youden;
        }
    };

    std::size_t i = 0;
    // Scores equal to 0 are still retained at theta = 0.
    emit(0.0);
    while (i < sorted.size()) {
        const double value = sorted[i].cscore;
        while (i < sorted.size() && sorted[i].cscore == value) {
            (sorted[i].correct ? below_pos : below_neg)++;
            ++i;
        }
        if (i < sorted.size()) emit(threshold_between(value, sorted[i].cscore));
    }
    emit(kThetaUpperSentinel);
    return result;
}

TriageResult apply_threshold(std::span<const ConfidenceReport> reports, double theta) {
    TriageResult out;
    for (std::size_t i = 0; i < reports.size(); ++i) {
        (reports[i].cscore >= theta ? out.retained : out.flagged).push_back(i);
    }
    return out;
}

std::map<std::string, double> ood_detection_rate(
    const std::map<std::string, std::vector<ConfidenceReport>>& by_category, double theta) {
    std::map<std::string, double> rates;
    for (const auto& [category, reports] : by_category) {
        if (reports.empty()) {
            throw Error(ErrorCode::EmptyCategory, "category '" + category + "' has no reports",
                        category);
        }
        const auto flagged = static_cast<double>(apply_threshold(reports, theta).flagged.size());
        rates[category] = flagged / static_cast<double>(reports.size());
    }
    return rates;
}

}  // namespace refdx
