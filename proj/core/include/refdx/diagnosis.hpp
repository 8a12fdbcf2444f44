#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "refdx/index.hpp"

namespace refdx {

inline constexpr std::size_t kDefaultNeighbors = 30;
inline constexpr std::size_t kDefaultTopN = 5;

struct LabelScore {
    ClassId class_id = 0;
    double score = 0.0;

    friend bool operator==(const LabelScore&, const LabelScore&) = default;
};

/// Top-n diagnosis: ranked by aggregate score, ties by ascending class id.
struct Prediction {
    std::vector<LabelScore> ranked_labels;
    std::size_t neighbors_used = 0;

    ClassId top1() const { return ranked_labels.front().class_id; }
    /// True when `truth` is among the first `k` ranked labels.
    bool hit_at(ClassId truth, std::size_t k) const noexcept;

    friend bool operator==(const Prediction&, const Prediction&) = default;
};

/// Similarity-weighted vote: each class scores the sum of max(score, 0) over
/// its hits. Throws EmptyHits, UnlabeledHit, InvalidArgument (n == 0).
Prediction aggregate_labels(const RankedHits& hits, std::size_t n);

/// aggregate_labels(index.search(query, k), n).
Prediction predict(const Embedding& query, const VectorIndex& index,
                   std::size_t k = kDefaultNeighbors, std::size_t n = kDefaultTopN,
                   const SearchOptions& options = {});

struct MetricsReport {
    std::map<std::size_t, double> top_k_accuracy;
    /// k -> class -> recall, for classes with at least one truth sample.
    std::map<std::size_t, std::map<ClassId, double>> per_class_recall;
    std::map<std::size_t, double> macro_recall;
    std::size_t n_samples = 0;
    /// [truth][top-1 prediction] counts, C x C.
    std::vector<std::vector<std::uint64_t>> confusion_top1;

    friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

/// Throws LengthMismatch, EmptyEvaluation, InvalidArgument (k outside
/// 1..num_classes), UnknownClassId (truth outside the catalog).
MetricsReport evaluate(std::span<const Prediction> predictions, std::span<const ClassId> truths,
                       std::span<const std::size_t> ks, std::size_t num_classes);

}  // namespace refdx
