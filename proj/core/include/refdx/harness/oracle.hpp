#pragma once

// Naive reference implementations for equivalence testing. They take plain
// standard containers and share no code with the engine.

#include <cstdint>
#include <map>
#include <utility>
#include <vector>

namespace refdx::harness::oracle {

struct Neighbor {
    std::uint64_t id = 0;
    double score = 0.0;
};

/// Cosine dot(a, b) / (|a| |b|) in double against every row, full sort by
/// score descending then id ascending, first min(k, N) kept.
std::vector<Neighbor> knn(const std::vector<std::vector<float>>& rows,
                          const std::vector<std::uint64_t>& ids, const std::vector<float>& query,
                          std::size_t k);

struct Sweep {
    double theta = 0.0;
    double youden = 0.0;
};

/// Tries 0, every midpoint between consecutive distinct scores and 1 + 1e-9,
/// counting sensitivity and specificity directly at each one. Returns the
/// smallest theta with maximal J. Throws std::invalid_argument when every
/// pair has the same outcome.
Sweep youden_sweep(const std::vector<std::pair<double, bool>>& scored);

/// J at one threshold, counted directly.
double youden_at(const std::vector<std::pair<double, bool>>& scored, double theta);

struct Counts {
    std::map<std::size_t, double> accuracy;
    std::map<std::size_t, std::map<int, double>> recall;
    std::map<std::size_t, double> macro_recall;
    std::vector<std::vector<std::uint64_t>> confusion;
};

/// Metrics from ranked class lists by direct counting.
Counts count_metrics(const std::vector<std::vector<int>>& ranked, const std::vector<int>& truths,
                     const std::vector<std::size_t>& ks, std::size_t num_classes);

/// Similarity-weighted label vote recomputed by scanning every class.
std::vector<std::pair<int, double>> vote(const std::vector<std::pair<int, double>>& labelled_scores,
                                         std::size_t n);

/// hit rate per k: fraction of rows with a true entry in the first k.
std::map<std::size_t, double> hit_rates(const std::vector<std::vector<bool>>& rows,
                                        const std::vector<std::size_t>& ks);

}  // namespace refdx::harness::oracle
