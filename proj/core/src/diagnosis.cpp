#include "refdx/diagnosis.hpp"

#include <algorithm>
#include <functional>
#include <set>

namespace refdx {

bool Prediction::hit_at(ClassId truth, std::size_t k) const noexcept {
    const std::size_t upto = std::min(k, ranked_labels.size());
    for (std::size_t i = 0; i < upto; ++i) {
        if (ranked_labels[i].class_id == truth) return true;
    }
    return false;
}

Prediction aggregate_labels(const RankedHits& hits, std::size_t n) {
    if (n == 0) throw Error(ErrorCode::InvalidArgument, "top-n must be >= 1");
    if (hits.empty()) throw Error(ErrorCode::EmptyHits, "no neighbors to aggregate");

    std::map<ClassId, std::vector<double>> contributions;
    for (const Hit& h : hits.entries) {
        if (!h.class_id) {
            throw Error(ErrorCode::UnlabeledHit,
                        "neighbor " + std::to_string(h.item_id) + " carries no label",
                        std::to_string(h.item_id));
        }
        contributions[*h.class_id].push_back(std::max(h.score, 0.0));
    }

    Prediction p;
    p.neighbors_used = hits.size();
    p.ranked_labels.reserve(contributions.size());
    for (auto& [cls, parts] : contributions) {
        // Summing in a canonical order makes the result independent of the
        // order hits arrive in.
        std::sort(parts.begin(), parts.end(), std::greater<>{});
        double total = 0.0;
        for (double x : parts) total += x;
        p.ranked_labels.push_back({cls, total});
    }
    std::sort(p.ranked_labels.begin(), p.ranked_labels.end(),
              [](const LabelScore& a, const LabelScore& b) {
                  if (a.score != b.score) return a.score > b.score;
                  return a.class_id < b.class_id;
              });
    if (p.ranked_labels.size() > n) p.ranked_labels.resize(n);
    return p;
}

Prediction predict(const Embedding& query, const VectorIndex& index, std::size_t k, std::size_t n,
                   const SearchOptions& options) {
    return aggregate_labels(index.search(query, k, options), n);
}

MetricsReport evaluate(std::span<const Prediction> predictions, std::span<const ClassId> truths,
                       std::span<const std::size_t> ks, std::size_t num_classes) {
    if (predictions.size() != truths.size()) {
        throw Error(ErrorCode::LengthMismatch,
                    std::to_string(predictions.size()) + " predictions vs " +
                        std::to_string(truths.size()) + " truths");
    }
    if (predictions.empty()) throw Error(ErrorCode::EmptyEvaluation, "nothing to evaluate");
    const std::set<std::size_t> kset(ks.begin(), ks.end());
    for (std::size_t k : kset) {
        if (k < 1 || k > num_classes) {
            throw Error(ErrorCode::InvalidArgument,
                        "k=" + std::to_string(k) + " outside 1.." + std::to_string(num_classes));
        }
    }

    MetricsReport report;
    report.n_samples = predictions.size();
    report.confusion_top1.assign(num_classes, std::vector<std::uint64_t>(num_classes, 0));

    std::vector<std::size_t> per_class_total(num_classes, 0);
    for (std::size_t i = 0; i < truths.size(); ++i) {
        const ClassId t = truths[i];
        if (t < 0 || static_cast<std::size_t>(t) >= num_classes) {
            throw Error(ErrorCode::UnknownClassId, "truth class " + std::to_string(t) +
                                                       " outside the catalog");
        }
        ++per_class_total[static_cast<std::size_t>(t)];
        if (!predictions[i].ranked_labels.empty()) {
            const ClassId top = predictions[i].top1();
            if (top >= 0 && static_cast<std::size_t>(top) < num_classes) {
                ++report.confusion_top1[static_cast<std::size_t>(t)][static_cast<std::size_t>(top)];
            }
        }
    }

    for (std::size_t k : kset) {
        std::size_t hits = 0;
        std::vector<std::size_t> class_hits(num_classes, 0);
        for (std::size_t i = 0; i < truths.size(); ++i) {
            if (predictions[i].hit_at(truths[i], k)) {
                ++hits;
                ++class_hits[static_cast<std::size_t>(truths[i])];
            }
        }
        report.top_k_accuracy[k] = static_cast<double>(hits) / static_cast<double>(truths.size());

        auto& recall = report.per_class_recall[k];
        double sum = 0.0;
        for (std::size_t c = 0; c < num_classes; ++c) {
            if (per_class_total[c] == 0) continue;
            const double r =
                static_cast<double>(class_hits[c]) / static_cast<double>(per_class_total[c]);
            recall[static_cast<ClassId>(c)] = r;
            sum += r;
        }
        report.macro_recall[k] = sum / static_cast<double>(recall.size());
    }
    return report;
}

}  // namespace refdx
