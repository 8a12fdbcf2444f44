#include "refdx/harness/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace refdx::harness::oracle {

std::vector<Neighbor> knn(const std::vector<std::vector<float>>& rows,
                          const std::vector<std::uint64_t>& ids, const std::vector<float>& query,
                          std::size_t k) {
    if (rows.size() != ids.size()) throw std::invalid_argument("rows and ids differ in length");
    double qq = 0.0;
    for (float x : query) qq += static_cast<double>(x) * x;
    std::vector<Neighbor> all;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != query.size()) throw std::invalid_argument("dimension mismatch");
        double d = 0.0, rr = 0.0;
        for (std::size_t j = 0; j < query.size(); ++j) {
            d += static_cast<double>(rows[i][j]) * query[j];
            rr += static_cast<double>(rows[i][j]) * rows[i][j];
        }
        all.push_back({ids[i], d / (std::sqrt(rr) * std::sqrt(qq))});
    }
    std::sort(all.begin(), all.end(), [](const Neighbor& a, const Neighbor& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.id < b.id;
    });
    if (all.size() > k) all.resize(k);
    return all;
}

double youden_at(const std::vector<std::pair<double, bool>>& scored, double theta) {
    double pos = 0, neg = 0, tp = 0, tn = 0;
    for (const auto& [s, correct] : scored) {
        if (correct) {
            ++pos;
            if (s >= theta) ++tp;
        } else {
            ++neg;
            if (s < theta) ++tn;
        }
    }
    return tp / pos + tn / neg - 1.0;
}

Sweep youden_sweep(const std::vector<std::pair<double, bool>>& scored) {
    long long pos = 0, neg = 0;
    for (const auto& p : scored) (p.second ? pos : neg)++;
    if (pos == 0 || neg == 0) throw std::invalid_argument("need both outcomes");

    std::set<double> distinct;
    for (const auto& p : scored) distinct.insert(p.first);
    std::vector<double> candidates{0.0};
    for (auto it = distinct.begin(); std::next(it) != distinct.end(); ++it) {
        const double lo = *it, hi = *std::next(it);
        double mid = (lo + hi) / 2;
        if (!(mid > lo)) mid = hi;  // adjacent doubles
        candidates.push_back(mid);
    }
    candidates.push_back(1.0 + 1e-9);

    // J * pos * neg as an exact integer so equal J values compare equal.
    long long best = 0;
    Sweep out;
    bool first = true;
    for (double theta : candidates) {
        long long tp = 0, tn = 0;
        for (const auto& [s, correct] : scored) {
            if (correct && s >= theta) ++tp;
            if (!correct && s < theta) ++tn;
        }
        const long long scaled = tp * neg + tn * pos - pos * neg;
        if (first || scaled > best || (scaled == best && theta < out.theta)) {
            best = scaled;
            out.theta = theta;
            out.youden = youden_at(scored, theta);
            first = false;
        }
    }
    return out;
}

Counts count_metrics(const std::vector<std::vector<int>>& ranked, const std::vector<int>& truths,
                     const std::vector<std::size_t>& ks, std::size_t num_classes) {
    Counts c;
    c.confusion.assign(num_classes, std::vector<std::uint64_t>(num_classes, 0));
    for (std::size_t i = 0; i < truths.size(); ++i) c.confusion[truths[i]][ranked[i][0]] += 1;
    for (std::size_t k : ks) {
        std::size_t hits = 0;
        std::vector<std::size_t> class_hits(num_classes, 0), class_total(num_classes, 0);
        for (std::size_t i = 0; i < truths.size(); ++i) {
            bool hit = false;
            for (std::size_t j = 0; j < k && j < ranked[i].size(); ++j) {
                if (ranked[i][j] == truths[i]) hit = true;
            }
            class_total[truths[i]] += 1;
            if (hit) {
                ++hits;
                class_hits[truths[i]] += 1;
            }
        }
        c.accuracy[k] = static_cast<double>(hits) / static_cast<double>(truths.size());
        double sum = 0.0;
        int present = 0;
        for (std::size_t cls = 0; cls < num_classes; ++cls) {
            if (class_total[cls] == 0) continue;
            const double r = static_cast<double>(class_hits[cls]) / static_cast<double>(class_total[cls]);
            c.recall[k][static_cast<int>(cls)] = r;
            sum += r;
            ++present;
        }
        c.macro_recall[k] = sum / present;
    }
    return c;
}

std::vector<std::pair<int, double>> vote(const std::vector<std::pair<int, double>>& labelled_scores,
                                         std::size_t n) {
    std::set<int> classes;
    for (const auto& p : labelled_scores) classes.insert(p.first);
    std::vector<std::pair<int, double>> totals;
    for (int c : classes) {
        double t = 0.0;
        for (const auto& [cls, s] : labelled_scores) {
            if (cls == c && s > 0) t += s;
        }
        totals.emplace_back(c, t);
    }
    std::vector<std::pair<int, double>> out;
    while (out.size() < n && !totals.empty()) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < totals.size(); ++i) {
            if (totals[i].second > totals[best].second) best = i;  // first wins ties: lowest class
        }
        out.push_back(totals[best]);
        totals.erase(totals.begin() + static_cast<std::ptrdiff_t>(best));
    }
    return out;
}

std::map<std::size_t, double> hit_rates(const std::vector<std::vector<bool>>& rows,
                                        const std::vector<std::size_t>& ks) {
    std::map<std::size_t, double> out;
    for (std::size_t k : ks) {
        std::size_t hits = 0;
        for (const auto& row : rows) {
            bool any = false;
            for (std::size_t j = 0; j < k; ++j) any = any || row[j];
            hits += any ? 1 : 0;
        }
        out[k] = static_cast<double>(hits) / static_cast<double>(rows.size());
    }
    return out;
}

}  // namespace refdx::harness::oracle
