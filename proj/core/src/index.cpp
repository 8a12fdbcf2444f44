#include "refdx/index.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>
#include <thread>

#include "kernels.hpp"

namespace refdx {
namespace {

struct Candidate {
    double lower;
    double upper;
    std::size_t row;
};

// Chunk-local prefilter. `bounds(r)` brackets the exact f64 score of row r.
// A row can only reach the top k if its upper bound is at least the k-th
// largest lower bound, and the running k-th largest lower bound never exceeds
// the final one, so the kept set is a superset of the chunk's top k.
template <typename Bounds>
void scan_chunk(std::size_t begin, std::size_t end, std::size_t k, Bounds bounds,
                std::vector<Candidate>& out) {
    std::vector<double> heap;  // min-heap of the k largest lower bounds
    heap.reserve(k + 1);
    double cut = -std::numeric_limits<double>::infinity();
    const std::size_t prune_at = std::max<std::size_t>(8 * k, 4096);

    for (std::size_t r = begin; r < end; ++r) {
        const auto [lower, upper] = bounds(r);
        if (upper < cut) continue;
        out.push_back({lower, upper, r});
        if (heap.size() < k) {
            heap.push_back(lower);
            std::push_heap(heap.begin(), heap.end(), std::greater<>{});
            if (heap.size() == k) cut = heap.front();
        } else if (lower > heap.front()) {
            std::pop_heap(heap.begin(), heap.end(), std::greater<>{});
            heap.back() = lower;
            std::push_heap(heap.begin(), heap.end(), std::greater<>{});
            cut = heap.front();
        }
        if (out.size() > prune_at) {
            std::erase_if(out, [cut](const Candidate& c) { return c.upper < cut; });
        }
    }
}

// Symmetric int8 codes with one scale per vector.
double quantize_into(std::span<const float> v, std::int8_t* codes, double& resid) {
    float peak = 0.0f;
    for (float x : v) peak = std::max(peak, std::abs(x));
    const double scale = peak > 0.0f ? peak / 127.0 : 1.0;
    double sq = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double c = std::clamp(std::nearbyint(v[i] / scale), -127.0, 127.0);
        codes[i] = static_cast<std::int8_t>(c);
        const double e = v[i] - scale * c;
        sq += e * e;
    }
    resid = std::sqrt(sq);
    return scale;
}

bool better(const Hit& a, const Hit& b) noexcept {
    if (a.score != b.score) return a.score > b.score;
    return a.item_id < b.item_id;
}

}  // namespace

VectorIndex::VectorIndex(SnapshotPtr snapshot) : snapshot_(std::move(snapshot)) {}

VectorIndex VectorIndex::build(SnapshotPtr snapshot, const IndexOptions& options) {
    if (!snapshot || snapshot->empty()) {
        throw Error(ErrorCode::EmptyLibrary, "cannot build an index over an empty library");
    }
    VectorIndex index(std::move(snapshot));
    const auto& snap = *index.snapshot_;
    index.inv_norms_.resize(snap.size());
    for (std::size_t i = 0; i < snap.size(); ++i) {
        const double inv = 1.0 / l2_norm(snap.row(i));
        index.inv_norms_[i] = inv;
        index.max_inv_norm_dev_ = std::max(index.max_inv_norm_dev_, std::abs(inv - 1.0));
    }
    if (snap.size() >= options.quantize_min_rows && snap.dim() < (std::size_t{1} << 17)) index.quantize();
    return index;
}

void VectorIndex::quantize() {
    const std::size_t n = size(), d = dim();
    codes_.resize(n * d);
    code_scale_.resize(n);
    code_resid_.resize(n);
    for (std::size_t r = 0; r < n; ++r) {
        code_scale_[r] = quantize_into(row(r), codes_.data() + r * d, code_resid_[r]);
    }
}

void VectorIndex::validate_query(const Embedding& query, std::size_t k) const {
    if (k == 0) throw Error(ErrorCode::InvalidArgument, "k must be >= 1");
    if (query.dim() != dim()) {
        throw Error(ErrorCode::DimMismatch, "query dim " + std::to_string(query.dim()) +
                                                " does not match index dim " +
                                                std::to_string(dim()));
    }
    if (!query.normalized()) {
        throw Error(ErrorCode::NotNormalized, "search queries must be normalized");
    }
}

RankedHits VectorIndex::search(const Embedding& query, std::size_t k,
                               const SearchOptions& options) const {
    validate_query(query, k);
    std::size_t threads = options.threads;
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    return search_unchecked(query, k, threads);
}

RankedHits VectorIndex::search_unchecked(const Embedding& query, std::size_t k,
                                         std::size_t threads) const {
    const std::size_t n = size();
    const std::size_t d = dim();
    const float* matrix = snapshot_->matrix().data();
    const float* q = query.values().data();

    // Error budget between the f32 prefilter score and the f64 cosine:
    // summation rounding (gamma_d), deviation of stored norms from 1, and the
    // f64 rescoring rounding. Doubled because two scores are compared.
    const double unit32 = std::ldexp(1.0, -24);
    const double gamma32 = d * unit32 / (1.0 - d * unit32);
    const double inv_q = 1.0 / l2_norm(query.values());
    const double q_dev = std::abs(inv_q - 1.0);
    const double scale_dev = max_inv_norm_dev_ + q_dev + max_inv_norm_dev_ * q_dev;
    const double err64 = (d + 4) * std::ldexp(1.0, -53) * 1.01;
    const double margin = 2.0 * (1.01 * (gamma32 + scale_dev) + err64) + 1e-12;

    threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(1, n / 1024));
    std::vector<std::vector<Candidate>> parts(threads);
    const std::size_t chunk = (n + threads - 1) / threads;

    auto scan_all = [&](auto bounds) {
        std::vector<std::jthread> workers;
        workers.reserve(threads - 1);
        for (std::size_t t = 1; t < threads; ++t) {
            const std::size_t begin = std::min(n, t * chunk);
            const std::size_t end = std::min(n, begin + chunk);
            workers.emplace_back([&, t, begin, end] { scan_chunk(begin, end, k, bounds, parts[t]); });
        }
        scan_chunk(0, std::min(n, chunk), k, bounds, parts[0]);
    };

    if (quantized()) {
        // With x = s_x x' + a and q = s_q q' + b, the exact dot differs from
        // s_x s_q <x', q'> by <x, b> + <a, q> - <a, b>, bounded through
        // Cauchy-Schwarz. The f64 rescoring adds the usual scale and rounding
        // terms; the final factor absorbs rounding in the bound itself.
        std::vector<std::int8_t> qcodes(d);
        double q_resid = 0.0;
        const double q_scale = quantize_into(query.values(), qcodes.data(), q_resid);
        const double q_norm = l2_norm(query.values());
        const double rescore = 1.01 * scale_dev * (1.0 + scale_dev) + err64;
        scan_all([&, qc = qcodes.data()](std::size_t r) {
            const double approx =
                static_cast<double>(detail::dot_i8(codes_.data() + r * d, qc, d)) * code_scale_[r] * q_scale;
            const double x_norm = 1.0 / inv_norms_[r];
            const double e = (x_norm * q_resid + code_resid_[r] * q_norm + code_resid_[r] * q_resid) *
                                 (1.0 + 1e-9) +
                             rescore + 1e-12;
            return std::pair{approx - e, approx + e};
        });
    } else {
        const double half = margin / 2.0;
        scan_all([&](std::size_t r) {
            const double f = detail::dot_f32(matrix + r * d, q, d);
            return std::pair{f - half, f + half};
        });
    }

    std::vector<Candidate> pool;
    for (auto& p : parts) pool.insert(pool.end(), p.begin(), p.end());

    if (pool.size() > k) {
        auto kth = pool.begin() + static_cast<std::ptrdiff_t>(k - 1);
        std::nth_element(pool.begin(), kth, pool.end(),
                         [](const Candidate& a, const Candidate& b) { return a.lower > b.lower; });
        const double cut = kth->lower;
        std::erase_if(pool, [cut](const Candidate& c) { return c.upper < cut; });
    }

    RankedHits result;
    result.entries.reserve(pool.size());
    for (const Candidate& c : pool) {
        const ItemRecord& rec = snapshot_->record(c.row);
        const double score = detail::dot_f64(matrix + c.row * d, q, d) * inv_norms_[c.row] * inv_q;
        result.entries.push_back(Hit{rec.item_id, rec.class_id, rec.provenance, score});
    }
    const std::size_t keep = std::min(k, result.entries.size());
    std::partial_sort(result.entries.begin(),
                      result.entries.begin() + static_cast<std::ptrdiff_t>(keep),
                      result.entries.end(), better);
    result.entries.resize(keep);
    return result;
}

std::vector<BatchResult> VectorIndex::batch_search(std::span<const Embedding> queries,
                                                   std::size_t k,
                                                   const SearchOptions& options) const {
    std::vector<BatchResult> out(queries.size());
    auto run = [&](std::size_t i) {
        out[i].position = i;
        try {
            validate_query(queries[i], k);
            out[i].hits = search_unchecked(queries[i], k, 1);
        } catch (const Error& e) {
            out[i].error = e;
        }
    };

    std::size_t threads = options.threads;
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(1, queries.size()));
    if (threads == 1) {
        for (std::size_t i = 0; i < queries.size(); ++i) run(i);
        return out;
    }
    // Strided assignment; each slot is written by exactly one worker.
    {
        std::vector<std::jthread> workers;
        for (std::size_t t = 0; t < threads; ++t) {
            workers.emplace_back([&, t] {
                for (std::size_t i = t; i < queries.size(); i += threads) run(i);
            });
        }
    }
    return out;
}

}  // namespace refdx
