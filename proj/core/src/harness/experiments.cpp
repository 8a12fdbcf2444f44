#include "refdx/harness/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <functional>
#include <limits>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "refdx/augment.hpp"
#include "refdx/confidence.hpp"
#include "refdx/harness/generate.hpp"
#include "refdx/harness/oracle.hpp"
#include "refdx/json.hpp"
#include "refdx/retrieval.hpp"

namespace refdx::harness {
namespace {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

// Stream ids for Rng::stream so each part of an experiment has its own draws.
enum Stream : std::uint64_t {
    kPlacement = 1,
    kReference = 2,
    kValidation = 3,
    kCalibrationOod = 4,
    kTestInDist = 5,
    kTestOod = 6,
    kShiftQueries = 10,
    kShiftLocal = 11,
    kShiftDirection = 12,
    kLabelFlips = 22,
    kReviewQueries = 30,
    kReviewers = 31,
};

// Experiment parameters: defaults overridden by a JSON object, every value
// echoed into the report, unknown keys rejected.
class Params {
public:
    explicit Params(const json& overrides) : overrides_(overrides.is_null() ? json::object() : overrides) {
        if (!overrides_.is_object()) {
            throw Error(ErrorCode::InvalidArgument, "experiment config must be a JSON object");
        }
    }

    template <typename T>
    T get(const std::string& key, T fallback) {
        used_.insert(key);
        T value = fallback;
        if (overrides_.contains(key)) {
            try {
                value = overrides_.at(key).get<T>();
            } catch (const json::exception&) {
                throw Error(ErrorCode::InvalidArgument, "config key '" + key + "' has the wrong type",
                            key);
            }
        }
        echo_[key] = value;
        return value;
    }

    void finish() const {
        for (const auto& [key, _] : overrides_.items()) {
            if (!used_.contains(key)) {
                throw Error(ErrorCode::InvalidArgument, "unknown config key '" + key + "'", key);
            }
        }
    }

    const json& echo() const { return echo_; }

private:
    json overrides_;
    json echo_ = json::object();
    std::set<std::string> used_;
};

// Runs fn(i) for i < n on `threads` workers; each index writes only its own
// slot, so the outcome is independent of scheduling.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
    threads = std::min(threads == 0 ? std::size_t{1} : threads, n);
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::exception_ptr failure;
    std::mutex mu;
    {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < threads; ++t) {
            pool.emplace_back([&, t] {
                try {
                    for (std::size_t i = t; i < n; i += threads) fn(i);
                } catch (...) {
                    std::lock_guard lock(mu);
                    if (!failure) failure = std::current_exception();
                }
            });
        }
    }
    if (failure) std::rethrow_exception(failure);
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

double elapsed_ms(Clock::time_point start) {
    return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

std::vector<Embedding> embeddings_of(std::span<const ManifestRecord> records) {
    std::vector<Embedding> out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back(normalize(r.vector));
    return out;
}

std::vector<ClassId> truths_of(std::span<const ManifestRecord> records, const LabelCatalog& catalog) {
    std::vector<ClassId> out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back(catalog.id_of(*r.label));
    return out;
}

// Labelled samples around each of `centroids`, ids from `first_id`.
std::vector<ManifestRecord> sample_classes(Rng& rng, const std::vector<Vec>& centroids,
                                           const LabelCatalog& catalog, std::size_t per_class,
                                           double sigma, std::uint64_t first_id,
                                           const std::string& source, const Vec* offset = nullptr) {
    std::vector<ManifestRecord> out;
    for (std::size_t c = 0; c < centroids.size(); ++c) {
        auto recs = sample_records(rng, centroids[c], per_class, sigma, first_id + out.size(),
                                   catalog.name(static_cast<ClassId>(c)), source, offset);
        for (auto& r : recs) out.push_back(std::move(r));
    }
    return out;
}

std::vector<ConfidenceReport> mc_all(std::span<const Embedding> queries,
                                     const EnsembleProvider& ensemble, std::size_t k,
                                     std::size_t threads) {
    std::vector<ConfidenceReport> out(queries.size());
    parallel_for(queries.size(), threads,
                 [&](std::size_t i) { out[i] = mc_predict(queries[i], ensemble, k, 0.0); });
    return out;
}

double accuracy(std::span<const ConfidenceReport> reports, std::span<const ClassId> truths,
                std::span<const std::size_t> positions) {
    if (positions.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::size_t correct = 0;
    for (std::size_t i : positions) correct += reports[i].final_class == truths[i] ? 1 : 0;
    return static_cast<double>(correct) / static_cast<double>(positions.size());
}

std::vector<std::size_t> all_positions(std::size_t n) {
    std::vector<std::size_t> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = i;
    return v;
}

ClusterSpec cluster_spec(Params& p, std::uint64_t seed, std::size_t ref, std::size_t query,
                         std::size_t dim, double sigma) {
    ClusterSpec s;
    s.n_classes = p.get<std::size_t>("n_classes", 11);
    s.ref_per_class = p.get<std::size_t>("ref_per_class", ref);
    s.query_per_class = query;
    s.dim = p.get<std::size_t>("dim", dim);
    s.sigma = p.get<double>("sigma", sigma);
    s.cone_angle = p.get<double>("cone_angle", 0.3);
    s.min_angle_deg = p.get<double>("min_angle_deg", 5.0);
    s.seed = seed;
    return s;
}

// ---------------------------------------------------------------- topk_curve

ExperimentReport topk_curve(Params& p, std::uint64_t seed, const RunOptions& opt) {
    ExperimentReport rep;
    ClusterSpec spec = cluster_spec(p, seed, 200, 0, 512, 0.05);
    spec.query_per_class = p.get<std::size_t>("query_per_class", 50);
    const auto neighbors = p.get<std::vector<std::size_t>>("neighbors", {10, 30, 50});
    const auto ks = p.get<std::vector<std::size_t>>("ks", {1, 3, 5});
    const double min_top1 = p.get<double>("min_top1", 0.99);
    p.finish();

    auto t0 = Clock::now();
    const ClusterSet data = gen_clusters(spec);
    const auto index = VectorIndex::build(snapshot_from_manifest(data.reference, data.catalog));
    const auto queries = embeddings_of(data.queries);
    rep.timings_ms["generate"] = elapsed_ms(t0);

    rep.columns = {"neighbors", "k", "accuracy", "macro_recall"};
    rep.metrics = json::object();
    t0 = Clock::now();
    for (std::size_t nb : neighbors) {
        std::vector<Prediction> preds(queries.size());
        parallel_for(queries.size(), opt.threads, [&](std::size_t i) {
            preds[i] = predict(queries[i], index, nb, data.catalog.size());
        });
        const MetricsReport m = evaluate(preds, data.query_truths, ks, data.catalog.size());
        rep.metrics[std::to_string(nb)] = m;
        for (std::size_t k : ks) {
            rep.rows.push_back({std::to_string(nb), std::to_string(k), fmt(m.top_k_accuracy.at(k)),
                                fmt(m.macro_recall.at(k))});
        }
        const std::string tag = " (neighbors=" + std::to_string(nb) + ")";
        rep.checks.push_back(
            make_check("top1 accuracy" + tag, m.top_k_accuracy.at(ks.front()), ">=", min_top1));
        for (std::size_t i = 1; i < ks.size(); ++i) {
            rep.checks.push_back(make_check(
                "acc@" + std::to_string(ks[i]) + " - acc@" + std::to_string(ks[i - 1]) + tag,
                m.top_k_accuracy.at(ks[i]) - m.top_k_accuracy.at(ks[i - 1]), ">=", 0.0));
        }
    }
    rep.timings_ms["predict"] = elapsed_ms(t0);
    return rep;
}

// ------------------------------------------------------------ shift_recovery

struct ShiftArm {
    BeforeAfter metrics;
    double local_top_hit = 0.0;  // fraction of queries whose top neighbor is LOCAL
};

ExperimentReport shift_recovery(Params& p, std::uint64_t seed, const RunOptions& opt) {
    ExperimentReport rep;
    const ClusterSpec spec = cluster_spec(p, seed, 200, 0, 512, 0.05);
    const auto query_per_class = p.get<std::size_t>("query_per_class", 50);
    const auto local_per_class = p.get<std::size_t>("local_per_class", 50);
    const double offset_norm = p.get<double>("offset_norm", 0.8);
    const auto neighbors = p.get<std::size_t>("neighbors", 30);
    const auto ks = p.get<std::vector<std::size_t>>("ks", {1, 3, 5});
    const auto site = p.get<std::string>("site_id", "site-shift");
    const double before_max = p.get<double>("before_max", 0.70);
    const double after_min = p.get<double>("after_min", 0.95);
    const double min_gain = p.get<double>("min_gain", 0.2);
    const double null_tolerance = p.get<double>("null_tolerance", 0.02);
    p.finish();

    auto t0 = Clock::now();
    const ClusterSet data = gen_clusters(spec);
    const SnapshotPtr base = snapshot_from_manifest(data.reference, data.catalog);
    const auto base_index = VectorIndex::build(base);
    Rng dir_rng = Rng::stream(seed, kShiftDirection);
    const Vec direction = class_subspace_direction(dir_rng, data.centroids);
    rep.timings_ms["generate"] = elapsed_ms(t0);

    auto run_arm = [&](double norm) {
        Vec offset(direction.size());
        for (std::size_t i = 0; i < offset.size(); ++i) offset[i] = norm * direction[i];
        // The same streams for both arms: only the offset differs.
        Rng q_rng = Rng::stream(seed, kShiftQueries);
        Rng l_rng = Rng::stream(seed, kShiftLocal);
        const auto queries = sample_classes(q_rng, data.centroids, data.catalog, query_per_class,
                                            spec.sigma, 1'000'000, "shifted-query", &offset);
        const auto local = sample_classes(l_rng, data.centroids, data.catalog, local_per_class,
                                          spec.sigma, 0, site, &offset);
        const auto items = ingest_local(local, *base, site);
        const auto merged_index = VectorIndex::build(merge(*base, items));
        const auto q = embeddings_of(queries);
        const auto truths = truths_of(queries, data.catalog);
        ShiftArm arm;
        arm.metrics = compare_before_after(base_index, merged_index, q, truths, ks, neighbors,
                                           data.catalog.size());
        std::vector<int> local_top(q.size(), 0);
        parallel_for(q.size(), opt.threads, [&](std::size_t i) {
            local_top[i] = merged_index.search(q[i], 1).entries.front().provenance == Provenance::Local;
        });
        arm.local_top_hit = static_cast<double>(std::count(local_top.begin(), local_top.end(), 1)) /
                            static_cast<double>(q.size());
        return arm;
    };

    t0 = Clock::now();
    const ShiftArm shifted = run_arm(offset_norm);
    rep.timings_ms["shifted_arm"] = elapsed_ms(t0);
    t0 = Clock::now();
    const ShiftArm null_arm = run_arm(0.0);
    rep.timings_ms["null_arm"] = elapsed_ms(t0);

    rep.metrics = json{{"shifted", {{"before", shifted.metrics.before},
                                    {"after", shifted.metrics.after},
                                    {"local_top_hit_fraction", shifted.local_top_hit}}},
                       {"null", {{"before", null_arm.metrics.before},
                                 {"after", null_arm.metrics.after},
                                 {"local_top_hit_fraction", null_arm.local_top_hit}}}};
    rep.columns = {"arm", "k", "before", "after", "gain"};
    for (const auto* arm : {&shifted, &null_arm}) {
        const std::string name = arm == &shifted ? "shifted" : "null";
        for (std::size_t k : ks) {
            const double b = arm->metrics.before.top_k_accuracy.at(k);
            const double a = arm->metrics.after.top_k_accuracy.at(k);
            rep.rows.push_back({name, std::to_string(k), fmt(b), fmt(a), fmt(a - b)});
        }
    }
    const std::size_t k1 = ks.front();
    const double before = shifted.metrics.before.top_k_accuracy.at(k1);
    const double after = shifted.metrics.after.top_k_accuracy.at(k1);
    rep.checks.push_back(make_check("top1 before augmentation", before, "<", before_max));
    rep.checks.push_back(make_check("top1 after augmentation", after, ">=", after_min));
    rep.checks.push_back(make_check("top1 gain", after - before, ">=", min_gain));
    for (std::size_t k : ks) {
        rep.checks.push_back(make_check("after - before at k=" + std::to_string(k),
                                        shifted.metrics.after.top_k_accuracy.at(k) -
                                            shifted.metrics.before.top_k_accuracy.at(k),
                                        ">=", 0.0));
    }
    rep.checks.push_back(make_check("null offset |top1 change|",
                                    std::abs(null_arm.metrics.after.top_k_accuracy.at(k1) -
                                             null_arm.metrics.before.top_k_accuracy.at(k1)),
                                    "<=", null_tolerance));
    return rep;
}

// -------------------------------------------------------------------- triage

ExperimentReport triage(Params& p, std::uint64_t seed, const RunOptions& opt) {
    ExperimentReport rep;
    ClusterSpec spec = cluster_spec(p, seed, 100, 0, 128, 1.0);
    const auto val_per_class = p.get<std::size_t>("validation_per_class", 30);
    const auto test_per_class = p.get<std::size_t>("test_per_class", 30);
    const double flip = p.get<double>("flip_fraction", 0.1);
    const auto neighbors = p.get<std::size_t>("neighbors", 30);
    const auto passes = p.get<std::size_t>("passes", 100);
    const double mask_rate = p.get<double>("mask_rate", 0.1);
    const auto sweep = p.get<std::size_t>("sweep", 20);
    const double min_gain = p.get<double>("min_gain", 0.03);
    p.finish();
    if (sweep == 0) throw Error(ErrorCode::InvalidArgument, "sweep must be >= 1");
    if (!(flip >= 0.0 && flip <= 1.0)) throw Error(ErrorCode::InvalidArgument, "flip_fraction in [0,1]");

    rep.columns = {"seed", "theta_star", "j_star", "acc_all", "acc_retained", "retained_fraction", "gain"};
    json per_seed = json::array();
    double gain_first = 0.0, worst_diff = std::numeric_limits<double>::infinity(), gain_sum = 0.0;
    const auto t0 = Clock::now();
    for (std::size_t r = 0; r < sweep; ++r) {
        const std::uint64_t s = seed + r;
        spec.seed = s;
        ClusterSet data = gen_clusters(spec);
        const std::size_t C = data.catalog.size();

        // Label noise: flip a fixed fraction of reference labels to another class.
        Rng flip_rng = Rng::stream(s, kLabelFlips);
        std::vector<std::size_t> order = all_positions(data.reference.size());
        const auto n_flip = static_cast<std::size_t>(std::llround(flip * static_cast<double>(order.size())));
        for (std::size_t i = 0; i < n_flip; ++i) {
            std::swap(order[i], order[i + flip_rng.below(order.size() - i)]);
            auto& rec = data.reference[order[i]];
            const ClassId old = data.catalog.id_of(*rec.label);
            const auto shift = static_cast<ClassId>(1 + flip_rng.below(C - 1));
            rec.label = data.catalog.name((old + shift) % static_cast<ClassId>(C));
        }

        Rng val_rng = Rng::stream(s, kValidation);
        Rng test_rng = Rng::stream(s, kTestInDist);
        const auto val = sample_classes(val_rng, data.centroids, data.catalog, val_per_class,
                                        spec.sigma, 1'000'000, "validation");
        const auto test = sample_classes(test_rng, data.centroids, data.catalog, test_per_class,
                                         spec.sigma, 2'000'000, "test");
        const SnapshotPtr lib = snapshot_from_manifest(data.reference, data.catalog);
        const DropoutEnsemble ensemble(lib, EnsembleSpec{passes, mask_rate, s});

        const auto val_truth = truths_of(val, data.catalog);
        const auto val_reports = mc_all(embeddings_of(val), ensemble, neighbors, opt.threads);
        std::vector<ScoredPrediction> scored;
        for (std::size_t i = 0; i < val_reports.size(); ++i) {
            scored.push_back({val_reports[i].cscore, val_reports[i].final_class == val_truth[i]});
        }
        const CalibrationResult cal = calibrate_threshold(scored);

        const auto test_truth = truths_of(test, data.catalog);
        const auto test_reports = mc_all(embeddings_of(test), ensemble, neighbors, opt.threads);
        const TriageResult tri = apply_threshold(test_reports, cal.theta_star);
        const double acc_all = accuracy(test_reports, test_truth, all_positions(test_reports.size()));
        const double acc_ret = accuracy(test_reports, test_truth, tri.retained);
        const double frac = static_cast<double>(tri.retained.size()) /
                            static_cast<double>(test_reports.size());
        // An empty retained set cannot beat the full set.
        const double diff = std::isnan(acc_ret) ? -1.0 : acc_ret - acc_all;
        if (r == 0) gain_first = diff;
        worst_diff = std::min(worst_diff, diff);
        gain_sum += diff;

        rep.rows.push_back({std::to_string(s), fmt(cal.theta_star), fmt(cal.youden_star),
                            fmt(acc_all), fmt(acc_ret), fmt(frac), fmt(diff)});
        per_seed.push_back(json{{"seed", s},
                                {"theta_star", cal.theta_star},
                                {"j_star", cal.youden_star},
                                {"accuracy_all", acc_all},
                                {"accuracy_retained", std::isnan(acc_ret) ? json(nullptr) : json(acc_ret)},
                                {"retained_fraction", frac},
                                {"flagged", tri.flagged.size()},
                                {"retained", tri.retained.size()}});
    }
    rep.timings_ms["sweep"] = elapsed_ms(t0);
    const double mean_gain = gain_sum / static_cast<double>(sweep);
    rep.metrics = json{{"per_seed", per_seed}, {"mean_gain", mean_gain}, {"worst_gain", worst_diff}};
    rep.checks.push_back(make_check("retained - all accuracy (seed " + std::to_string(seed) + ")",
                                    gain_first, ">=", min_gain));
    rep.checks.push_back(make_check("retained - all accuracy (mean over sweep)", mean_gain, ">=", min_gain));
    rep.checks.push_back(make_check("retained - all accuracy (worst seed)", worst_diff, ">=", 0.0));
    return rep;
}

// ----------------------------------------------------------------------- ood

ExperimentReport ood(Params& p, std::uint64_t seed, const RunOptions& opt) {
    ExperimentReport rep;
    const ClusterSpec spec = cluster_spec(p, seed, 60, 0, 128, 0.05);
    const auto val_per_class = p.get<std::size_t>("validation_per_class", 20);
    const auto test_per_class = p.get<std::size_t>("test_per_class", 20);
    const auto n_ood = p.get<std::size_t>("ood_clusters", 6);
    const auto ood_per_cluster = p.get<std::size_t>("ood_per_cluster", 20);
    const auto neighbors = p.get<std::size_t>("neighbors", 30);
    const auto passes = p.get<std::size_t>("passes", 100);
    const double mask_rate = p.get<double>("mask_rate", 0.1);
    const auto sweep = p.get<std::size_t>("sweep", 20);
    const double min_ood = p.get<double>("min_ood_flag_rate", 0.90);
    const double max_id = p.get<double>("max_id_flag_rate", 0.15);
    const double min_sep = p.get<double>("min_separation_sigmas", 6.0);
    p.finish();
    if (sweep == 0) throw Error(ErrorCode::InvalidArgument, "sweep must be >= 1");
    spec.validate();

    const LabelCatalog catalog = spec.catalog();
    rep.columns = {"seed", "theta_star", "ood_flag_rate", "id_flag_rate", "min_separation_sigmas"};
    json per_seed = json::array();
    double worst_ood = 1.0, worst_id = 0.0, worst_sep = std::numeric_limits<double>::infinity();
    double ood_sum = 0.0, id_sum = 0.0;
    const auto t0 = Clock::now();
    for (std::size_t r = 0; r < sweep; ++r) {
        const std::uint64_t s = seed + r;
        Rng placement = Rng::stream(s, kPlacement);
        const auto all = place_centroids(placement, spec.n_classes, spec.dim, spec.cone_angle,
                                         spec.min_angle_deg, 2 * n_ood);
        const std::vector<Vec> id_c(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(spec.n_classes));
        const std::vector<Vec> cal_ood(all.begin() + static_cast<std::ptrdiff_t>(spec.n_classes),
                                       all.begin() + static_cast<std::ptrdiff_t>(spec.n_classes + n_ood));
        const std::vector<Vec> test_ood(all.begin() + static_cast<std::ptrdiff_t>(spec.n_classes + n_ood),
                                        all.end());
        double sep = std::numeric_limits<double>::infinity();
        for (const auto* group : {&cal_ood, &test_ood}) {
            for (const Vec& o : *group) {
                for (const Vec& c : id_c) sep = std::min(sep, distance(o, c) / spec.sigma);
            }
        }

        Rng ref_rng = Rng::stream(s, kReference);
        Rng val_rng = Rng::stream(s, kValidation);
        Rng cal_rng = Rng::stream(s, kCalibrationOod);
        Rng tid_rng = Rng::stream(s, kTestInDist);
        Rng tood_rng = Rng::stream(s, kTestOod);
        const auto refs = sample_classes(ref_rng, id_c, catalog, spec.ref_per_class, spec.sigma, 0, "reference");
        const auto val = sample_classes(val_rng, id_c, catalog, val_per_class, spec.sigma, 1'000'000, "validation");
        std::vector<ManifestRecord> cal_o, test_o;
        for (std::size_t j = 0; j < n_ood; ++j) {
            for (auto& rec : sample_records(cal_rng, cal_ood[j], ood_per_cluster, spec.sigma,
                                            2'000'000 + cal_o.size(), std::nullopt, "ood-calibration")) {
                cal_o.push_back(std::move(rec));
            }
            for (auto& rec : sample_records(tood_rng, test_ood[j], ood_per_cluster, spec.sigma,
                                            3'000'000 + test_o.size(), std::nullopt, "ood-test")) {
                test_o.push_back(std::move(rec));
            }
        }
        const auto test_id = sample_classes(tid_rng, id_c, catalog, test_per_class, spec.sigma, 4'000'000, "test");

        const SnapshotPtr lib = snapshot_from_manifest(refs, catalog);
        const DropoutEnsemble ensemble(lib, EnsembleSpec{passes, mask_rate, s});

        // Calibration: in-distribution validation predictions are positives
        // when correct; predictions on calibration OOD clusters are negatives.
        const auto val_truth = truths_of(val, catalog);
        const auto val_reports = mc_all(embeddings_of(val), ensemble, neighbors, opt.threads);
        const auto cal_reports = mc_all(embeddings_of(cal_o), ensemble, neighbors, opt.threads);
        std::vector<ScoredPrediction> scored;
        for (std::size_t i = 0; i < val_reports.size(); ++i) {
            scored.push_back({val_reports[i].cscore, val_reports[i].final_class == val_truth[i]});
        }
        for (const auto& rep_i : cal_reports) scored.push_back({rep_i.cscore, false});
        const CalibrationResult cal = calibrate_threshold(scored);

        std::map<std::string, std::vector<ConfidenceReport>> by_cat;
        by_cat["in_distribution"] = mc_all(embeddings_of(test_id), ensemble, neighbors, opt.threads);
        const auto ood_reports = mc_all(embeddings_of(test_o), ensemble, neighbors, opt.threads);
        for (std::size_t i = 0; i < ood_reports.size(); ++i) {
            by_cat["ood_" + std::to_string(i / ood_per_cluster)].push_back(ood_reports[i]);
        }
        const auto rates = ood_detection_rate(by_cat, cal.theta_star);
        const double id_rate = rates.at("in_distribution");
        const double ood_rate = static_cast<double>(apply_threshold(ood_reports, cal.theta_star).flagged.size()) /
                                static_cast<double>(ood_reports.size());

        worst_ood = std::min(worst_ood, ood_rate);
        worst_id = std::max(worst_id, id_rate);
        worst_sep = std::min(worst_sep, sep);
        ood_sum += ood_rate;
        id_sum += id_rate;
        rep.rows.push_back({std::to_string(s), fmt(cal.theta_star), fmt(ood_rate), fmt(id_rate), fmt(sep)});
        per_seed.push_back(json{{"seed", s},
                                {"theta_star", cal.theta_star},
                                {"j_star", cal.youden_star},
                                {"ood_flag_rate", ood_rate},
                                {"id_flag_rate", id_rate},
                                {"rates_by_category", rates},
                                {"min_separation_sigmas", sep}});
    }
    rep.timings_ms["sweep"] = elapsed_ms(t0);
    const auto n = static_cast<double>(sweep);
    rep.metrics = json{{"per_seed", per_seed},
                       {"mean_ood_flag_rate", ood_sum / n},
                       {"mean_id_flag_rate", id_sum / n}};
    rep.checks.push_back(make_check("ood flag rate (worst seed)", worst_ood, ">=", min_ood));
    rep.checks.push_back(make_check("in-distribution flag rate (worst seed)", worst_id, "<=", max_id));
    rep.checks.push_back(make_check("ood centroid separation in sigmas (min)", worst_sep, ">=", min_sep));
    return rep;
}

// --------------------------------------------------------- retrieval_hitrate

struct ReviewRun {
    ReviewSheet sheet;
    HitRateReport rates;
};

ReviewRun review_run(const ClusterSpec& spec, std::size_t n_queries, std::size_t k,
                     const std::vector<std::string>& reviewers, const std::vector<double>& noise,
                     const std::vector<std::size_t>& ks, std::uint64_t seed, std::size_t threads) {
    const ClusterSet data = gen_clusters(spec);
    std::vector<ManifestRecord> store_records = data.reference;
    std::map<ItemId, std::size_t> latent;
    for (auto& r : store_records) {
        latent[r.id] = static_cast<std::size_t>(data.catalog.id_of(*r.label));
        r.label.reset();
        r.ref = "synthetic://case/" + std::to_string(r.id);
    }
    const CaseStore store = CaseStore::from_manifest(store_records);

    Rng q_rng = Rng::stream(seed, kReviewQueries);
    std::vector<std::size_t> q_class(n_queries);
    std::vector<Embedding> queries;
    for (std::size_t i = 0; i < n_queries; ++i) {
        q_class[i] = q_rng.below(spec.n_classes);
        queries.push_back(normalize(sample_point(q_rng, data.centroids[q_class[i]], spec.sigma)));
    }
    std::vector<std::vector<CaseHit>> hits(n_queries);
    parallel_for(n_queries, threads, [&](std::size_t i) { hits[i] = retrieve_cases(store, queries[i], k); });

    ReviewRun run;
    run.sheet.reviewers = reviewers;
    Rng judge = Rng::stream(seed, kReviewers);
    for (std::size_t i = 0; i < n_queries; ++i) {
        ReviewQuery q;
        q.query_id = "q" + std::to_string(i);
        for (const auto& h : hits[i]) q.candidates.push_back(h.hit.item_id);
        for (std::size_t r = 0; r < reviewers.size(); ++r) {
            std::vector<bool> row;
            for (ItemId id : q.candidates) {
                const bool same = latent.at(id) == q_class[i];
                row.push_back(judge.uniform() < noise[r] ? !same : same);
            }
            q.verdicts[reviewers[r]] = std::move(row);
        }
        run.sheet.queries.push_back(std::move(q));
    }
    run.rates = topk_hit_rate(run.sheet, ks);
    return run;
}

ExperimentReport retrieval_hitrate(Params& p, std::uint64_t seed, const RunOptions& opt) {
    ExperimentReport rep;
    ClusterSpec spec = cluster_spec(p, seed, 400, 0, 128, 1.0);
    const auto n_queries = p.get<std::size_t>("queries", 50);
    const auto k = p.get<std::size_t>("k", 10);
    const auto reviewers = p.get<std::vector<std::string>>("reviewers", {"reviewer_a", "reviewer_b", "reviewer_c"});
    const auto noise = p.get<std::vector<double>>("reviewer_noise", {0.05, 0.10, 0.15});
    const auto ks = p.get<std::vector<std::size_t>>("ks", {1, 3, 5, 10});
    p.finish();
    if (noise.size() != reviewers.size()) {
        throw Error(ErrorCode::InvalidArgument, "reviewer_noise needs one entry per reviewer");
    }

    const auto t0 = Clock::now();
    const ReviewRun run = review_run(spec, n_queries, k, reviewers, noise, ks, seed, opt.threads);
    rep.timings_ms["run"] = elapsed_ms(t0);

    rep.metrics = json{{"hit_rates", run.rates}, {"review_sheet", run.sheet}};
    rep.columns = {"reviewer", "k", "hit_rate"};
    for (const auto& [reviewer, rates] : run.rates.per_reviewer) {
        for (const auto& [kk, v] : rates) rep.rows.push_back({reviewer, std::to_string(kk), fmt(v)});
    }
    for (const auto& [kk, v] : run.rates.average) rep.rows.push_back({"average", std::to_string(kk), fmt(v)});

    // Monotone in k for every reviewer, and equal to direct counting.
    double worst_step = std::numeric_limits<double>::infinity();
    double worst_diff = 0.0;
    for (const auto& reviewer : reviewers) {
        const auto& rates = run.rates.per_reviewer.at(reviewer);
        double prev = -1.0;
        for (const auto& [kk, v] : rates) {
            if (prev >= 0.0) worst_step = std::min(worst_step, v - prev);
            prev = v;
        }
        std::vector<std::vector<bool>> rows;
        for (const auto& q : run.sheet.queries) rows.push_back(q.verdicts.at(reviewer));
        for (const auto& [kk, v] : oracle::hit_rates(rows, ks)) {
            worst_diff = std::max(worst_diff, std::abs(v - rates.at(kk)));
        }
    }
    if (!std::isfinite(worst_step)) worst_step = 0.0;
    rep.checks.push_back(make_check("hit rate step in k (min over reviewers)", worst_step, ">=", 0.0));
    rep.checks.push_back(make_check("|hit rate - counting oracle| (max)", worst_diff, "<=", 1e-12));
    return rep;
}

using Runner = ExperimentReport (*)(Params&, std::uint64_t, const RunOptions&);

const std::map<std::string, Runner, std::less<>>& runners() {
    static const std::map<std::string, Runner, std::less<>> m = {
        {"topk_curve", &topk_curve},
        {"shift_recovery", &shift_recovery},
        {"triage", &triage},
        {"ood", &ood},
        {"retrieval_hitrate", &retrieval_hitrate},
    };
    return m;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    out << text;
    if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string(), path.string());
}

}  // namespace

Check make_check(std::string name, double observed, std::string relation, double bound) {
    bool pass = false;
    if (relation == ">=") pass = observed >= bound;
    else if (relation == "<=") pass = observed <= bound;
    else if (relation == "<") pass = observed < bound;
    else if (relation == ">") pass = observed > bound;
    else throw Error(ErrorCode::InvalidArgument, "unknown relation " + relation);
    return Check{std::move(name), std::move(relation), bound, observed, pass};
}

bool ExperimentReport::passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.pass; });
}

nlohmann::json to_json(const ExperimentReport& report) {
    json checks = json::array();
    for (const auto& c : report.checks) {
        checks.push_back(json{{"name", c.name},
                              {"relation", c.relation},
                              {"bound", c.bound},
                              {"observed", c.observed},
                              {"pass", c.pass}});
    }
    return json{{"experiment", report.experiment},
                {"seed", report.seed},
                {"config", report.config},
                {"metrics", report.metrics},
                {"table", {{"columns", report.columns}, {"rows", report.rows}}},
                {"checks", checks},
                {"passed", report.passed()},
                {"timings_ms", report.timings_ms}};
}

std::string to_csv(const ExperimentReport& report) {
    std::ostringstream out;
    auto line = [&](const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) out << ',';
            out << cells[i];
        }
        out << '\n';
    };
    line(report.columns);
    for (const auto& row : report.rows) line(row);
    return out.str();
}

const std::vector<std::string>& experiment_names() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> v;
        for (const auto& [name, _] : runners()) v.push_back(name);
        return v;
    }();
    return names;
}

ExperimentReport run_experiment(std::string_view name, const nlohmann::json& config,
                                std::uint64_t seed, const RunOptions& options) {
    const auto it = runners().find(name);
    if (it == runners().end()) {
        throw Error(ErrorCode::UnknownExperiment, "unknown experiment '" + std::string(name) + "'",
                    std::string(name));
    }
    Params params(config);
    const auto start = Clock::now();
    ExperimentReport report = it->second(params, seed, options);
    report.experiment = std::string(name);
    report.seed = seed;
    report.config = params.echo();
    report.timings_ms["total"] = elapsed_ms(start);
    return report;
}

std::vector<std::filesystem::path> write_demo_bundle(const std::filesystem::path& dir,
                                                     std::uint64_t seed) {
    std::filesystem::create_directories(dir);
    std::vector<std::filesystem::path> written;
    auto path = [&](const char* name) {
        written.push_back(dir / name);
        return written.back();
    };

    ClusterSpec spec;
    spec.n_classes = 11;
    spec.ref_per_class = 40;
    spec.query_per_class = 5;
    spec.dim = 64;
    spec.sigma = 0.6;
    spec.seed = seed;
    spec.class_names = {"normal", "amd", "dr", "glaucoma", "cataract", "myopia",
                        "rvo", "csc", "rd", "erm", "mh"};
    const ClusterSet data = gen_clusters(spec);
    save_library(*snapshot_from_manifest(data.reference, data.catalog), path("library.grdl"));
    write_manifest(path("queries.jsonl"), data.queries);

    Rng val_rng = Rng::stream(seed, kValidation);
    write_manifest(path("validation.jsonl"),
                   sample_classes(val_rng, data.centroids, data.catalog, 10, spec.sigma, 100'000, "validation"));

    Rng dir_rng = Rng::stream(seed, kShiftDirection);
    Vec offset = class_subspace_direction(dir_rng, data.centroids);
    for (double& x : offset) x *= 0.8;
    Rng local_rng = Rng::stream(seed, kShiftLocal);
    write_manifest(path("site_local.jsonl"),
                   sample_classes(local_rng, data.centroids, data.catalog, 10, spec.sigma, 0, "site-b", &offset));
    Rng sq_rng = Rng::stream(seed, kShiftQueries);
    write_manifest(path("site_queries.jsonl"),
                   sample_classes(sq_rng, data.centroids, data.catalog, 5, spec.sigma, 200'000, "site-b", &offset));

    Rng case_rng = Rng::stream(seed, kReviewQueries);
    auto cases = sample_classes(case_rng, data.centroids, data.catalog, 60, spec.sigma, 500'000, "archive");
    for (auto& c : cases) {
        c.label.reset();
        c.ref = "archive/cases/" + std::to_string(c.id) + ".png";
    }
    write_manifest(path("case_store.jsonl"), cases);

    write_text(path("scored.json"),
               json::array({json::array({0.8, true}), json::array({0.6, true}),
                            json::array({0.7, false}), json::array({0.3, false})})
                       .dump(2) + "\n");

    ClusterSpec review_spec = spec;
    review_spec.ref_per_class = 60;
    review_spec.query_per_class = 0;
    review_spec.class_names.clear();
    const ReviewRun review = review_run(
        review_spec, 8, 10, {"reviewer_a", "reviewer_b", "reviewer_c"}, {0.05, 0.1, 0.15}, {1, 3, 5, 10}, seed, 1);
    write_text(path("review_sheet.json"), json(review.sheet).dump(2) + "\n");

    json query_body{{"vector", data.queries.front().vector}, {"k", 30}, {"n", 5}};
    write_text(path("query.json"), query_body.dump() + "\n");

    std::ostringstream toml;
    toml << "# Demo engine configuration; paths are relative to this file.\n"
         << "library_path = \"library.grdl\"\n"
         << "case_store_path = \"case_store.jsonl\"\n"
         << "state_path = \"engine.state.json\"\n"
         << "k_neighbors = 30\n"
         << "top_n = 5\n"
         << "listen_address = \"127.0.0.1:8080\"\n\n"
         << "[ensemble]\n"
         << "passes = 100\n"
         << "mask_rate = 0.1\n"
         << "seed = " << seed << "\n";
    write_text(path("engine.toml"), toml.str());
    return written;
}

}  // namespace refdx::harness
