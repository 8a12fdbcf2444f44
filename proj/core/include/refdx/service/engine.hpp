#pragma once

#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "refdx/augment.hpp"
#include "refdx/confidence.hpp"
#include "refdx/retrieval.hpp"
#include "refdx/service/config.hpp"
#include "refdx/service/featurize.hpp"

namespace refdx::service {

/// Everything derived from one library generation. Requests hold a
/// shared_ptr to the state they started on, so an augment published midway
/// never affects them.
class ServingState {
public:
    ServingState(SnapshotPtr library, EnsembleSpec spec, SiteRegistry sites,
                 std::shared_ptr<const CaseStore> case_store);

    std::uint64_t generation() const noexcept { return index_.generation(); }
    const SnapshotPtr& library() const noexcept { return index_.snapshot(); }
    const VectorIndex& index() const noexcept { return index_; }
    const SiteRegistry& sites() const noexcept { return sites_; }

    /// Built on first use and shared by all requests on this generation.
    const DropoutEnsemble& ensemble() const;
    /// The configured case store, or the library itself when none is set.
    const CaseStore& case_store() const;

private:
    VectorIndex index_;
    EnsembleSpec spec_;
    SiteRegistry sites_;
    std::shared_ptr<const CaseStore> external_cases_;
    mutable std::once_flag ensemble_once_;
    mutable std::unique_ptr<DropoutEnsemble> ensemble_;
    mutable std::once_flag cases_once_;
    mutable std::unique_ptr<CaseStore> library_cases_;
};

struct DiagnosisResponse {
    Prediction prediction;
    std::optional<ConfidenceReport> confidence;
    std::uint64_t generation = 0;
    double timing_ms = 0.0;
};

/// {"generation", "ranked_labels": [{"class_id", "name", "score"}],
///  "neighbors_used", "timing_ms"} plus, in confident mode, "cscore",
/// "reliable", "theta", "final_class", "final_label", "votes".
nlohmann::json to_json(const DiagnosisResponse& response, const LabelCatalog& catalog);

struct RetrievalResponse {
    std::vector<CaseHit> hits;
    std::uint64_t generation = 0;
    double timing_ms = 0.0;
};

nlohmann::json to_json(const RetrievalResponse& response);

struct AugmentOutcome {
    std::string site_id;
    std::uint64_t old_generation = 0;
    std::uint64_t new_generation = 0;
    std::size_t added = 0;
};

struct ValidationCalibration {
    CalibrationResult calibration;
    MetricsReport metrics;
    std::uint64_t generation = 0;
};

/// Request-level facade shared by the HTTP server and the CLI. Reads never
/// block each other; augment and calibrate are serialized by a writer lock.
class Engine {
public:
    /// Loads config.library_path (generation from the state sidecar when a
    /// persisted augment left one) and the optional case store.
    explicit Engine(EngineConfig config);
    Engine(EngineConfig config, SnapshotPtr library,
           std::shared_ptr<const CaseStore> case_store = nullptr);

    const EngineConfig& config() const noexcept { return config_; }
    std::shared_ptr<const ServingState> current() const;
    std::optional<double> theta() const;

    DiagnosisResponse diagnose(const Embedding& query, std::optional<std::size_t> k = {},
                               std::optional<std::size_t> n = {}) const;
    /// Adds the Monte-Carlo confidence report. Throws ThetaUnset before any
    /// calibration.
    DiagnosisResponse diagnose_confident(const Embedding& query,
                                         std::optional<std::size_t> k = {},
                                         std::optional<std::size_t> n = {}) const;
    RetrievalResponse retrieve(const Embedding& query, std::optional<std::size_t> k = {}) const;

    /// Ingests the records as site-local items, merges and publishes the
    /// next generation.
    AugmentOutcome augment(std::span<const ManifestRecord> records, const std::string& site_id);

    /// Calibrates from precomputed (cscore, correct) pairs and persists theta*.
    CalibrationResult calibrate(std::span<const ScoredPrediction> scored);
    /// Runs Monte-Carlo prediction over labeled validation records, calibrates
    /// on the outcome and records deterministic metrics for /v1/metrics.
    ValidationCalibration calibrate_validation(std::span<const ManifestRecord> validation);

    /// Deterministic predictions over labeled records; the report becomes the
    /// one served by metrics().
    MetricsReport evaluate(std::span<const ManifestRecord> test, std::span<const std::size_t> ks);
    std::optional<MetricsReport> metrics() const;

    /// {"status", "generation", "dim", "items": {"total", "base", "local"},
    ///  "sites", "classes", "theta_star", "case_store_items"}
    nlohmann::json health() const;

    Embedding featurize(const RgbImage& image) const;
    /// Maps a manifest label through the serving catalog; throws UnknownLabel
    /// and InvalidArgument for unlabeled records.
    ClassId truth_of(const ManifestRecord& record) const;

private:
    void publish(std::shared_ptr<const ServingState> next);
    void store_theta(double theta);

    EngineConfig config_;
    std::shared_ptr<const CaseStore> case_store_;

    mutable std::mutex state_mu_;  // guards state_, theta_, metrics_
    std::shared_ptr<const ServingState> state_;
    std::optional<double> theta_;
    std::optional<MetricsReport> metrics_;

    std::mutex writer_mu_;
};

/// Loads a case store: ".jsonl"/".json" manifests keep their `ref` fields,
/// anything else is read as a binary library.
std::shared_ptr<const CaseStore> load_case_store(const std::filesystem::path& path);

}  // namespace refdx::service
