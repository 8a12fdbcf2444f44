#include "refdx/service/engine.hpp"

#include <algorithm>
#include <chrono>
#include <set>

#include "refdx/json.hpp"

namespace refdx::service {
namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point start) {
    return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

std::vector<std::size_t> default_ks(std::size_t num_classes) {
    std::set<std::size_t> ks;
    for (std::size_t k : {1, 3, 5}) ks.insert(std::min(k, num_classes));
    return {ks.begin(), ks.end()};
}

bool has_state_path(const EngineConfig& c) { return c.state_path || !c.library_path.empty(); }

}  // namespace

ServingState::ServingState(SnapshotPtr library, EnsembleSpec spec, SiteRegistry sites,
                           std::shared_ptr<const CaseStore> case_store)
    : index_(VectorIndex::build(std::move(library))),
      spec_(spec),
      sites_(std::move(sites)),
      external_cases_(std::move(case_store)) {}

const DropoutEnsemble& ServingState::ensemble() const {
    std::call_once(ensemble_once_, [this] {
        ensemble_ = std::make_unique<DropoutEnsemble>(index_.snapshot(), spec_);
    });
    return *ensemble_;
}

const CaseStore& ServingState::case_store() const {
    if (external_cases_) return *external_cases_;
    std::call_once(cases_once_,
                   [this] { library_cases_ = std::make_unique<CaseStore>(index_.snapshot()); });
    return *library_cases_;
}

nlohmann::json to_json(const DiagnosisResponse& response, const LabelCatalog& catalog) {
    nlohmann::json j{{"generation", response.generation},
                     {"ranked_labels", named_prediction_json(response.prediction, catalog)},
                     {"neighbors_used", response.prediction.neighbors_used},
                     {"timing_ms", response.timing_ms}};
    if (const auto& c = response.confidence) {
        j["cscore"] = c->cscore;
        j["reliable"] = c->reliable;
        j["theta"] = c->theta;
        j["final_class"] = c->final_class;
        j["final_label"] = catalog.name(c->final_class);
        nlohmann::json votes = nlohmann::json::object();
        for (const auto& [cls, count] : c->votes) votes[std::to_string(cls)] = count;
        j["votes"] = votes;
    }
    return j;
}

nlohmann::json to_json(const RetrievalResponse& response) {
    return nlohmann::json{{"generation", response.generation},
                          {"hits", response.hits},
                          {"timing_ms", response.timing_ms}};
}

std::shared_ptr<const CaseStore> load_case_store(const std::filesystem::path& path) {
    const auto ext = path.extension().string();
    if (ext == ".jsonl" || ext == ".json") {
        const auto records = read_manifest(path);
        return std::make_shared<const CaseStore>(CaseStore::from_manifest(records));
    }
    return std::make_shared<const CaseStore>(load_library(path));
}

Engine::Engine(EngineConfig config) : config_(std::move(config)) {
    config_.validate();
    if (config_.library_path.empty()) {
        throw Error(ErrorCode::ConfigError, "library_path is required");
    }
    const auto state = load_state(config_.effective_state_path());
    LoadOptions options;
    if (state && state->library_generation) options.generation = *state->library_generation;
    SnapshotPtr library = load_library(config_.library_path, options);
    if (config_.dim && *config_.dim != library->dim()) {
        throw Error(ErrorCode::ConfigError,
                    "configured dim " + std::to_string(*config_.dim) + " but library has dim " +
                        std::to_string(library->dim()));
    }
    if (config_.case_store_path) case_store_ = load_case_store(*config_.case_store_path);
    // An explicit theta (config file overlay or CLI flag) wins over the sidecar.
    theta_ = config_.theta_star ? config_.theta_star : (state ? state->theta_star : std::nullopt);
    state_ = std::make_shared<const ServingState>(library, config_.ensemble,
                                                  SiteRegistry::from_snapshot(*library),
                                                  case_store_);
}

Engine::Engine(EngineConfig config, SnapshotPtr library, std::shared_ptr<const CaseStore> case_store)
    : config_(std::move(config)), case_store_(std::move(case_store)) {
    config_.validate();
    if (!library) throw Error(ErrorCode::EmptyLibrary, "no library given");
    if (config_.dim && *config_.dim != library->dim()) {
        throw Error(ErrorCode::ConfigError, "configured dim does not match the library");
    }
    theta_ = config_.theta_star;
    if (!theta_ && has_state_path(config_)) {
        if (auto state = load_state(config_.effective_state_path()); state && state->theta_star) {
            theta_ = state->theta_star;
        }
    }
    auto sites = SiteRegistry::from_snapshot(*library);
    state_ = std::make_shared<const ServingState>(std::move(library), config_.ensemble,
                                                  std::move(sites), case_store_);
}

std::shared_ptr<const ServingState> Engine::current() const {
    std::lock_guard lock(state_mu_);
    return state_;
}

std::optional<double> Engine::theta() const {
    std::lock_guard lock(state_mu_);
    return theta_;
}

std::optional<MetricsReport> Engine::metrics() const {
    std::lock_guard lock(state_mu_);
    return metrics_;
}

void Engine::publish(std::shared_ptr<const ServingState> next) {
    std::lock_guard lock(state_mu_);
    state_ = std::move(next);
}

DiagnosisResponse Engine::diagnose(const Embedding& query, std::optional<std::size_t> k,
                                   std::optional<std::size_t> n) const {
    const auto start = Clock::now();
    const auto state = current();
    DiagnosisResponse r;
    r.prediction = predict(query, state->index(), k.value_or(config_.k_neighbors),
                           n.value_or(config_.top_n), {config_.search_threads});
    r.generation = state->generation();
    r.timing_ms = elapsed_ms(start);
    return r;
}

DiagnosisResponse Engine::diagnose_confident(const Embedding& query, std::optional<std::size_t> k,
                                             std::optional<std::size_t> n) const {
    const auto start = Clock::now();
    const auto theta_star = theta();
    if (!theta_star) {
        throw Error(ErrorCode::ThetaUnset,
                    "no calibrated threshold; POST /v1/calibrate or run `refdx calibrate` first");
    }
    const auto state = current();
    const std::size_t kk = k.value_or(config_.k_neighbors);
    DiagnosisResponse r;
    r.prediction = predict(query, state->index(), kk, n.value_or(config_.top_n),
                           {config_.search_threads});
    r.confidence = mc_predict(query, state->ensemble(), kk, *theta_star);
    r.generation = state->generation();
    r.timing_ms = elapsed_ms(start);
    return r;
}

RetrievalResponse Engine::retrieve(const Embedding& query, std::optional<std::size_t> k) const {
    const auto start = Clock::now();
    const auto state = current();
    RetrievalResponse r;
    r.hits = retrieve_cases(state->case_store(), query, k.value_or(kDefaultCaseCount),
                            {config_.search_threads});
    r.generation = state->generation();
    r.timing_ms = elapsed_ms(start);
    return r;
}

AugmentOutcome Engine::augment(std::span<const ManifestRecord> records, const std::string& site_id) {
    if (site_id.empty()) throw Error(ErrorCode::InvalidArgument, "site_id must not be empty");
    std::lock_guard writer(writer_mu_);
    const auto base = current();
    const auto local = ingest_local(records, *base->library(), site_id);
    SnapshotPtr merged = merge(*base->library(), local);

    SiteRegistry sites = base->sites();
    sites.record_merge(site_id, local.size(), merged->generation());
    auto next = std::make_shared<const ServingState>(merged, config_.ensemble, std::move(sites),
                                                     case_store_);

    if (config_.persist_library && !config_.library_path.empty()) {
        const std::filesystem::path tmp = config_.library_path.string() + ".tmp";
        save_library(*merged, tmp);
        std::error_code ec;
        std::filesystem::rename(tmp, config_.library_path, ec);
        if (ec) {
            throw Error(ErrorCode::IoFailure, "cannot replace library: " + ec.message(),
                        config_.library_path.string());
        }
        EngineState st = load_state(config_.effective_state_path()).value_or(EngineState{});
        st.library_generation = merged->generation();
        save_state(config_.effective_state_path(), st);
    }

    publish(next);
    return AugmentOutcome{site_id, base->generation(), merged->generation(), local.size()};
}

void Engine::store_theta(double theta) {
    if (has_state_path(config_)) {
        EngineState st = load_state(config_.effective_state_path()).value_or(EngineState{});
        st.theta_star = theta;
        st.calibrated_generation = current()->generation();
        save_state(config_.effective_state_path(), st);
    }
    std::lock_guard lock(state_mu_);
    theta_ = theta;
}

CalibrationResult Engine::calibrate(std::span<const ScoredPrediction> scored) {
    std::lock_guard writer(writer_mu_);
    CalibrationResult result = calibrate_threshold(scored);
    store_theta(result.theta_star);
    return result;
}

ClassId Engine::truth_of(const ManifestRecord& record) const {
    if (!record.label) {
        throw Error(ErrorCode::InvalidArgument,
                    "record " + std::to_string(record.id) + " has no label",
                    std::to_string(record.id));
    }
    return current()->library()->catalog().id_of(*record.label);
}

ValidationCalibration Engine::calibrate_validation(std::span<const ManifestRecord> validation) {
    if (validation.empty()) throw Error(ErrorCode::EmptyManifest, "validation set is empty");
    std::lock_guard writer(writer_mu_);
    const auto state = current();
    const LabelCatalog& catalog = state->library()->catalog();
    const std::size_t num_classes = catalog.size();

    std::vector<ScoredPrediction> scored;
    std::vector<Prediction> predictions;
    std::vector<ClassId> truths;
    for (const auto& rec : validation) {
        const ClassId truth = truth_of(rec);
        const Embedding q = normalize(rec.vector);
        const ConfidenceReport c = mc_predict(q, state->ensemble(), config_.k_neighbors, 0.0);
        scored.push_back({c.cscore, c.final_class == truth});
        predictions.push_back(predict(q, state->index(), config_.k_neighbors, num_classes,
                                      {config_.search_threads}));
        truths.push_back(truth);
    }
    ValidationCalibration out;
    out.calibration = calibrate_threshold(scored);
    out.metrics = refdx::evaluate(predictions, truths, default_ks(num_classes), num_classes);
    out.generation = state->generation();
    store_theta(out.calibration.theta_star);
    std::lock_guard lock(state_mu_);
    metrics_ = out.metrics;
    return out;
}

MetricsReport Engine::evaluate(std::span<const ManifestRecord> test,
                               std::span<const std::size_t> ks) {
    const auto state = current();
    const std::size_t num_classes = state->library()->catalog().size();
    std::vector<Prediction> predictions;
    std::vector<ClassId> truths;
    predictions.reserve(test.size());
    for (const auto& rec : test) {
        truths.push_back(truth_of(rec));
        predictions.push_back(predict(normalize(rec.vector), state->index(), config_.k_neighbors,
                                      num_classes, {config_.search_threads}));
    }
    const std::vector<std::size_t> chosen =
        ks.empty() ? default_ks(num_classes) : std::vector<std::size_t>(ks.begin(), ks.end());
    MetricsReport report = refdx::evaluate(predictions, truths, chosen, num_classes);
    std::lock_guard lock(state_mu_);
    metrics_ = report;
    return report;
}

nlohmann::json Engine::health() const {
    const auto state = current();
    const auto theta_star = theta();
    const auto& lib = *state->library();
    return nlohmann::json{
        {"status", "ok"},
        {"generation", state->generation()},
        {"dim", lib.dim()},
        {"items",
         {{"total", lib.size()},
          {"base", lib.count(Provenance::Base)},
          {"local", lib.count(Provenance::Local)}}},
        {"sites", state->sites()},
        {"classes", lib.catalog().names()},
        {"theta_star", theta_star ? nlohmann::json(*theta_star) : nlohmann::json(nullptr)},
        {"case_store_items", case_store_ ? case_store_->size() : lib.size()}};
}

Embedding Engine::featurize(const RgbImage& image) const {
    return toy_featurize(image, current()->library()->dim(), config_.featurizer_seed);
}

}  // namespace refdx::service
