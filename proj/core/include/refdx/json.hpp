#pragma once

// JSON shapes shared by the service, the CLI and the harness.

#include <nlohmann/json.hpp>

#include "refdx/augment.hpp"
#include "refdx/confidence.hpp"
#include "refdx/diagnosis.hpp"
#include "refdx/error.hpp"
#include "refdx/retrieval.hpp"

namespace refdx {

void to_json(nlohmann::json& j, const Hit& hit);
void to_json(nlohmann::json& j, const RankedHits& hits);
void to_json(nlohmann::json& j, const LabelScore& label);
void to_json(nlohmann::json& j, const Prediction& prediction);
/// {"topk": {k: acc}, "recall": {k: {class: r}}, "macro_recall": {k: r},
///  "confusion": [[...]], "n": N}
void to_json(nlohmann::json& j, const MetricsReport& report);
void from_json(const nlohmann::json& j, MetricsReport& report);
void to_json(nlohmann::json& j, const ConfidenceReport& report);
void to_json(nlohmann::json& j, const CalibrationResult& result);
void to_json(nlohmann::json& j, const TriageResult& result);
void to_json(nlohmann::json& j, const CaseHit& hit);
void to_json(nlohmann::json& j, const HitRateReport& report);
void to_json(nlohmann::json& j, const SiteRegistry& registry);
/// {"reviewers": [...], "queries": [{"query_id", "candidates", "verdicts": {reviewer: [bool]}}]}
void to_json(nlohmann::json& j, const ReviewSheet& sheet);
void from_json(const nlohmann::json& j, ReviewSheet& sheet);
void from_json(const nlohmann::json& j, ScoredPrediction& scored);

/// {"code": "DIM_MISMATCH", "message": ..., "detail": ...}
nlohmann::json error_json(const Error& error);

/// Prediction with class names attached to each ranked label.
nlohmann::json named_prediction_json(const Prediction& prediction, const LabelCatalog& catalog);

}  // namespace refdx
