#include "refdx/json.hpp"

namespace refdx {

using nlohmann::json;

void to_json(json& j, const Hit& hit) {
    j = json{{"item_id", hit.item_id},
             {"class_id", hit.class_id ? json(*hit.class_id) : json(nullptr)},
             {"provenance", std::string(to_string(hit.provenance))},
             {"score", hit.score}};
}

void to_json(json& j, const RankedHits& hits) { j = hits.entries; }

void to_json(json& j, const LabelScore& label) {
    j = json{{"class_id", label.class_id}, {"score", label.score}};
}

void to_json(json& j, const Prediction& prediction) {
    j = json{{"ranked_labels", prediction.ranked_labels},
             {"neighbors_used", prediction.neighbors_used}};
}

void to_json(json& j, const MetricsReport& report) {
    json topk = json::object(), recall = json::object(), macro = json::object();
    for (const auto& [k, acc] : report.top_k_accuracy) topk[std::to_string(k)] = acc;
    for (const auto& [k, per_class] : report.per_class_recall) {
        json row = json::object();
        for (const auto& [cls, r] : per_class) row[std::to_string(cls)] = r;
        recall[std::to_string(k)] = row;
    }
    for (const auto& [k, r] : report.macro_recall) macro[std::to_string(k)] = r;
    j = json{{"topk", topk},
             {"recall", recall},
             {"macro_recall", macro},
             {"confusion", report.confusion_top1},
             {"n", report.n_samples}};
}

void from_json(const json& j, MetricsReport& report) {
    report = MetricsReport{};
    for (const auto& [k, acc] : j.at("topk").items()) {
        report.top_k_accuracy[std::stoul(k)] = acc.get<double>();
    }
    for (const auto& [k, row] : j.at("recall").items()) {
        auto& dst = report.per_class_recall[std::stoul(k)];
        for (const auto& [cls, r] : row.items()) dst[std::stoi(cls)] = r.get<double>();
    }
    for (const auto& [k, r] : j.at("macro_recall").items()) {
        report.macro_recall[std::stoul(k)] = r.get<double>();
    }
    report.confusion_top1 = j.at("confusion").get<std::vector<std::vector<std::uint64_t>>>();
    report.n_samples = j.at("n").get<std::size_t>();
}

void to_json(json& j, const ConfidenceReport& report) {
    json votes = json::object();
    for (const auto& [cls, count] : report.votes) votes[std::to_string(cls)] = count;
    j = json{{"final_class", report.final_class},
             {"cscore", report.cscore},
             {"reliable", report.reliable},
             {"theta", report.theta},
             {"votes", votes}};
}

void to_json(json& j, const CalibrationResult& result) {
    json curve = json::array();
    for (const auto& p : result.curve) {
        curve.push_back(json{{"theta", p.theta},
                             {"sensitivity", p.sensitivity},
                             {"specificity", p.specificity},
                             {"j", p.youden}});
    }
    j = json{{"theta_star", result.theta_star},
             {"j_star", result.youden_star},
             {"positives", result.positives},
             {"negatives", result.negatives},
             {"curve", curve}};
}

void to_json(json& j, const TriageResult& result) {
    j = json{{"retained", result.retained}, {"flagged", result.flagged}};
}

void to_json(json& j, const CaseHit& hit) {
    j = hit.hit;
    j["external_ref"] = hit.external_ref;
    j["source_tag"] = hit.source_tag;
}

void to_json(json& j, const HitRateReport& report) {
    auto keyed = [](const std::map<std::size_t, double>& m) {
        json o = json::object();
        for (const auto& [k, v] : m) o[std::to_string(k)] = v;
        return o;
    };
    json per = json::object();
    for (const auto& [reviewer, rates] : report.per_reviewer) per[reviewer] = keyed(rates);
    j = json{{"per_reviewer", per}, {"average", keyed(report.average)}};
}

void to_json(json& j, const SiteRegistry& registry) {
    j = json::object();
    for (const auto& [site, info] : registry.sites()) {
        j[site] = json{{"local_items", info.local_items},
                       {"source_tag", info.source_tag},
                       {"last_merge_generation", info.last_merge_generation}};
    }
}

void to_json(json& j, const ReviewSheet& sheet) {
    json queries = json::array();
    for (const auto& q : sheet.queries) {
        json verdicts = json::object();
        for (const auto& [reviewer, row] : q.verdicts) verdicts[reviewer] = row;
        queries.push_back(
            json{{"query_id", q.query_id}, {"candidates", q.candidates}, {"verdicts", verdicts}});
    }
    j = json{{"reviewers", sheet.reviewers}, {"queries", queries}};
}

void from_json(const json& j, ReviewSheet& sheet) {
    sheet = ReviewSheet{};
    try {
        sheet.reviewers = j.at("reviewers").get<std::vector<std::string>>();
        for (const auto& qj : j.at("queries")) {
            ReviewQuery q;
            q.query_id = qj.at("query_id").is_string() ? qj.at("query_id").get<std::string>()
                                                       : qj.at("query_id").dump();
            q.candidates = qj.at("candidates").get<std::vector<ItemId>>();
            for (const auto& [reviewer, row] : qj.at("verdicts").items()) {
                q.verdicts[reviewer] = row.get<std::vector<bool>>();
            }
            sheet.queries.push_back(std::move(q));
        }
    } catch (const json::exception& e) {
        throw Error(ErrorCode::MalformedBody, std::string("malformed review sheet: ") + e.what());
    }
}

void from_json(const json& j, ScoredPrediction& scored) {
    if (j.is_array()) {
        scored.cscore = j.at(0).get<double>();
        scored.correct = j.at(1).get<bool>();
    } else {
        scored.cscore = j.at("cscore").get<double>();
        scored.correct = j.at("correct").get<bool>();
    }
}

json error_json(const Error& error) {
    return json{{"code", std::string(to_string(error.code()))},
                {"message", error.what()},
                {"detail", error.detail()}};
}

json named_prediction_json(const Prediction& prediction, const LabelCatalog& catalog) {
    json labels = json::array();
    for (const auto& l : prediction.ranked_labels) {
        labels.push_back(json{{"class_id", l.class_id},
                              {"name", catalog.contains(l.class_id) ? catalog.name(l.class_id) : ""},
                              {"score", l.score}});
    }
    return labels;
}

}  // namespace refdx
