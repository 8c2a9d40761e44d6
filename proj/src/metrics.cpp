// SPDX-License-Identifier: Apache-2.0
#include "docmsu/metrics.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>

#include <spdlog/spdlog.h>

#include "docmsu/annotation_qa.hpp"
#include "docmsu/errors.hpp"

namespace docmsu {

TokenPredictionSet TokenPredictionSet::from_indices(std::vector<int> indices, int n) {
    std::sort(indices.begin(), indices.end());
    indices.erase(std::unique(indices.begin(), indices.end()), indices.end());
    for (int i : indices) {
        if (i < 0 || i >= n) {
            throw ValidationError("token index " + std::to_string(i) + " outside [0," + std::to_string(n) + ")");
        }
    }
    return {std::move(indices), n};
}

TokenPredictionSet TokenPredictionSet::from_spans(std::span<const TokenSpan> spans, int n, bool clip) {
    std::vector<int> idx;
    for (const auto& s : spans) {
        const int end = clip ? std::min(s.end, n) : s.end;
        for (int t = s.start; t < end; ++t) idx.push_back(t);
    }
    return from_indices(std::move(idx), n);
}

TokenPredictionSet TokenPredictionSet::from_probs(std::span<const double> probs, int n, double threshold) {
    std::vector<int> idx;
    for (std::size_t i = 0; i < probs.size() && static_cast<int>(i) < n; ++i) {
        if (probs[i] >= threshold) idx.push_back(static_cast<int>(i));
    }
    return {std::move(idx), n};
}

namespace {

void check_same_n(const TokenPredictionSet& a, const TokenPredictionSet& b) {
    if (a.n != b.n) {
        throw ValidationError("token sets disagree on document length (" + std::to_string(a.n) + " vs " +
                              std::to_string(b.n) + ")");
    }
}

std::size_t intersection_size(const std::vector<int>& a, const std::vector<int>& b) {
    std::size_t i = 0;
    std::size_t j = 0;
    std::size_t k = 0;
    while (i < a.size() && j < b.size()) {
        if (a[i] < b[j]) {
            ++i;
        } else if (b[j] < a[i]) {
            ++j;
        } else {
            ++k;
            ++i;
            ++j;
        }
    }
    return k;
}

}  // namespace

double token_set_iou(const TokenPredictionSet& pred, const TokenPredictionSet& gold) {
    check_same_n(pred, gold);
    const auto inter = intersection_size(pred.positives, gold.positives);
    const auto uni = pred.positives.size() + gold.positives.size() - inter;
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

bool exact_match_at(const TokenPredictionSet& pred, const TokenPredictionSet& gold, double threshold,
                    bool strict_inequality) {
    check_same_n(pred, gold);
    if (!(threshold > 0.0 && threshold <= 1.0)) throw ValidationError("EM threshold must lie in (0, 1]");
    if (threshold >= 1.0) return pred.positives == gold.positives;
    const double iou = token_set_iou(pred, gold);
    return strict_inequality ? iou > threshold : iou >= threshold;
}

double bit_error(const TokenPredictionSet& pred, const TokenPredictionSet& gold) {
    check_same_n(pred, gold);
    if (pred.n <= 0) throw ValidationError("bit_error of an empty document");
    const auto inter = intersection_size(pred.positives, gold.positives);
    const auto sym = pred.positives.size() + gold.positives.size() - 2 * inter;
    return static_cast<double>(sym) / static_cast<double>(pred.n);
}

TextLocalizationMetrics text_localization_metrics(std::span<const TokenPredictionSet> preds,
                                                  std::span<const TokenPredictionSet> golds,
                                                  const EmOptions& opt) {
    if (preds.size() != golds.size()) throw ValidationError("prediction/gold count mismatch");
    TextLocalizationMetrics m;
    if (preds.empty()) return m;
    std::size_t denom = 0;
    std::size_t hit100 = 0;
    std::size_t hit70 = 0;
    std::size_t hit50 = 0;
    double bits = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        bits += bit_error(preds[i], golds[i]);
        if (preds[i].positives.empty() && !opt.count_empty_predictions) continue;
        ++denom;
        hit100 += exact_match_at(preds[i], golds[i], 1.0, opt.strict_inequality);
        hit70 += exact_match_at(preds[i], golds[i], 0.7, opt.strict_inequality);
        hit50 += exact_match_at(preds[i], golds[i], 0.5, opt.strict_inequality);
    }
    m.bit_error = bits / static_cast<double>(preds.size());
    if (denom > 0) {
        const auto d = static_cast<double>(denom);
        m.em = static_cast<double>(hit100) / d;
        m.em70 = static_cast<double>(hit70) / d;
        m.em50 = static_cast<double>(hit50) / d;
    }
    return m;
}

namespace {

struct MatchOutcome {
    std::vector<std::pair<double, bool>> scored;  // (score, is_tp) in processing order
    std::size_t n_gold = 0;
};

MatchOutcome greedy_match(std::span<const std::vector<ScoredBox>> preds,
                          std::span<const std::vector<BoundingBox>> golds, double iou_threshold,
                          double conf_threshold) {
    if (preds.size() != golds.size()) throw ValidationError("prediction/gold image count mismatch");
    struct Entry {
        double score;
        std::size_t image;
        std::size_t index;
    };
    std::vector<Entry> all;
    for (std::size_t im = 0; im < preds.size(); ++im) {
        for (std::size_t k = 0; k < preds[im].size(); ++k) {
            if (preds[im][k].score >= conf_threshold) all.push_back({preds[im][k].score, im, k});
        }
    }
    std::stable_sort(all.begin(), all.end(), [](const Entry& a, const Entry& b) { return a.score > b.score; });

    MatchOutcome out;
    std::vector<std::vector<bool>> used(golds.size());
    for (std::size_t im = 0; im < golds.size(); ++im) {
        used[im].assign(golds[im].size(), false);
        out.n_gold += golds[im].size();
    }
    for (const auto& e : all) {
        const auto& box = preds[e.image][e.index].box;
        double best = -1.0;
        std::size_t best_j = 0;
        for (std::size_t j = 0; j < golds[e.image].size(); ++j) {
            if (used[e.image][j]) continue;
            const double iou = visual_iou(box, golds[e.image][j]);
            if (iou > best) {
                best = iou;
                best_j = j;
            }
        }
        const bool tp = best >= iou_threshold;
        if (tp) used[e.image][best_j] = true;
        out.scored.emplace_back(e.score, tp);
    }
    return out;
}

}  // namespace

double average_precision(std::span<const std::vector<ScoredBox>> preds,
                         std::span<const std::vector<BoundingBox>> golds, double iou_threshold) {
    const auto m = greedy_match(preds, golds, iou_threshold, -std::numeric_limits<double>::infinity());
    if (m.n_gold == 0) throw ValidationError("average_precision: corpus has no gold boxes");
    if (m.scored.empty()) return 0.0;

    const std::size_t k = m.scored.size();
    std::vector<double> recall(k);
    std::vector<double> precision(k);
    double tp = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        tp += m.scored[i].second ? 1.0 : 0.0;
        recall[i] = tp / static_cast<double>(m.n_gold);
        precision[i] = tp / static_cast<double>(i + 1);
    }
    // Precision envelope, then area under the step curve.
    for (std::size_t i = k - 1; i-- > 0;) precision[i] = std::max(precision[i], precision[i + 1]);
    double ap = 0.0;
    double prev_recall = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        ap += (recall[i] - prev_recall) * precision[i];
        prev_recall = recall[i];
    }
    return ap;
}

double f1_at_iou(std::span<const std::vector<ScoredBox>> preds, std::span<const std::vector<BoundingBox>> golds,
                 double iou_threshold, double conf_threshold) {
    const auto m = greedy_match(preds, golds, iou_threshold, conf_threshold);
    const auto tp = static_cast<double>(
        std::count_if(m.scored.begin(), m.scored.end(), [](const auto& s) { return s.second; }));
    const auto n_pred = static_cast<double>(m.scored.size());
    const auto n_gold = static_cast<double>(m.n_gold);
    const double p = n_pred > 0 ? tp / n_pred : 0.0;
    const double r = n_gold > 0 ? tp / n_gold : 0.0;
    return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
}

DetectionMetrics detection_metrics(std::span<const double> probs, const std::vector<bool>& labels, double cutoff) {
    if (probs.size() != labels.size() || probs.empty()) {
        throw ValidationError("detection_metrics needs equal, non-zero lengths");
    }
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const bool pred = probs[i] >= cutoff;
        correct += pred == labels[i];
        tp += pred && labels[i];
        fp += pred && !labels[i];
        fn += !pred && labels[i];
    }
    DetectionMetrics m;
    m.acc = static_cast<double>(correct) / static_cast<double>(probs.size());
    m.precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    const double recall = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    m.f1 = m.precision + recall > 0.0 ? 2.0 * m.precision * recall / (m.precision + recall) : 0.0;
    return m;
}

MetricReport evaluate_predictions(std::span<const SamplePrediction> preds, std::span<const DatasetRecord> gold,
                                  const MetricOptions& opt) {
    std::map<std::string, const SamplePrediction*> by_id;
    for (const auto& p : preds) {
        if (!by_id.emplace(p.id, &p).second) throw ValidationError("duplicate prediction id '" + p.id + "'");
    }
    std::vector<std::string> missing;
    for (const auto& r : gold) {
        if (!by_id.count(r.id)) missing.push_back(r.id);
    }
    if (!missing.empty()) {
        std::string msg = "no prediction for " + std::to_string(missing.size()) + " record(s):";
        for (std::size_t i = 0; i < std::min<std::size_t>(missing.size(), 10); ++i) msg += " " + missing[i];
        throw ValidationError(msg);
    }
    if (preds.size() > gold.size()) {
        spdlog::warn("{} prediction(s) have no gold record and are ignored", preds.size() - gold.size());
    }

    std::vector<double> probs;
    std::vector<bool> labels;
    std::vector<TokenPredictionSet> tok_pred;
    std::vector<TokenPredictionSet> tok_gold;
    std::vector<std::vector<ScoredBox>> box_pred;
    std::vector<std::vector<BoundingBox>> box_gold;
    for (const auto& r : gold) {
        const auto& p = *by_id.at(r.id);
        probs.push_back(p.sarcasm_prob);
        labels.push_back(r.sarcastic);
        if (!r.sarcastic || !r.gold) continue;
        const int n = r.token_count();
        tok_gold.push_back(TokenPredictionSet::from_spans(r.gold->spans, n));
        tok_pred.push_back(p.tokens ? TokenPredictionSet::from_indices(*p.tokens, n)
                                    : TokenPredictionSet::from_probs(p.token_probs, n, opt.token_threshold));
        box_pred.push_back(p.boxes);
        box_gold.push_back(r.gold->boxes);
    }

    MetricReport rep;
    const auto det = detection_metrics(probs, labels, opt.detection_cutoff);
    rep.acc = det.acc;
    rep.precision = det.precision;
    rep.f1 = det.f1;

    const auto text = text_localization_metrics(tok_pred, tok_gold, opt.em);
    rep.em = text.em;
    rep.em50 = text.em50;
    rep.em70 = text.em70;
    rep.bit_error = text.bit_error;

    const bool any_gold_box = std::any_of(box_gold.begin(), box_gold.end(), [](const auto& b) { return !b.empty(); });
    if (any_gold_box) {
        rep.ap50 = average_precision(box_pred, box_gold, 0.5);
        rep.ap60 = average_precision(box_pred, box_gold, 0.6);
        rep.f1_50 = f1_at_iou(box_pred, box_gold, 0.5, opt.box_conf_threshold);
        rep.f1_60 = f1_at_iou(box_pred, box_gold, 0.6, opt.box_conf_threshold);
    } else {
        spdlog::warn("no gold boxes in the evaluated records; AP and F1 reported as 0");
    }
    return rep;
}

nlohmann::ordered_json report_to_json(const MetricReport& r) {
    nlohmann::ordered_json j;
    j["em"] = r.em;
    j["em50"] = r.em50;
    j["em70"] = r.em70;
    j["bit_error"] = r.bit_error;
    j["ap50"] = r.ap50;
    j["ap60"] = r.ap60;
    j["f1_50"] = r.f1_50;
    j["f1_60"] = r.f1_60;
    j["acc"] = r.acc;
    j["precision"] = r.precision;
    j["f1"] = r.f1;
    return j;
}

MetricReport metric_report_from_json(const nlohmann::json& j) {
    MetricReport r;
    r.em = j.at("em").get<double>();
    r.em50 = j.at("em50").get<double>();
    r.em70 = j.at("em70").get<double>();
    r.bit_error = j.at("bit_error").get<double>();
    r.ap50 = j.at("ap50").get<double>();
    r.ap60 = j.at("ap60").get<double>();
    r.f1_50 = j.at("f1_50").get<double>();
    r.f1_60 = j.at("f1_60").get<double>();
    r.acc = j.at("acc").get<double>();
    r.precision = j.at("precision").get<double>();
    r.f1 = j.at("f1").get<double>();
    return r;
}

nlohmann::ordered_json prediction_to_json(const SamplePrediction& p) {
    nlohmann::ordered_json j;
    j["id"] = p.id;
    j["sarcasm_prob"] = p.sarcasm_prob;
    j["token_probs"] = p.token_probs;
    if (p.tokens) j["tokens"] = *p.tokens;
    auto boxes = nlohmann::ordered_json::array();
    for (const auto& b : p.boxes) boxes.push_back({b.box.x, b.box.y, b.box.w, b.box.h, b.score});
    j["boxes"] = std::move(boxes);
    return j;
}

SamplePrediction prediction_from_json(const nlohmann::json& j) {
    SamplePrediction p;
    try {
        p.id = j.at("id").get<std::string>();
        p.sarcasm_prob = j.at("sarcasm_prob").get<double>();
        if (j.contains("token_probs")) p.token_probs = j.at("token_probs").get<std::vector<double>>();
        if (j.contains("tokens")) p.tokens = j.at("tokens").get<std::vector<int>>();
        for (const auto& b : j.value("boxes", nlohmann::json::array())) {
            if (!b.is_array() || b.size() != 5) throw ValidationError("box must be [x,y,w,h,score]");
            p.boxes.push_back({{b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()},
                               b[4].get<double>()});
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("prediction: ") + e.what());
    }
    if (!(p.sarcasm_prob >= 0.0 && p.sarcasm_prob <= 1.0)) {
        throw ValidationError("prediction '" + p.id + "': sarcasm_prob outside [0,1]");
    }
    return p;
}

std::vector<SamplePrediction> load_predictions(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw MissingArtifactError("predictions not found: " + path.string());
    std::ifstream in(path);
    std::vector<SamplePrediction> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(prediction_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::parse_error& e) {
            throw ValidationError("predictions line " + std::to_string(lineno) + ": malformed JSON");
        } catch (const ValidationError& e) {
            throw ValidationError("predictions line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace docmsu
