// SPDX-License-Identifier: Apache-2.0
#include "docmsu/annotation_qa.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <tuple>

#include "docmsu/errors.hpp"

namespace docmsu {
namespace {

struct Candidate {
    double iou;
    std::size_t i;
    std::size_t j;
};

template <typename T, typename IouFn>
double greedy_agreement(const std::vector<T>& a, const std::vector<T>& b, IouFn iou) {
    if (a.empty() && b.empty()) return 1.0;
    std::vector<Candidate> cands;
    for (std::size_t i = 0; i < a.size(); ++i) {
        for (std::size_t j = 0; j < b.size(); ++j) {
            const double v = std::max(0.0, iou(a[i], b[j]));
            if (v > 0.0) cands.push_back({v, i, j});
        }
    }
    std::stable_sort(cands.begin(), cands.end(), [](const Candidate& x, const Candidate& y) {
        return std::tie(y.iou, x.i, x.j) < std::tie(x.iou, y.i, y.j);
    });
    std::vector<bool> used_a(a.size(), false);
    std::vector<bool> used_b(b.size(), false);
    double sum = 0.0;
    std::size_t matched = 0;
    for (const auto& c : cands) {
        if (used_a[c.i] || used_b[c.j]) continue;
        used_a[c.i] = used_b[c.j] = true;
        sum += c.iou;
        ++matched;
    }
    return sum / static_cast<double>(a.size() + b.size() - matched);
}

}  // namespace

double text_iou(const TokenSpan& a, const TokenSpan& b) {
    const double inter = std::min(a.end, b.end) - std::max(a.start, b.start);
    const double hull = std::max(a.end, b.end) - std::min(a.start, b.start);
    return inter / hull;
}

double visual_iou(const BoundingBox& a, const BoundingBox& b) {
    const double iw = std::max(0.0, std::min(a.x2(), b.x2()) - std::max(a.x, b.x));
    const double ih = std::max(0.0, std::min(a.y2(), b.y2()) - std::max(a.y, b.y));
    const double inter = iw * ih;
    const double uni = a.area() + b.area() - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

SimilarityScore annotation_similarity(const AnnotationSet& a, const AnnotationSet& b) {
    if (a.empty() || b.empty()) {
        throw ValidationError("similarity is undefined for an empty annotation");
    }
    SimilarityScore s;
    s.tiou = greedy_agreement(a.spans, b.spans, text_iou);
    s.viou = greedy_agreement(a.boxes, b.boxes, visual_iou);
    s.total = s.tiou + s.viou;
    return s;
}

ConfidenceReport confidence_scores(std::span<const AnnotationSet> annotations,
                                   const std::string& sample_id) {
    if (annotations.size() != 3) {
        throw ValidationError("sample '" + sample_id + "': expected exactly 3 annotations, got " +
                              std::to_string(annotations.size()));
    }
    // Canonical order keeps the floating-point sums independent of input order.
    std::vector<const AnnotationSet*> sorted;
    for (const auto& a : annotations) sorted.push_back(&a);
    std::sort(sorted.begin(), sorted.end(),
              [](const AnnotationSet* x, const AnnotationSet* y) { return x->annotator_id < y->annotator_id; });
    for (std::size_t i = 1; i < sorted.size(); ++i) {
        if (sorted[i]->annotator_id == sorted[i - 1]->annotator_id) {
            throw ValidationError("sample '" + sample_id + "': duplicate annotator '" +
                                  sorted[i]->annotator_id + "'");
        }
    }

    const double t01 = annotation_similarity(*sorted[0], *sorted[1]).total;
    const double t02 = annotation_similarity(*sorted[0], *sorted[2]).total;
    const double t12 = annotation_similarity(*sorted[1], *sorted[2]).total;

    ConfidenceReport r;
    r.sample_id = sample_id;
    r.per_annotator[sorted[0]->annotator_id] = t01 + t02;
    r.per_annotator[sorted[1]->annotator_id] = t01 + t12;
    r.per_annotator[sorted[2]->annotator_id] = t02 + t12;
    r.sample_confidence = t01 + t02 + t12;

    // std::map iterates in id order, so the first maximum is the lowest id.
    double best = -1.0;
    for (const auto& [id, score] : r.per_annotator) {
        if (score > best) {
            best = score;
            r.best = id;
        }
    }
    return r;
}

void flag_challenging(std::vector<ConfidenceReport>& reports, double fraction) {
    if (reports.empty()) throw ValidationError("flag_challenging needs at least one report");
    if (!(fraction > 0.0 && fraction < 1.0)) {
        throw ValidationError("challenging fraction must lie in (0, 1)");
    }
    const auto n = reports.size();
    const auto k = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
        const auto& a = reports[x];
        const auto& b = reports[y];
        if (a.sample_confidence != b.sample_confidence) return a.sample_confidence < b.sample_confidence;
        return a.sample_id < b.sample_id;
    });
    for (auto& r : reports) r.challenging = false;
    for (std::size_t i = 0; i < std::min(k, n); ++i) reports[order[i]].challenging = true;
}

AnnotationSet annotation_from_json(const nlohmann::json& j) {
    AnnotationSet a;
    try {
        a.annotator_id = j.at("annotator_id").get<std::string>();
        for (const auto& s : j.value("spans", nlohmann::json::array())) {
            if (!s.is_array() || s.size() != 2) throw ValidationError("span must be [start,end]");
            const TokenSpan span{s[0].get<int>(), s[1].get<int>()};
            if (span.start < 0 || span.start >= span.end) throw ValidationError("invalid span");
            a.spans.push_back(span);
        }
        for (const auto& b : j.value("boxes", nlohmann::json::array())) {
            if (!b.is_array() || b.size() != 4) throw ValidationError("box must be [x,y,w,h]");
            const BoundingBox box{b[0].get<double>(), b[1].get<double>(), b[2].get<double>(),
                                  b[3].get<double>()};
            if (!(box.w > 0.0) || !(box.h > 0.0)) throw ValidationError("box with non-positive size");
            a.boxes.push_back(box);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("annotation: ") + e.what());
    }
    return a;
}

nlohmann::ordered_json report_to_json(const ConfidenceReport& r) {
    nlohmann::ordered_json j;
    j["id"] = r.sample_id;
    nlohmann::ordered_json per = nlohmann::ordered_json::object();
    for (const auto& [id, score] : r.per_annotator) per[id] = score;
    j["per_annotator"] = std::move(per);
    j["best"] = r.best;
    j["sample_confidence"] = r.sample_confidence;
    j["challenging"] = r.challenging;
    return j;
}

}  // namespace docmsu
