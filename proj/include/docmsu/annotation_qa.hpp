// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "docmsu/data_model.hpp"
#include "json.hpp"

namespace docmsu {

struct SimilarityScore {
    double tiou = 0.0;  ///< mean clamped span IoU over all targets
    double viou = 0.0;  ///< mean box IoU over all targets
    double total = 0.0;
};

struct ConfidenceReport {
    std::string sample_id;
    std::map<std::string, double> per_annotator;
    std::string best;
    double sample_confidence = 0.0;
    bool challenging = false;
};

/// Interval IoU of two token spans:
///   (min(a.end, b.end) - max(a.start, b.start)) / (max(a.end, b.end) - min(a.start, b.start)).
/// Negative for disjoint spans; callers that aggregate clamp at zero.
double text_iou(const TokenSpan& a, const TokenSpan& b);

double visual_iou(const BoundingBox& a, const BoundingBox& b);

/// Matches targets one-to-one greedily by descending (clamped) IoU; only pairs
/// with positive overlap are matched. Each modality scores
///   sum(matched IoU) / (|a| + |b| - matched)
/// so unmatched targets on either side count as zero. A modality empty on both
/// sides counts as full agreement.
SimilarityScore annotation_similarity(const AnnotationSet& a, const AnnotationSet& b);

/// Per-annotator confidence is the sum of its two pairwise similarity totals;
/// the sample confidence is the sum of all three pairwise totals.
ConfidenceReport confidence_scores(std::span<const AnnotationSet> annotations,
                                   const std::string& sample_id = {});

/// Flags the ceil(fraction * N) reports with the lowest sample confidence
/// (ties broken by sample id).
void flag_challenging(std::vector<ConfidenceReport>& reports, double fraction = 0.05);

AnnotationSet annotation_from_json(const nlohmann::json& j);
nlohmann::ordered_json report_to_json(const ConfidenceReport& report);

}  // namespace docmsu
