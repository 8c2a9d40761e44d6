// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "docmsu/data_model.hpp"
#include "json.hpp"

namespace docmsu {

/// Sorted, de-duplicated indices of tokens predicted (or annotated) sarcastic.
struct TokenPredictionSet {
    std::vector<int> positives;
    int n = 0;

    static TokenPredictionSet from_indices(std::vector<int> indices, int n);
    /// With `clip`, tokens at or past n are dropped instead of rejected
    /// (targets of a truncated document).
    static TokenPredictionSet from_spans(std::span<const TokenSpan> spans, int n, bool clip = false);
    static TokenPredictionSet from_probs(std::span<const double> probs, int n, double threshold = 0.5);
};

struct ScoredBox {
    BoundingBox box;
    double score = 0.0;
};

struct EmOptions {
    /// Overlap must exceed the threshold instead of reaching it.
    bool strict_inequality = false;
    /// Samples with no predicted tokens count in the denominator (as misses).
    bool count_empty_predictions = false;
};

struct MetricReport {
    double em = 0.0;
    double em50 = 0.0;
    double em70 = 0.0;
    double bit_error = 0.0;
    double ap50 = 0.0;
    double ap60 = 0.0;
    double f1_50 = 0.0;
    double f1_60 = 0.0;
    double acc = 0.0;
    double precision = 0.0;
    double f1 = 0.0;
};

struct DetectionMetrics {
    double acc = 0.0;
    double precision = 0.0;
    double f1 = 0.0;
};

struct TextLocalizationMetrics {
    double em = 0.0;
    double em50 = 0.0;
    double em70 = 0.0;
    double bit_error = 0.0;
};

/// Token-set IoU |pred & gold| / |pred | gold|; 1 when both sets are empty.
double token_set_iou(const TokenPredictionSet& pred, const TokenPredictionSet& gold);

/// threshold 1.0 means set equality; otherwise token-set IoU against the threshold.
bool exact_match_at(const TokenPredictionSet& pred, const TokenPredictionSet& gold, double threshold,
                    bool strict_inequality = false);

/// |pred xor gold| / n.
double bit_error(const TokenPredictionSet& pred, const TokenPredictionSet& gold);

TextLocalizationMetrics text_localization_metrics(std::span<const TokenPredictionSet> preds,
                                                  std::span<const TokenPredictionSet> golds,
                                                  const EmOptions& options = {});

/// All-point interpolated AP with corpus-wide score ordering and greedy
/// matching of each prediction to the best still-unmatched gold box.
double average_precision(std::span<const std::vector<ScoredBox>> preds,
                         std::span<const std::vector<BoundingBox>> golds, double iou_threshold);

double f1_at_iou(std::span<const std::vector<ScoredBox>> preds,
                 std::span<const std::vector<BoundingBox>> golds, double iou_threshold,
                 double conf_threshold = 0.5);

DetectionMetrics detection_metrics(std::span<const double> probs, const std::vector<bool>& labels,
                                   double cutoff = 0.5);

/// One line of a predictions JSONL file.
struct SamplePrediction {
    std::string id;
    double sarcasm_prob = 0.0;
    std::vector<double> token_probs;
    /// Explicit token indices; overrides thresholded token_probs when present.
    std::optional<std::vector<int>> tokens;
    std::vector<ScoredBox> boxes;
};

struct MetricOptions {
    EmOptions em;
    double token_threshold = 0.5;
    double box_conf_threshold = 0.5;
    double detection_cutoff = 0.5;
};

/// Joins predictions to gold by id. Detection metrics use every gold record;
/// localization metrics use the sarcastic ones.
MetricReport evaluate_predictions(std::span<const SamplePrediction> preds,
                                  std::span<const DatasetRecord> gold, const MetricOptions& options = {});

nlohmann::ordered_json report_to_json(const MetricReport& report);
MetricReport metric_report_from_json(const nlohmann::json& j);
nlohmann::ordered_json prediction_to_json(const SamplePrediction& p);
SamplePrediction prediction_from_json(const nlohmann::json& j);
std::vector<SamplePrediction> load_predictions(const std::filesystem::path& path);

}  // namespace docmsu
