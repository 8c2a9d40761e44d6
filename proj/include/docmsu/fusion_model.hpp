// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "docmsu/data_model.hpp"
#include "docmsu/image_encoder.hpp"
#include "docmsu/metrics.hpp"
#include "docmsu/swin.hpp"
#include "docmsu/text_encoder.hpp"
#include "json.hpp"

namespace docmsu {

/// Architecture and input geometry. Named presets fix the stage depths and
/// base width: tiny (2,2,6,2)/96, small (2,2,18,2)/96, base (2,2,18,2)/128.
/// "test" is a small CPU preset for unit tests; "custom" accepts any values.
struct ModelConfig {
    std::string preset = "tiny";
    int L = 8;
    int d = 96;
    int conv_depth = 3;
    int image_size = 224;
    std::array<int, 4> depths{2, 2, 6, 2};
    int head_dim = 32;
    int mlp_ratio = 4;
    int box_hidden = 64;
    std::string text_backend = "hash-embedding";  // or "pretrained-contextual"
    int d_lm = 768;
    std::string encoder_weights;
    std::string encoder_vocab;
    std::uint64_t seed = 42;

    static ModelConfig from_preset(const std::string& name);
    void validate() const;
    nlohmann::ordered_json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
    /// Architecture fields only; two configs with equal keys share weights layouts.
    std::string architecture_key() const;
};

struct FusedStack {
    nn::Tensor windows;  // [m, L, L, d]
    std::vector<int> positions;
    int rows = 0;
    int cols = 0;
    std::vector<bool> doc_mask;
};

/// Adds the document matrix to every window. Throws ShapeError on a mismatch.
FusedStack fuse(const DocumentMatrix& doc, const WindowStack& windows);

struct BackboneFeatures {
    std::array<nn::Tensor, 4> stages;
    nn::Tensor token_features;  // [L, L, d], mean of the stage-0 tiles over all windows
};

enum class Modality {
    kFused,
    kTextOnly,   // image input zeroed
    kImageOnly,  // document matrix zeroed
};

const char* modality_name(Modality m);
Modality parse_modality(const std::string& s);

/// Dense output of one box-head scale.
struct ScaleOutput {
    nn::Tensor obj_logits;  // [h * w]
    nn::Tensor ltrb;        // [h * w, 4], distances from the cell centre in pixels
    int h = 0;
    int w = 0;
    int stride = 0;
};

struct BoxHead {
    nn::Linear stem;
    nn::Linear reg_fc;
    nn::Linear reg;
    nn::Linear obj;
    int stride = 0;

    BoxHead() = default;
    BoxHead(int in, int hidden, int stride, nn::Rng& rng);
    ScaleOutput operator()(const nn::Tensor& features) const;
    void collect(const std::string& prefix, nn::NamedParams& out) const;
};

/// Inputs for one record, already resized and embedded.
struct ModelInput {
    nn::Tensor image;       // [S, S, 3]
    nn::Tensor embeddings;  // [n, d_lm]
};

struct ForwardResult {
    DocumentMatrix doc;
    FusedStack fused;
    BackboneFeatures features;
    nn::Tensor detect_logit;  // [1]
    nn::Tensor token_logits;  // [n]
    std::array<ScaleOutput, 2> scales;
};

struct PredictionBundle {
    double sarcasm_prob = 0.0;
    std::vector<double> token_probs;
    std::vector<ScoredBox> boxes;
};

class DocMsuModel {
public:
    explicit DocMsuModel(const ModelConfig& config);

    ForwardResult forward(const ModelInput& input, Modality modality = Modality::kFused) const;
    BackboneFeatures backbone(const FusedStack& fused) const;
    nn::NamedParams params() const;
    const ModelConfig& config() const { return config_; }
    const SwinBackbone& swin() const { return swin_; }

    TokenProjector projector;
    ConvStack convs;
    PatchProjector patch;
    nn::Linear detect_head;
    nn::Linear text_head;
    std::array<BoxHead, 2> box_heads;  // on stages 2 and 3

private:
    ModelConfig config_;
    SwinBackbone swin_;
};

/// sigmoid(w . mean(stage 3) + b).
double detect_prob(const ForwardResult& r);
/// Per-token probabilities for the first n raster cells.
std::vector<double> token_probs(const ForwardResult& r);

/// Corner boxes of every cell, clipped to the [0, image_size] square.
std::vector<ScoredBox> decode_boxes(const ScaleOutput& s, int image_size, double conf_threshold);
/// Greedy non-maximum suppression; a box is dropped when IoU > threshold with a kept one.
std::vector<ScoredBox> nms(std::vector<ScoredBox> boxes, double iou_threshold = 0.65);

/// Full prediction. Boxes are scaled by (scale_x, scale_y) into original image coordinates.
PredictionBundle predict(const ForwardResult& r, int image_size, double conf_threshold, double scale_x = 1.0,
                         double scale_y = 1.0);

struct LossValues {
    double detection = 0.0;
    double token = 0.0;
    double box = 0.0;
};

/// Losses of a finished prediction against a record. The box loss matches
/// every gold box to its highest-IoU prediction, averages CIoU over those
/// pairs and adds objectness BCE (1 for matched predictions, 0 otherwise).
/// A gold box left without a prediction contributes 1 (IoU 0).
/// With `localization`, throws ValidationError if the record has no gold
/// annotation; without it only the detection loss is filled in.
LossValues compute_losses(const PredictionBundle& bundle, const DatasetRecord& record, bool localization = true);

/// Targets in model-input coordinates.
struct SampleTargets {
    double label = 0.0;
    std::vector<double> tokens;             // length n; empty when no gold
    std::vector<BoundingBox> boxes;         // resized coordinates
    bool has_gold = false;
};

nn::Tensor detection_loss(const ForwardResult& r, const SampleTargets& t);
nn::Tensor token_loss(const ForwardResult& r, const SampleTargets& t);
/// Mean CIoU over the cells that contain a gold-box centre, at both scales.
nn::Tensor box_ciou_loss(const ForwardResult& r, const SampleTargets& t);
/// Objectness BCE over all cells of both scales.
nn::Tensor box_obj_loss(const ForwardResult& r, const SampleTargets& t);

}  // namespace docmsu
