// SPDX-License-Identifier: Apache-2.0
#include "docmsu/fusion_model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "docmsu/annotation_qa.hpp"
#include "docmsu/errors.hpp"
#include "docmsu/losses.hpp"
#include "docmsu/nn/ops.hpp"

namespace docmsu {
namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

/// Prior objectness logit log(0.01 / 0.99), so early training is not
/// swamped by false positives.
constexpr double kObjPrior = -4.59511985013459;

/// Predicted ltrb distances are stride * exp(raw), with raw clamped here.
constexpr double kLtrbLimit = 8.0;

bool is_named(const std::string& p) { return p == "tiny" || p == "small" || p == "base"; }

const std::set<std::string> kConfigKeys = {
    "preset", "L", "d", "conv_depth", "image_size", "depths", "head_dim", "mlp_ratio", "box_hidden",
    "text_backend", "d_lm", "encoder_weights", "encoder_vocab", "seed"};

}  // namespace

ModelConfig ModelConfig::from_preset(const std::string& name) {
    ModelConfig c;
    c.preset = name;
    if (name == "tiny" || name == "custom") {
        c.depths = {2, 2, 6, 2};
    } else if (name == "small") {
        c.depths = {2, 2, 18, 2};
    } else if (name == "base") {
        c.depths = {2, 2, 18, 2};
        c.d = 128;
    } else if (name == "test") {
        c.depths = {1, 1, 1, 1};
        c.d = 8;
        c.L = 4;
        c.image_size = 32;
        c.conv_depth = 1;
        c.d_lm = 16;
        c.box_hidden = 16;
    } else {
        throw ValidationError("unknown preset '" + name + "' (tiny, small, base, test, custom)");
    }
    return c;
}

void ModelConfig::validate() const {
    auto fail = [](const std::string& msg) { throw ValidationError("model config: " + msg); };
    if (!(is_named(preset) || preset == "test" || preset == "custom")) fail("unknown preset '" + preset + "'");
    if (is_named(preset)) {
        const auto ref = from_preset(preset);
        if (depths != ref.depths || d != ref.d) fail("preset '" + preset + "' fixes the stage depths and d");
    }
    if (L < 1) fail("L must be >= 1");
    if (d < 1) fail("d must be >= 1");
    if (conv_depth < 0) fail("conv_depth must be >= 0");
    if (image_size < kPatchSize || image_size % kPatchSize != 0) fail("image_size must be a positive multiple of 4");
    for (int v : depths) {
        if (v < 1) fail("every stage depth must be >= 1");
    }
    if (head_dim < 1 || mlp_ratio < 1 || box_hidden < 1 || d_lm < 1) fail("head_dim, mlp_ratio, box_hidden, d_lm must be >= 1");
    if (text_backend == "pretrained-contextual") {
        if (encoder_weights.empty() || encoder_vocab.empty()) fail("pretrained-contextual needs encoder_weights and encoder_vocab");
    } else if (text_backend != "hash-embedding") {
        fail("unknown text_backend '" + text_backend + "'");
    }
}

nlohmann::ordered_json ModelConfig::to_json() const {
    nlohmann::ordered_json j;
    j["preset"] = preset;
    j["L"] = L;
    j["d"] = d;
    j["conv_depth"] = conv_depth;
    j["image_size"] = image_size;
    j["depths"] = depths;
    j["head_dim"] = head_dim;
    j["mlp_ratio"] = mlp_ratio;
    j["box_hidden"] = box_hidden;
    j["text_backend"] = text_backend;
    j["d_lm"] = d_lm;
    j["encoder_weights"] = encoder_weights;
    j["encoder_vocab"] = encoder_vocab;
    j["seed"] = seed;
    return j;
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
    for (const auto& [k, _] : j.items()) {
        if (!kConfigKeys.count(k)) throw ValidationError("model config: unknown key '" + k + "'");
    }
    ModelConfig c = from_preset(j.value("preset", std::string("tiny")));
    c.L = j.value("L", c.L);
    c.d = j.value("d", c.d);
    c.conv_depth = j.value("conv_depth", c.conv_depth);
    c.image_size = j.value("image_size", c.image_size);
    if (j.contains("depths")) c.depths = j.at("depths").get<std::array<int, 4>>();
    c.head_dim = j.value("head_dim", c.head_dim);
    c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
    c.box_hidden = j.value("box_hidden", c.box_hidden);
    c.text_backend = j.value("text_backend", c.text_backend);
    c.d_lm = j.value("d_lm", c.d_lm);
    c.encoder_weights = j.value("encoder_weights", c.encoder_weights);
    c.encoder_vocab = j.value("encoder_vocab", c.encoder_vocab);
    c.seed = j.value("seed", c.seed);
    return c;
}

std::string ModelConfig::architecture_key() const {
    auto j = to_json();
    j.erase("seed");
    j.erase("encoder_weights");
    j.erase("encoder_vocab");
    return j.dump();
}

FusedStack fuse(const DocumentMatrix& doc, const WindowStack& ws) {
    if (doc.L != ws.L || doc.d != ws.d) {
        throw ShapeError("fuse: document matrix " + std::to_string(doc.L) + "x" + std::to_string(doc.L) + "x" +
                         std::to_string(doc.d) + " vs windows " + std::to_string(ws.L) + "x" + std::to_string(ws.L) +
                         "x" + std::to_string(ws.d));
    }
    FusedStack f;
    f.windows = nn::add(ws.windows, doc.values);
    f.positions = ws.positions;
    f.rows = ws.rows;
    f.cols = ws.cols;
    f.doc_mask = doc.mask;
    return f;
}

const char* modality_name(Modality m) {
    switch (m) {
        case Modality::kFused: return "fused";
        case Modality::kTextOnly: return "text-only";
        case Modality::kImageOnly: return "image-only";
    }
    return "fused";
}

Modality parse_modality(const std::string& s) {
    if (s == "fused") return Modality::kFused;
    if (s == "text-only") return Modality::kTextOnly;
    if (s == "image-only") return Modality::kImageOnly;
    throw ValidationError("unknown modality '" + s + "' (fused, text-only, image-only)");
}

BoxHead::BoxHead(int in, int hidden, int stride_, nn::Rng& rng)
    : stem(in, hidden, rng), reg_fc(hidden, hidden, rng), reg(hidden, 4, rng), obj(hidden, 1, rng), stride(stride_) {
    obj.b.mutable_data()[0] = kObjPrior;
}

ScaleOutput BoxHead::operator()(const nn::Tensor& x) const {
    ScaleOutput s;
    s.h = x.dim(0);
    s.w = x.dim(1);
    s.stride = stride;
    const int cells = s.h * s.w;
    const auto hidden = nn::gelu(reg_fc(nn::gelu(stem(x))));
    s.ltrb = nn::scale(nn::exp_clamped(nn::reshape(reg(hidden), {cells, 4}), kLtrbLimit), stride);
    s.obj_logits = nn::reshape(obj(hidden), {cells});
    return s;
}

void BoxHead::collect(const std::string& prefix, nn::NamedParams& out) const {
    stem.collect(prefix + ".stem", out);
    reg_fc.collect(prefix + ".reg_fc", out);
    reg.collect(prefix + ".reg", out);
    obj.collect(prefix + ".obj", out);
}

DocMsuModel::DocMsuModel(const ModelConfig& config) : config_(config) {
    config.validate();
    nn::Rng rng(config.seed);
    projector = TokenProjector(config.d_lm, config.d, rng);
    convs = ConvStack(config.conv_depth, config.d, rng);
    patch = PatchProjector(convs.out_channels(), config.d, rng);
    SwinConfig sc;
    sc.dim = config.d;
    sc.depths = config.depths;
    sc.window = config.L;
    sc.head_dim = config.head_dim;
    sc.mlp_ratio = config.mlp_ratio;
    swin_ = SwinBackbone(sc, rng);
    detect_head = nn::Linear(swin_.channels(3), 1, rng);
    text_head = nn::Linear(config.d, 1, rng);
    box_heads[0] = BoxHead(swin_.channels(2), config.box_hidden, kPatchSize << 2, rng);
    box_heads[1] = BoxHead(swin_.channels(3), config.box_hidden, kPatchSize << 3, rng);
}

nn::NamedParams DocMsuModel::params() const {
    nn::NamedParams out;
    projector.collect("text.proj", out);
    convs.collect("image.convs", out);
    patch.collect("image.patch", out);
    swin_.collect("backbone", out);
    detect_head.collect("heads.detect", out);
    text_head.collect("heads.text", out);
    box_heads[0].collect("heads.box.0", out);
    box_heads[1].collect("heads.box.1", out);
    return out;
}

BackboneFeatures DocMsuModel::backbone(const FusedStack& fused) const {
    BackboneFeatures f;
    const auto grid = window_reassemble(fused.windows, fused.positions, fused.rows, fused.cols);
    f.stages = swin_.forward(grid);
    f.token_features = nn::mean_axis0(window_partition(f.stages[0], config_.L).windows);
    return f;
}

ForwardResult DocMsuModel::forward(const ModelInput& input, Modality modality) const {
    const int L = config_.L;
    ForwardResult r;
    r.doc = square_reshape(project_tokens(input.embeddings, projector), L);
    if (modality == Modality::kImageOnly) r.doc.values = nn::Tensor::zeros({L, L, config_.d});

    nn::Tensor image = input.image;
    if (modality == Modality::kTextOnly) image = nn::Tensor::zeros(image.shape());
    const auto ws = window_partition(patch_project(conv_stack(image, convs), patch), L);
    r.fused = fuse(r.doc, ws);
    r.features = backbone(r.fused);

    const int c3 = swin_.channels(3);
    r.detect_logit = nn::reshape(detect_head(nn::reshape(nn::mean_rows(r.features.stages[3]), {1, c3})), {1});

    const int n = r.doc.n;
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    r.token_logits = nn::gather(text_head(r.features.token_features), nn::make_index(std::move(idx)), {n});

    r.scales[0] = box_heads[0](r.features.stages[2]);
    r.scales[1] = box_heads[1](r.features.stages[3]);
    return r;
}

double detect_prob(const ForwardResult& r) { return sigmoid(r.detect_logit.data()[0]); }

std::vector<double> token_probs(const ForwardResult& r) {
    std::vector<double> p;
    for (double z : r.token_logits.data()) p.push_back(sigmoid(z));
    return p;
}

std::vector<ScoredBox> decode_boxes(const ScaleOutput& s, int image_size, double conf_threshold) {
    std::vector<ScoredBox> out;
    const auto obj = s.obj_logits.data();
    const auto d = s.ltrb.data();
    const double lim = image_size;
    for (int k = 0; k < s.h * s.w; ++k) {
        const double score = sigmoid(obj[k]);
        if (score < conf_threshold) continue;
        const double cy = (k / s.w + 0.5) * s.stride;
        const double cx = (k % s.w + 0.5) * s.stride;
        const double x1 = std::clamp(cx - d[4 * k], 0.0, lim);
        const double y1 = std::clamp(cy - d[4 * k + 1], 0.0, lim);
        const double x2 = std::clamp(cx + d[4 * k + 2], 0.0, lim);
        const double y2 = std::clamp(cy + d[4 * k + 3], 0.0, lim);
        if (x2 <= x1 || y2 <= y1) continue;
        out.push_back({{x1, y1, x2 - x1, y2 - y1}, score});
    }
    return out;
}

std::vector<ScoredBox> nms(std::vector<ScoredBox> boxes, double iou_threshold) {
    std::stable_sort(boxes.begin(), boxes.end(), [](const ScoredBox& a, const ScoredBox& b) { return a.score > b.score; });
    std::vector<ScoredBox> kept;
    for (const auto& b : boxes) {
        const bool clash = std::any_of(kept.begin(), kept.end(),
                                       [&](const ScoredBox& k) { return visual_iou(k.box, b.box) > iou_threshold; });
        if (!clash) kept.push_back(b);
    }
    return kept;
}

PredictionBundle predict(const ForwardResult& r, int image_size, double conf_threshold, double scale_x, double scale_y) {
    PredictionBundle p;
    p.sarcasm_prob = detect_prob(r);
    p.token_probs = token_probs(r);
    auto boxes = decode_boxes(r.scales[0], image_size, conf_threshold);
    auto more = decode_boxes(r.scales[1], image_size, conf_threshold);
    boxes.insert(boxes.end(), more.begin(), more.end());
    for (auto& b : nms(std::move(boxes))) {
        p.boxes.push_back({b.box.scaled(scale_x, scale_y), b.score});
    }
    return p;
}

LossValues compute_losses(const PredictionBundle& bundle, const DatasetRecord& record, bool localization) {
    LossValues v;
    v.detection = bce(bundle.sarcasm_prob, record.sarcastic ? 1.0 : 0.0);
    if (!localization) return v;
    if (!record.gold) throw ValidationError("compute_losses: record '" + record.id + "' has no gold annotation");
    const auto& gold = *record.gold;

    const int n = static_cast<int>(bundle.token_probs.size());
    if (n > 0) {
        const auto gold_tokens = TokenPredictionSet::from_spans(gold.spans, n, true);
        std::vector<bool> target(n, false);
        for (int t : gold_tokens.positives) target[t] = true;
        double s = 0.0;
        for (int t = 0; t < n; ++t) s += bce(bundle.token_probs[t], target[t] ? 1.0 : 0.0);
        v.token = s / n;
    }

    // Greedy one-to-one matching by IoU, best pairs first.
    struct Pair {
        double iou;
        std::size_t g;
        std::size_t p;
    };
    std::vector<Pair> pairs;
    for (std::size_t g = 0; g < gold.boxes.size(); ++g) {
        for (std::size_t p = 0; p < bundle.boxes.size(); ++p) pairs.push_back({visual_iou(gold.boxes[g], bundle.boxes[p].box), g, p});
    }
    std::stable_sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) { return a.iou > b.iou; });
    std::vector<int> pred_of(gold.boxes.size(), -1);
    std::vector<bool> used(bundle.boxes.size(), false);
    for (const auto& pr : pairs) {
        if (pred_of[pr.g] >= 0 || used[pr.p]) continue;
        pred_of[pr.g] = static_cast<int>(pr.p);
        used[pr.p] = true;
    }
    double box = 0.0;
    if (!gold.boxes.empty()) {
        double s = 0.0;
        for (std::size_t g = 0; g < gold.boxes.size(); ++g) {
            if (pred_of[g] < 0) {
                s += 1.0;
            } else {
                s += ciou(Corners::from_box(bundle.boxes[pred_of[g]].box), Corners::from_box(gold.boxes[g])).loss;
            }
        }
        box += s / static_cast<double>(gold.boxes.size());
    }
    if (!bundle.boxes.empty()) {
        double s = 0.0;
        for (std::size_t p = 0; p < bundle.boxes.size(); ++p) s += bce(bundle.boxes[p].score, used[p] ? 1.0 : 0.0);
        box += s / static_cast<double>(bundle.boxes.size());
    }
    v.box = box;
    return v;
}

nn::Tensor detection_loss(const ForwardResult& r, const SampleTargets& t) {
    return nn::bce_with_logits(r.detect_logit, {t.label});
}

nn::Tensor token_loss(const ForwardResult& r, const SampleTargets& t) {
    if (!t.has_gold) throw ValidationError("token loss needs a gold annotation");
    if (static_cast<int>(t.tokens.size()) != r.token_logits.dim(0)) throw ShapeError("token loss: target length mismatch");
    return nn::bce_with_logits(r.token_logits, t.tokens);
}

namespace {

/// Cell index of each gold box centre at one scale.
std::vector<int> assigned_cells(const ScaleOutput& s, const std::vector<BoundingBox>& boxes) {
    std::vector<int> cells;
    for (const auto& b : boxes) {
        const int cy = std::clamp(static_cast<int>(std::floor(b.center_y() / s.stride)), 0, s.h - 1);
        const int cx = std::clamp(static_cast<int>(std::floor(b.center_x() / s.stride)), 0, s.w - 1);
        cells.push_back(cy * s.w + cx);
    }
    return cells;
}

}  // namespace

nn::Tensor box_ciou_loss(const ForwardResult& r, const SampleTargets& t) {
    if (!t.has_gold) throw ValidationError("box loss needs a gold annotation");
    if (t.boxes.empty()) return nn::Tensor::scalar(0.0);
    std::vector<nn::Tensor> parts;
    std::vector<Corners> gold;
    for (const auto& s : r.scales) {
        const auto cells = assigned_cells(s, t.boxes);
        const int k = static_cast<int>(cells.size());
        std::vector<int> idx;
        std::vector<double> sign;
        std::vector<double> centre;
        for (int i = 0; i < k; ++i) {
            const double cy = (cells[i] / s.w + 0.5) * s.stride;
            const double cx = (cells[i] % s.w + 0.5) * s.stride;
            for (int c = 0; c < 4; ++c) idx.push_back(cells[i] * 4 + c);
            sign.insert(sign.end(), {-1.0, -1.0, 1.0, 1.0});
            centre.insert(centre.end(), {cx, cy, cx, cy});
            gold.push_back(Corners::from_box(t.boxes[i]));
        }
        const auto sel = nn::gather(s.ltrb, nn::make_index(std::move(idx)), {k, 4});
        parts.push_back(nn::add(nn::mul(sel, nn::Tensor::from({k, 4}, std::move(sign))), nn::Tensor::from({k, 4}, std::move(centre))));
    }
    return ciou_loss(nn::concat(parts), gold);
}

nn::Tensor box_obj_loss(const ForwardResult& r, const SampleTargets& t) {
    if (!t.has_gold) throw ValidationError("box loss needs a gold annotation");
    std::vector<double> targets;
    for (const auto& s : r.scales) {
        std::vector<double> tgt(static_cast<std::size_t>(s.h) * s.w, 0.0);
        for (int c : assigned_cells(s, t.boxes)) tgt[c] = 1.0;
        targets.insert(targets.end(), tgt.begin(), tgt.end());
    }
    return nn::bce_with_logits(nn::concat({r.scales[0].obj_logits, r.scales[1].obj_logits}), targets);
}

}  // namespace docmsu
