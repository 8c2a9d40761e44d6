// SPDX-License-Identifier: Apache-2.0
#include "docmsu/training.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <numeric>
#include <thread>

#include <spdlog/spdlog.h>

#include "docmsu/errors.hpp"
#include "docmsu/nn/archive.hpp"
#include "docmsu/nn/ops.hpp"
#include "docmsu/nn/optim.hpp"

namespace docmsu {

const char* task_name(Task t) { return t == Task::kDetect ? "detect" : "localize"; }

Task parse_task(const std::string& s) {
    if (s == "detect") return Task::kDetect;
    if (s == "localize") return Task::kLocalize;
    throw ValidationError("unknown task '" + s + "' (detect, localize)");
}

double default_lr(Task t) { return t == Task::kDetect ? 1e-3 : 1e-2; }

std::unique_ptr<TextBackend> make_text_backend(const ModelConfig& config) {
    if (config.text_backend == "pretrained-contextual") {
        auto b = std::make_unique<ContextualBackend>(config.encoder_weights, config.encoder_vocab);
        if (b->width() != config.d_lm) {
            throw ValidationError("encoder width " + std::to_string(b->width()) + " != configured d_lm " +
                                  std::to_string(config.d_lm));
        }
        return b;
    }
    return std::make_unique<HashEmbeddingBackend>(config.d_lm);
}

Sample prepare_sample(const DatasetRecord& record, const RgbImage& image, const TextBackend& backend,
                      const ModelConfig& config) {
    const int S = config.image_size;
    const int cap = config.L * config.L;
    Sample s;
    s.id = record.id;
    s.input.image = image_tensor(resize_bilinear(image, S, S));
    const auto emb = encode_tokens(record.text, backend, cap);
    s.input.embeddings = emb.tensor();
    s.truncated = record.token_count() > cap;
    s.scale_x = static_cast<double>(image.width) / S;
    s.scale_y = static_cast<double>(image.height) / S;

    s.targets.label = record.sarcastic ? 1.0 : 0.0;
    if (record.gold) {
        s.targets.has_gold = true;
        s.targets.tokens.assign(emb.n, 0.0);
        for (int t : TokenPredictionSet::from_spans(record.gold->spans, emb.n, true).positives) s.targets.tokens[t] = 1.0;
        for (const auto& b : record.gold->boxes) s.targets.boxes.push_back(b.scaled(1.0 / s.scale_x, 1.0 / s.scale_y));
    }
    return s;
}

std::vector<Sample> prepare_samples(std::span<const DatasetRecord> records, const std::filesystem::path& image_root,
                                    const TextBackend& backend, const ModelConfig& config) {
    std::vector<Sample> out;
    out.reserve(records.size());
    int truncated = 0;
    for (const auto& r : records) {
        out.push_back(prepare_sample(r, load_image(resolve_image(r, image_root)), backend, config));
        if (out.back().truncated) {
            ++truncated;
            spdlog::debug("record {} truncated to {} tokens", r.id, config.L * config.L);
        }
    }
    if (truncated > 0) {
        spdlog::warn("{} of {} documents truncated to L*L = {} tokens", truncated, records.size(), config.L * config.L);
    }
    return out;
}

nn::Tensor sample_loss(const DocMsuModel& model, const Sample& sample, Task task, Modality modality) {
    const auto r = model.forward(sample.input, modality);
    if (task == Task::kDetect) return detection_loss(r, sample.targets);
    auto loss = nn::add(token_loss(r, sample.targets), box_ciou_loss(r, sample.targets));
    return nn::add(loss, box_obj_loss(r, sample.targets));
}

TrainHistory train_model(DocMsuModel& model, std::span<const Sample> samples, const TrainOptions& opt) {
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (opt.task == Task::kDetect || samples[i].targets.has_gold) pool.push_back(i);
    }
    if (pool.empty()) throw ValidationError("training split has no usable samples");
    if (opt.batch_size < 1) throw ValidationError("batch_size must be >= 1");

    TrainHistory h;
    h.lr = opt.lr > 0.0 ? opt.lr : default_lr(opt.task);
    nn::AdamWOptions aopt;
    aopt.lr = h.lr;
    aopt.weight_decay = opt.weight_decay;
    nn::AdamW optimizer(model.params(), aopt);

    const long per_epoch = static_cast<long>((pool.size() + opt.batch_size - 1) / opt.batch_size);
    const long total = opt.steps > 0 ? opt.steps : per_epoch * opt.epochs;
    nn::Rng rng(opt.seed);
    std::vector<std::size_t> order = pool;
    std::size_t cursor = order.size();
    double epoch_sum = 0.0;
    std::size_t epoch_count = 0;

    for (long step = 0; step < total; ++step) {
        if (cursor >= order.size()) {
            if (epoch_count > 0) h.epoch_loss.push_back(epoch_sum / static_cast<double>(epoch_count));
            epoch_sum = 0.0;
            epoch_count = 0;
            std::shuffle(order.begin(), order.end(), rng);
            cursor = 0;
        }
        const std::size_t end = std::min(order.size(), cursor + static_cast<std::size_t>(opt.batch_size));
        double batch_sum = 0.0;
        for (std::size_t k = cursor; k < end; ++k) {
            const auto& s = samples[order[k]];
            const auto loss = sample_loss(model, s, opt.task, opt.modality);
            const double v = loss.item();
            if (!std::isfinite(v)) {
                throw DivergenceError("non-finite loss at step " + std::to_string(step) + " on sample '" + s.id +
                                      "' (lr " + std::to_string(h.lr) + ")");
            }
            loss.backward();
            batch_sum += v;
        }
        const auto count = end - cursor;
        optimizer.step(1.0 / static_cast<double>(count));
        optimizer.zero_grad();
        cursor = end;
        epoch_sum += batch_sum;
        epoch_count += count;
        h.step_loss.push_back(batch_sum / static_cast<double>(count));
        if (opt.log_every > 0 && (step + 1) % opt.log_every == 0) {
            spdlog::info("step {}/{} loss {:.5f}", step + 1, total, h.step_loss.back());
        }
    }
    if (cursor >= order.size() && epoch_count > 0) h.epoch_loss.push_back(epoch_sum / static_cast<double>(epoch_count));
    h.steps = total;
    return h;
}

double mean_loss(const DocMsuModel& model, std::span<const Sample> samples, Task task, Modality modality) {
    nn::NoGradGuard guard;
    double sum = 0.0;
    int n = 0;
    for (const auto& s : samples) {
        if (task == Task::kLocalize && !s.targets.has_gold) continue;
        sum += sample_loss(model, s, task, modality).item();
        ++n;
    }
    return n > 0 ? sum / n : 0.0;
}

std::vector<SamplePrediction> predict_samples(const DocMsuModel& model, std::span<const Sample> samples,
                                              Modality modality, double conf_threshold, int threads) {
    std::vector<SamplePrediction> out(samples.size());
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mu;
    // Each worker claims sample indices and writes into its own slot, so the
    // result order never depends on scheduling.
    auto work = [&] {
        nn::NoGradGuard guard;
        for (std::size_t i = next++; i < samples.size(); i = next++) {
            try {
                const auto& s = samples[i];
                auto b = predict(model.forward(s.input, modality), model.config().image_size, conf_threshold,
                                 s.scale_x, s.scale_y);
                auto& p = out[i];
                p.id = s.id;
                p.sarcasm_prob = b.sarcasm_prob;
                p.token_probs = std::move(b.token_probs);
                p.boxes = std::move(b.boxes);
            } catch (...) {
                std::lock_guard lock(failure_mu);
                if (!failure) failure = std::current_exception();
                next = samples.size();
            }
        }
    };
    if (threads <= 0) threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    threads = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(threads), std::max<std::size_t>(1, samples.size())));
    std::vector<std::thread> pool;
    for (int t = 1; t < threads; ++t) pool.emplace_back(work);
    work();
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
    return out;
}

double detection_accuracy(const DocMsuModel& model, std::span<const Sample> samples, Modality modality) {
    if (samples.empty()) return 0.0;
    nn::NoGradGuard guard;
    int correct = 0;
    for (const auto& s : samples) {
        const double p = detect_prob(model.forward(s.input, modality));
        correct += ((p >= 0.5) == (s.targets.label > 0.5)) ? 1 : 0;
    }
    return static_cast<double>(correct) / static_cast<double>(samples.size());
}

void save_checkpoint(const std::filesystem::path& path, const DocMsuModel& model, const nlohmann::json& extra) {
    nlohmann::json meta = extra.is_object() ? extra : nlohmann::json::object();
    meta["format"] = "docmsu-checkpoint";
    meta["config"] = model.config().to_json();
    nn::write_archive(path, meta, model.params());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    auto ar = nn::read_archive(path);
    if (ar.meta.value("format", "") != "docmsu-checkpoint" || !ar.meta.contains("config")) {
        throw ValidationError("not a model checkpoint: " + path.string());
    }
    Checkpoint c;
    c.model = std::make_unique<DocMsuModel>(ModelConfig::from_json(ar.meta.at("config")));
    nn::load_into(ar, c.model->params());
    c.meta = std::move(ar.meta);
    return c;
}

}  // namespace docmsu
