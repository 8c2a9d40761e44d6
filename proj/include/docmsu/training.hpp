// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "docmsu/fusion_model.hpp"
#include "json.hpp"

namespace docmsu {

enum class Task { kDetect, kLocalize };

const char* task_name(Task t);
Task parse_task(const std::string& s);
/// 0.001 for detection, 0.01 for localization.
double default_lr(Task t);

/// A record turned into model inputs: image resized to the model's square
/// input, text truncated to L*L tokens and embedded.
struct Sample {
    std::string id;
    ModelInput input;
    SampleTargets targets;
    double scale_x = 1.0;  // original width / input width
    double scale_y = 1.0;
    bool truncated = false;
};

std::unique_ptr<TextBackend> make_text_backend(const ModelConfig& config);

Sample prepare_sample(const DatasetRecord& record, const RgbImage& image, const TextBackend& backend,
                      const ModelConfig& config);

/// Loads every record's image from `image_root` and prepares it.
std::vector<Sample> prepare_samples(std::span<const DatasetRecord> records, const std::filesystem::path& image_root,
                                    const TextBackend& backend, const ModelConfig& config);

struct TrainOptions {
    Task task = Task::kDetect;
    double lr = 0.0;  // <= 0: task default
    double weight_decay = 0.01;
    int epochs = 20;
    int batch_size = 16;
    long steps = 0;  // > 0 overrides epochs
    std::uint64_t seed = 42;
    Modality modality = Modality::kFused;
    int log_every = 0;
};

struct TrainHistory {
    std::vector<double> step_loss;   // mean loss of each batch
    std::vector<double> epoch_loss;  // mean loss of each full pass
    long steps = 0;
    double lr = 0.0;
};

/// Training objective of one sample: detection BCE, or token BCE + CIoU +
/// objectness BCE for localization.
nn::Tensor sample_loss(const DocMsuModel& model, const Sample& sample, Task task,
                       Modality modality = Modality::kFused);

/// AdamW training. Localization uses only samples with gold annotations.
/// Throws DivergenceError on a non-finite loss.
TrainHistory train_model(DocMsuModel& model, std::span<const Sample> samples, const TrainOptions& options);

/// Mean loss without building a graph.
double mean_loss(const DocMsuModel& model, std::span<const Sample> samples, Task task,
                 Modality modality = Modality::kFused);

/// Inference over samples on `threads` workers (<= 0: one per hardware
/// thread). Output order matches the input order.
std::vector<SamplePrediction> predict_samples(const DocMsuModel& model, std::span<const Sample> samples,
                                              Modality modality = Modality::kFused, double conf_threshold = 0.05,
                                              int threads = 0);

/// Fraction of samples whose thresholded sarcasm probability matches the label.
double detection_accuracy(const DocMsuModel& model, std::span<const Sample> samples,
                          Modality modality = Modality::kFused);

void save_checkpoint(const std::filesystem::path& path, const DocMsuModel& model, const nlohmann::json& extra = {});

struct Checkpoint {
    std::unique_ptr<DocMsuModel> model;
    nlohmann::json meta;
};

/// Throws MissingArtifactError if absent, ValidationError if malformed.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace docmsu
