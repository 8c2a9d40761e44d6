// SPDX-License-Identifier: Apache-2.0
//
// docmsu command-line entry point. Exit codes: 0 success, 1 internal error,
// 2 validation failure, 3 missing artifact.
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "docmsu/annotation_qa.hpp"
#include "docmsu/data_model.hpp"
#include "docmsu/errors.hpp"
#include "docmsu/fixtures.hpp"
#include "docmsu/metrics.hpp"
#include "docmsu/nn/tensor.hpp"
#include "docmsu/run_config.hpp"
#include "docmsu/training.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;
using namespace docmsu;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInternal = 1;
constexpr int kExitValidation = 2;
constexpr int kExitMissing = 3;

/// Options every subcommand accepts, plus the flag layer of the run config.
struct Common {
    std::string config;
    std::uint64_t seed = 0;
    std::string out;
    std::string dataset;
    std::string images;
    std::string checkpoint;
    std::string preset;
    std::string task;
    int threads = -1;
    std::string log_level = "info";

    CLI::Option* seed_opt = nullptr;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config, "JSON run config")->check(CLI::ExistingFile);
    c.seed_opt = cmd->add_option("--seed", c.seed, "base random seed");
    cmd->add_option("--out", c.out, "output directory");
    cmd->add_option("--log-level", c.log_level, "trace, debug, info, warn, error")
        ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error"}));
}

json flag_layer(const Common& c) {
    json j = json::object();
    if (c.seed_opt && c.seed_opt->count() > 0) j["seed"] = c.seed;
    if (!c.out.empty()) j["out"] = c.out;
    if (!c.dataset.empty()) j["dataset"] = c.dataset;
    if (!c.images.empty()) j["images"] = c.images;
    if (!c.checkpoint.empty()) j["checkpoint"] = c.checkpoint;
    if (!c.preset.empty()) j["model"]["preset"] = c.preset;
    if (!c.task.empty()) j["task"] = c.task;
    if (c.threads >= 0) j["threads"] = c.threads;
    return j;
}

RunConfig resolve(const Common& c, json extra = json::object()) {
    std::vector<std::string> ignored;
    const auto env = docmsu_environment();
    env_overrides(env, &ignored);
    for (const auto& name : ignored) {
        if (name != "DOCMSU_LOG_LEVEL") spdlog::warn("ignoring unknown environment variable {}", name);
    }
    std::optional<fs::path> file;
    if (!c.config.empty()) file = c.config;
    auto cfg = resolve_run_config(file, env, merge_json(flag_layer(c), extra));
    if (cfg.out.empty()) throw ValidationError("no output directory: pass --out or set it in the config");
    return cfg;
}

fs::path image_root(const RunConfig& cfg) {
    if (!cfg.images.empty()) return cfg.images;
    return fs::path(cfg.dataset).parent_path();
}

std::vector<DatasetRecord> load_for(const RunConfig& cfg, bool strict_images) {
    if (cfg.dataset.empty()) throw ValidationError("no dataset: pass --dataset or set it in the config");
    LoadOptions opt;
    opt.image_root = image_root(cfg);
    opt.strict_images = strict_images;
    return load_dataset(cfg.dataset, opt);
}

void write_text(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

void write_json(const fs::path& path, const ordered_json& j) { write_text(path, j.dump(2) + "\n"); }

/// Records what a command did; written last, so its presence marks a completed run.
struct Manifest {
    std::string command;
    std::vector<std::string> argv;
    ordered_json config;
    ordered_json summary = ordered_json::object();
    std::vector<fs::path> outputs;

    void write(const fs::path& dir) const {
        ordered_json j;
        j["command"] = command;
        j["argv"] = argv;
        j["config"] = config;
        j["summary"] = summary;
        j["outputs"] = ordered_json::array();
        for (const auto& p : outputs) {
            j["outputs"].push_back({{"path", fs::relative(p, dir).generic_string()}, {"bytes", fs::file_size(p)}});
        }
        write_json(dir / "manifest.json", j);
    }
};

// ---------------------------------------------------------------- ingest

ordered_json dataset_stats(const std::vector<DatasetRecord>& records) {
    std::map<std::string, int> topics;
    std::vector<int> lengths;
    int sarcastic = 0;
    for (const auto& r : records) {
        ++topics[r.topic];
        lengths.push_back(r.token_count());
        sarcastic += r.sarcastic ? 1 : 0;
    }
    std::sort(lengths.begin(), lengths.end());
    const auto n = lengths.size();
    const double median = n % 2 ? lengths[n / 2] : 0.5 * (lengths[n / 2 - 1] + lengths[n / 2]);
    constexpr int kBin = 25;
    std::map<int, int> bins;
    for (int len : lengths) ++bins[len / kBin];
    ordered_json hist = ordered_json::array();
    for (const auto& [b, count] : bins) hist.push_back({{"from", b * kBin}, {"to", (b + 1) * kBin - 1}, {"count", count}});

    ordered_json s;
    s["records"] = n;
    s["sarcastic"] = sarcastic;
    s["sarcastic_ratio"] = static_cast<double>(sarcastic) / static_cast<double>(n);
    s["topics"] = topics;
    s["tokens"] = {{"min", lengths.front()},
                   {"max", lengths.back()},
                   {"mean", std::accumulate(lengths.begin(), lengths.end(), 0.0) / static_cast<double>(n)},
                   {"median", median},
                   {"histogram", hist}};
    return s;
}

int cmd_ingest(const Common& c, const std::string& input, bool skip_images, Manifest& m) {
    json extra = json::object();
    if (!input.empty()) extra["dataset"] = input;
    const auto cfg = resolve(c, extra);
    m.config = cfg.to_json();
    const fs::path out = cfg.out;

    LoadOptions opt;
    opt.image_root = image_root(cfg);
    opt.strict_images = !skip_images;
    opt.check_box_bounds = !skip_images;
    if (cfg.dataset.empty()) throw ValidationError("ingest needs an input dataset (--input)");
    const auto records = load_dataset(cfg.dataset, opt);

    save_dataset(out / "dataset.jsonl", records);
    m.outputs.push_back(out / "dataset.jsonl");
    auto stats = dataset_stats(records);

    try {
        const auto splits = split_dataset(records, cfg.split);
        for (const auto& [name, part] : {std::pair{"train", &splits.train}, {"val", &splits.val}, {"test", &splits.test}}) {
            save_dataset(out / "splits" / (std::string(name) + ".jsonl"), *part);
            m.outputs.push_back(out / "splits" / (std::string(name) + ".jsonl"));
            stats["splits"][name] = {{"records", part->size()}, {"ids_hash", ids_hash(*part)}};
        }
        stats["splits"]["seed"] = cfg.split.seed;
    } catch (const ValidationError& e) {
        spdlog::warn("no splits written: {}", e.what());
        stats["splits"] = nullptr;
    }
    write_json(out / "stats.json", stats);
    m.outputs.push_back(out / "stats.json");
    m.summary = {{"records", records.size()}, {"sarcastic_ratio", stats["sarcastic_ratio"]}};
    spdlog::info("ingested {} records ({} sarcastic)", records.size(), stats["sarcastic"].get<int>());
    return kExitOk;
}

// ---------------------------------------------------- validate-annotations

int cmd_validate_annotations(const Common& c, const std::string& input, double fraction, Manifest& m) {
    const auto cfg = resolve(c);
    m.config = cfg.to_json();
    if (!fs::exists(input)) throw MissingArtifactError("annotation file not found: " + input);
    std::ifstream in(input);
    std::vector<ConfidenceReport> reports;
    std::vector<std::string> problems;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::string id = "line " + std::to_string(line_no);
        try {
            const auto j = json::parse(line);
            id = j.at("id").get<std::string>();
            std::vector<AnnotationSet> sets;
            for (const auto& a : j.at("annotations")) sets.push_back(annotation_from_json(a));
            if (sets.size() != 3) {
                problems.push_back(id + ": " + std::to_string(sets.size()) + " annotations, need 3");
                continue;
            }
            reports.push_back(confidence_scores(sets, id));
        } catch (const std::exception& e) {
            problems.push_back(id + ": " + e.what());
        }
    }
    if (!problems.empty()) {
        std::string msg = std::to_string(problems.size()) + " sample(s) rejected:";
        for (const auto& p : problems) msg += "\n  " + p;
        throw ValidationError(msg);
    }
    if (reports.empty()) throw ValidationError("annotation file is empty: " + input);
    flag_challenging(reports, fraction);

    const fs::path out = fs::path(cfg.out) / "confidence.jsonl";
    std::string text;
    int flagged = 0;
    for (const auto& r : reports) {
        text += report_to_json(r).dump() + "\n";
        flagged += r.challenging ? 1 : 0;
    }
    write_text(out, text);
    m.outputs.push_back(out);
    m.summary = {{"samples", reports.size()}, {"challenging", flagged}};
    spdlog::info("{} samples scored, {} flagged challenging", reports.size(), flagged);
    return kExitOk;
}

// ------------------------------------------------------------------ train

const std::vector<std::string> kReportFields = {"acc", "precision", "f1", "em", "em50", "em70",
                                                "bit_error", "ap50", "ap60", "f1_50", "f1_60"};

std::vector<DatasetRecord> pick_split(const std::vector<DatasetRecord>& records, const SplitConfig& split,
                                      const std::string& name) {
    if (name == "all") return records;
    const auto s = split_dataset(records, split);
    if (name == "train") return s.train;
    if (name == "val") return s.val;
    if (name == "test") return s.test;
    throw ValidationError("unknown split '" + name + "' (train, val, test, all)");
}

std::string predictions_jsonl(const std::vector<SamplePrediction>& preds) {
    std::string text;
    for (const auto& p : preds) text += prediction_to_json(p).dump() + "\n";
    return text;
}

int cmd_train(const Common& c, int seeds_flag, const std::string& eval_split, Manifest& m) {
    json extra = json::object();
    if (seeds_flag > 0) extra["train"]["seeds"] = seeds_flag;
    const auto cfg = resolve(c, extra);
    m.config = cfg.to_json();
    const fs::path out = cfg.out;

    const auto records = load_for(cfg, true);
    const auto splits = split_dataset(records, cfg.split);
    const auto eval_records = eval_split == "test" ? splits.test : splits.val;
    const auto backend = make_text_backend(cfg.model);
    const auto train_samples = prepare_samples(splits.train, image_root(cfg), *backend, cfg.model);
    const auto eval_samples = prepare_samples(eval_records, image_root(cfg), *backend, cfg.model);

    ordered_json report;
    report["task"] = task_name(cfg.task);
    report["eval_split"] = eval_split;
    report["runs"] = ordered_json::array();
    std::map<std::string, std::vector<double>> values;
    for (int k = 0; k < cfg.seeds; ++k) {
        const std::uint64_t seed = cfg.seed + static_cast<std::uint64_t>(k);
        auto mc = cfg.model;
        mc.seed = cfg.model.seed + static_cast<std::uint64_t>(k);
        auto opt = cfg.train;
        opt.seed = seed;
        DocMsuModel model(mc);
        spdlog::info("seed {}: training {} on {} samples", seed, task_name(cfg.task), train_samples.size());
        const auto hist = train_model(model, train_samples, opt);

        const fs::path dir = cfg.seeds == 1 ? out : out / ("seed_" + std::to_string(seed));
        save_checkpoint(dir / "checkpoint.bin", model, {{"task", task_name(cfg.task)}, {"seed", seed}});
        m.outputs.push_back(dir / "checkpoint.bin");
        write_json(dir / "history.json", {{"lr", hist.lr}, {"steps", hist.steps}, {"step_loss", hist.step_loss},
                                          {"epoch_loss", hist.epoch_loss}});
        m.outputs.push_back(dir / "history.json");

        const auto preds = predict_samples(model, eval_samples, cfg.train.modality, cfg.decode_threshold, cfg.threads);
        const auto rep = report_to_json(evaluate_predictions(preds, eval_records, cfg.metrics));
        write_text(dir / "predictions.jsonl", predictions_jsonl(preds));
        m.outputs.push_back(dir / "predictions.jsonl");
        for (const auto& f : kReportFields) values[f].push_back(rep.at(f).get<double>());
        report["runs"].push_back({{"seed", seed},
                                  {"final_loss", hist.step_loss.empty() ? 0.0 : hist.step_loss.back()},
                                  {"metrics", rep}});
    }
    // Sample variance over seeds (zero for a single seed).
    ordered_json mean;
    ordered_json var;
    for (const auto& f : kReportFields) {
        const auto& v = values[f];
        const double mu = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
        double ss = 0.0;
        for (double x : v) ss += (x - mu) * (x - mu);
        mean[f] = mu;
        var[f] = v.size() > 1 ? ss / static_cast<double>(v.size() - 1) : 0.0;
    }
    report["seeds"] = cfg.seeds;
    report["mean"] = mean;
    report["variance"] = var;
    write_json(out / "train_report.json", report);
    m.outputs.push_back(out / "train_report.json");
    m.summary = {{"seeds", cfg.seeds}, {"mean", mean}};
    return kExitOk;
}

// --------------------------------------------------------------- evaluate

int cmd_evaluate(const Common& c, const std::string& split_name, const std::string& predictions_file,
                 const std::string& modality, Manifest& m) {
    json extra = json::object();
    if (!modality.empty()) extra["train"]["modality"] = modality;
    const auto cfg = resolve(c, extra);
    m.config = cfg.to_json();
    const fs::path out = cfg.out;

    std::vector<SamplePrediction> preds;
    std::vector<DatasetRecord> records;
    if (!predictions_file.empty()) {
        preds = load_predictions(predictions_file);
        records = pick_split(load_for(cfg, false), cfg.split, split_name);
    } else {
        if (cfg.checkpoint.empty()) throw ValidationError("evaluate needs --checkpoint or --predictions");
        if (!fs::exists(cfg.checkpoint)) throw MissingArtifactError("checkpoint not found: " + cfg.checkpoint);
        auto ck = load_checkpoint(cfg.checkpoint);
        const auto& mc = ck.model->config();
        if (cfg.model_given && cfg.model.architecture_key() != mc.architecture_key()) {
            throw ValidationError("checkpoint/config mismatch: checkpoint was trained with " + mc.architecture_key() +
                                  " but the run config asks for " + cfg.model.architecture_key());
        }
        records = pick_split(load_for(cfg, true), cfg.split, split_name);
        const auto backend = make_text_backend(mc);
        const auto samples = prepare_samples(records, image_root(cfg), *backend, mc);
        preds = predict_samples(*ck.model, samples, cfg.train.modality, cfg.decode_threshold, cfg.threads);
        write_text(out / "predictions.jsonl", predictions_jsonl(preds));
        m.outputs.push_back(out / "predictions.jsonl");
    }
    const auto report = report_to_json(evaluate_predictions(preds, records, cfg.metrics));
    write_json(out / "metrics.json", report);
    m.outputs.push_back(out / "metrics.json");
    m.summary = {{"split", split_name}, {"records", records.size()}, {"metrics", report}};
    std::cout << report.dump(2) << "\n";
    return kExitOk;
}

// ---------------------------------------------------- visualize-attention

int cmd_visualize(const Common& c, const std::string& record_id, Manifest& m) {
    const auto cfg = resolve(c);
    m.config = cfg.to_json();
    if (cfg.checkpoint.empty()) throw ValidationError("visualize-attention needs --checkpoint");
    if (!fs::exists(cfg.checkpoint)) throw MissingArtifactError("checkpoint not found: " + cfg.checkpoint);
    const auto ck = load_checkpoint(cfg.checkpoint);
    const auto& mc = ck.model->config();
    const auto records = load_for(cfg, false);
    const auto it = std::find_if(records.begin(), records.end(), [&](const auto& r) { return r.id == record_id; });
    if (it == records.end()) throw ValidationError("record '" + record_id + "' not found in " + cfg.dataset);

    const auto image = load_image(resolve_image(*it, image_root(cfg)));
    const auto backend = make_text_backend(mc);
    const auto sample = prepare_sample(*it, image, *backend, mc);
    nn::NoGradGuard guard;
    const auto r = ck.model->forward(sample.input, cfg.train.modality);

    // Per-cell L2 norm of each stage output, cropped to the unpadded image area.
    const int grid = mc.image_size / kPatchSize;
    for (int s = 0; s < 4; ++s) {
        const auto& f = r.features.stages[s];
        const int h = f.dim(0);
        const int w = f.dim(1);
        const int ch = f.dim(2);
        const int valid = std::min(h, (grid + (1 << s) - 1) >> s);
        const int valid_w = std::min(w, (grid + (1 << s) - 1) >> s);
        std::vector<double> heat;
        for (int y = 0; y < valid; ++y) {
            for (int x = 0; x < valid_w; ++x) {
                double sq = 0.0;
                for (int k = 0; k < ch; ++k) {
                    const double v = f.data()[(static_cast<std::size_t>(y) * w + x) * ch + k];
                    sq += v * v;
                }
                heat.push_back(std::sqrt(sq));
            }
        }
        const fs::path path = fs::path(cfg.out) / (record_id + "_stage" + std::to_string(s + 1) + ".png");
        fs::create_directories(path.parent_path());
        save_png(path, overlay_heatmap(image, heat, valid, valid_w));
        m.outputs.push_back(path);
    }
    m.summary = {{"record", record_id}, {"sarcasm_prob", detect_prob(r)}};
    return kExitOk;
}

// ------------------------------------------------------------ gen-fixtures

int cmd_gen_fixtures(const Common& c, int n, int image_size, const std::string& mode, int min_tokens, int max_tokens,
                     Manifest& m) {
    const auto cfg = resolve(c);
    m.config = cfg.to_json();
    if (n < 1) throw ValidationError("--n must be >= 1");
    FixtureOptions opt;
    opt.mode = mode == "incongruity" ? FixtureMode::kIncongruity : FixtureMode::kPlantedClue;
    opt.min_tokens = min_tokens;
    opt.max_tokens = max_tokens;
    if (min_tokens < 1 || max_tokens < min_tokens) throw ValidationError("token bounds must satisfy 1 <= min <= max");
    const int size = image_size > 0 ? image_size : cfg.model.image_size;
    const auto set = gen_fixtures(n, cfg.seed, size, opt);
    write_fixtures(cfg.out, set);
    m.outputs.push_back(fs::path(cfg.out) / "dataset.jsonl");
    m.summary = {{"records", n}, {"mode", mode}, {"image_size", size}};
    spdlog::info("wrote {} fixtures to {}", n, cfg.out);
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Document-level multimodal sarcasm detection and localization"};
    app.require_subcommand(1);
    Manifest manifest;
    manifest.argv.assign(argv, argv + argc);

    Common c;
    std::string input;
    bool skip_images = false;
    auto* ingest = app.add_subcommand("ingest", "validate and normalize a JSONL dataset, write stats and splits");
    add_common(ingest, c);
    ingest->add_option("--input", input, "dataset JSONL")->required();
    ingest->add_option("--images", c.images, "image root");
    ingest->add_flag("--skip-images", skip_images, "do not require or decode images");

    double fraction = 0.05;
    auto* va = app.add_subcommand("validate-annotations", "score three-annotator triples and flag challenging samples");
    add_common(va, c);
    va->add_option("--input", input, "JSONL of {id, annotations: [3 sets]}")->required();
    va->add_option("--fraction", fraction, "share flagged challenging")->check(CLI::Range(0.0, 1.0));

    int seeds = 0;
    std::string eval_split = "val";
    auto* train = app.add_subcommand("train", "train one model per seed and evaluate it");
    add_common(train, c);
    train->add_option("--dataset", c.dataset, "dataset JSONL");
    train->add_option("--images", c.images, "image root");
    train->add_option("--preset", c.preset, "model preset");
    train->add_option("--task", c.task, "detect or localize")->check(CLI::IsMember({"detect", "localize"}));
    train->add_option("--seeds", seeds, "number of seeds; reports mean and variance")->check(CLI::PositiveNumber);
    train->add_option("--eval-split", eval_split, "split scored after training")->check(CLI::IsMember({"val", "test"}));
    train->add_option("--threads", c.threads, "inference workers (0: all cores)");

    std::string split_name = "test";
    std::string predictions;
    std::string modality;
    auto* eval = app.add_subcommand("evaluate", "score a checkpoint or a prediction file on a split");
    add_common(eval, c);
    eval->add_option("--dataset", c.dataset, "dataset JSONL");
    eval->add_option("--images", c.images, "image root");
    eval->add_option("--checkpoint", c.checkpoint, "model checkpoint");
    eval->add_option("--predictions", predictions, "score this prediction JSONL instead of running a model");
    eval->add_option("--split", split_name, "train, val, test or all")->check(CLI::IsMember({"train", "val", "test", "all"}));
    eval->add_option("--modality", modality, "fused, text-only, image-only");
    eval->add_option("--threads", c.threads, "inference workers (0: all cores)");

    std::string record_id;
    auto* viz = app.add_subcommand("visualize-attention", "render per-stage feature-norm heat maps for one record");
    add_common(viz, c);
    viz->add_option("--dataset", c.dataset, "dataset JSONL");
    viz->add_option("--images", c.images, "image root");
    viz->add_option("--checkpoint", c.checkpoint, "model checkpoint");
    viz->add_option("--record", record_id, "record id")->required();

    int n = 90;
    int image_size = 0;
    std::string mode = "planted";
    int min_tokens = 20;
    int max_tokens = 100;
    auto* gen = app.add_subcommand("gen-fixtures", "write a synthetic dataset with images");
    add_common(gen, c);
    gen->add_option("--n", n, "number of records");
    gen->add_option("--image-size", image_size, "square image side (default: model image_size)");
    gen->add_option("--mode", mode, "planted or incongruity")->check(CLI::IsMember({"planted", "incongruity"}));
    gen->add_option("--min-tokens", min_tokens, "shortest document");
    gen->add_option("--max-tokens", max_tokens, "longest document");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitValidation;
    }

    if (const char* lvl = std::getenv("DOCMSU_LOG_LEVEL"); lvl && c.log_level == "info") c.log_level = lvl;
    spdlog::set_level(spdlog::level::from_str(c.log_level));

    CLI::App* cmd = app.get_subcommands().front();
    manifest.command = cmd->get_name();
    try {
        int code = kExitOk;
        if (cmd == ingest) code = cmd_ingest(c, input, skip_images, manifest);
        else if (cmd == va) code = cmd_validate_annotations(c, input, fraction, manifest);
        else if (cmd == train) code = cmd_train(c, seeds, eval_split, manifest);
        else if (cmd == eval) code = cmd_evaluate(c, split_name, predictions, modality, manifest);
        else if (cmd == viz) code = cmd_visualize(c, record_id, manifest);
        else code = cmd_gen_fixtures(c, n, image_size, mode, min_tokens, max_tokens, manifest);
        manifest.write(manifest.config.at("out").get<std::string>());
        return code;
    } catch (const ValidationError& e) {
        spdlog::error("{}", e.what());
        return kExitValidation;
    } catch (const MissingArtifactError& e) {
        spdlog::error("{}", e.what());
        return kExitMissing;
    } catch (const std::exception& e) {
        spdlog::error("internal error: {}", e.what());
        return kExitInternal;
    }
}
