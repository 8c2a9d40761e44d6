// SPDX-License-Identifier: Apache-2.0
#include "docmsu/run_config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>

#include "docmsu/errors.hpp"
#include "docmsu/run_config_schema.hpp"

extern char** environ;

namespace docmsu {
namespace {

using nlohmann::json;

bool has_type(const json& v, const std::string& type) {
    if (type == "object") return v.is_object();
    if (type == "array") return v.is_array();
    if (type == "string") return v.is_string();
    if (type == "boolean") return v.is_boolean();
    if (type == "integer") return v.is_number_integer();
    if (type == "number") return v.is_number();
    if (type == "null") return v.is_null();
    return false;
}

void check(const json& v, const json& schema, const std::string& at, std::vector<std::string>& errors) {
    const std::string where = at.empty() ? "/" : at;
    if (schema.contains("type")) {
        const auto& t = schema.at("type");
        const bool ok = t.is_array() ? std::any_of(t.begin(), t.end(), [&](const json& x) { return has_type(v, x); })
                                     : has_type(v, t.get<std::string>());
        if (!ok) {
            errors.push_back(where + ": expected " + t.dump() + ", got " + v.type_name());
            return;
        }
    }
    if (schema.contains("enum")) {
        const auto& e = schema.at("enum");
        if (std::find(e.begin(), e.end(), v) == e.end()) errors.push_back(where + ": " + v.dump() + " not in " + e.dump());
    }
    if (v.is_number()) {
        const double x = v.get<double>();
        if (schema.contains("minimum") && x < schema.at("minimum").get<double>()) {
            errors.push_back(where + ": " + v.dump() + " < minimum " + schema.at("minimum").dump());
        }
        if (schema.contains("maximum") && x > schema.at("maximum").get<double>()) {
            errors.push_back(where + ": " + v.dump() + " > maximum " + schema.at("maximum").dump());
        }
    }
    if (v.is_array()) {
        if (schema.contains("minItems") && v.size() < schema.at("minItems").get<std::size_t>()) {
            errors.push_back(where + ": fewer than " + schema.at("minItems").dump() + " items");
        }
        if (schema.contains("maxItems") && v.size() > schema.at("maxItems").get<std::size_t>()) {
            errors.push_back(where + ": more than " + schema.at("maxItems").dump() + " items");
        }
        if (schema.contains("items")) {
            for (std::size_t i = 0; i < v.size(); ++i) check(v[i], schema.at("items"), at + "/" + std::to_string(i), errors);
        }
    }
    if (v.is_object()) {
        const json props = schema.value("properties", json::object());
        for (const auto& [k, sub] : v.items()) {
            if (props.contains(k)) {
                check(sub, props.at(k), at + "/" + k, errors);
            } else if (schema.contains("additionalProperties") && schema.at("additionalProperties") == false) {
                errors.push_back(where + ": unknown key '" + k + "'");
            }
        }
        for (const auto& r : schema.value("required", json::array())) {
            if (!v.contains(r.get<std::string>())) errors.push_back(where + ": missing required key '" + r.get<std::string>() + "'");
        }
    }
}

std::string upper(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
    return s;
}

json parse_env_value(const std::string& name, const std::string& raw, const json& schema) {
    const std::string type = schema.value("type", "string");
    try {
        if (type == "string") return raw;
        if (type == "integer") {
            std::size_t used = 0;
            const long long v = std::stoll(raw, &used);
            if (used != raw.size()) throw std::invalid_argument(raw);
            return v;
        }
        if (type == "number") {
            std::size_t used = 0;
            const double v = std::stod(raw, &used);
            if (used != raw.size()) throw std::invalid_argument(raw);
            return v;
        }
        if (type == "boolean") {
            if (raw == "true" || raw == "1") return true;
            if (raw == "false" || raw == "0") return false;
            throw std::invalid_argument(raw);
        }
        return json::parse(raw);
    } catch (const std::exception&) {
        throw ValidationError("environment variable " + name + "='" + raw + "' is not a valid " + type);
    }
}

}  // namespace

const json& run_config_schema() {
    static const json schema = json::parse(generated::kRunConfigSchema);
    return schema;
}

std::vector<std::string> schema_errors(const json& doc, const json& schema) {
    std::vector<std::string> errors;
    check(doc, schema, "", errors);
    return errors;
}

json env_overrides(const std::map<std::string, std::string>& env, std::vector<std::string>* ignored) {
    // Every leaf of the schema gets a variable name.
    std::map<std::string, std::pair<std::vector<std::string>, json>> names;
    const auto& props = run_config_schema().at("properties");
    for (const auto& [k, sub] : props.items()) {
        if (sub.value("type", "") == "object") {
            for (const auto& [k2, sub2] : sub.at("properties").items()) {
                names["DOCMSU_" + upper(k) + "_" + upper(k2)] = {{k, k2}, sub2};
            }
        } else {
            names["DOCMSU_" + upper(k)] = {{k}, sub};
        }
    }
    json out = json::object();
    for (const auto& [name, raw] : env) {
        if (name.rfind("DOCMSU_", 0) != 0) continue;
        const auto it = names.find(name);
        if (it == names.end()) {
            if (ignored) ignored->push_back(name);
            continue;
        }
        const auto& [path, schema] = it->second;
        json value = parse_env_value(name, raw, schema);
        if (path.size() == 1) {
            out[path[0]] = std::move(value);
        } else {
            out[path[0]][path[1]] = std::move(value);
        }
    }
    return out;
}

std::map<std::string, std::string> docmsu_environment() {
    std::map<std::string, std::string> env;
    for (char** e = environ; e && *e; ++e) {
        const std::string kv = *e;
        const auto eq = kv.find('=');
        if (eq != std::string::npos && kv.rfind("DOCMSU_", 0) == 0) env[kv.substr(0, eq)] = kv.substr(eq + 1);
    }
    return env;
}

json merge_json(json base, const json& over) {
    if (!base.is_object() || !over.is_object()) return over;
    for (const auto& [k, v] : over.items()) {
        base[k] = base.contains(k) ? merge_json(base[k], v) : v;
    }
    return base;
}

RunConfig RunConfig::from_json(const json& doc) {
    const auto errors = schema_errors(doc, run_config_schema());
    if (!errors.empty()) {
        std::string msg = "run config does not match the schema:";
        for (const auto& e : errors) msg += "\n  " + e;
        throw ValidationError(msg);
    }
    RunConfig c;
    c.dataset = doc.value("dataset", "");
    c.images = doc.value("images", "");
    c.out = doc.value("out", "");
    c.checkpoint = doc.value("checkpoint", "");
    c.task = parse_task(doc.value("task", "detect"));
    c.seed = doc.value("seed", c.seed);
    c.threads = doc.value("threads", 0);

    c.model_given = doc.contains("model");
    json model = doc.value("model", json::object());
    if (!model.contains("seed")) model["seed"] = c.seed;
    c.model = ModelConfig::from_json(model);
    c.model.validate();

    if (doc.contains("split")) {
        const auto& s = doc.at("split");
        if (s.contains("ratios")) c.split.ratios = s.at("ratios").get<std::array<double, 3>>();
        c.split.seed = s.value("seed", c.split.seed);
    }
    c.split.validate();

    const json t = doc.value("train", json::object());
    c.train.task = c.task;
    c.train.seed = c.seed;
    c.train.lr = t.value("lr", 0.0);
    c.train.weight_decay = t.value("weight_decay", c.train.weight_decay);
    c.train.epochs = t.value("epochs", c.train.epochs);
    c.train.batch_size = t.value("batch_size", c.train.batch_size);
    c.train.steps = t.value("steps", 0L);
    c.train.modality = parse_modality(t.value("modality", "fused"));
    c.train.log_every = t.value("log_every", 0);
    c.seeds = t.value("seeds", 1);

    const json m = doc.value("metrics", json::object());
    c.metrics.em.strict_inequality = m.value("strict_inequality", false);
    c.metrics.em.count_empty_predictions = m.value("count_empty_predictions", false);
    c.metrics.token_threshold = m.value("token_threshold", c.metrics.token_threshold);
    c.metrics.box_conf_threshold = m.value("box_conf_threshold", c.metrics.box_conf_threshold);
    c.metrics.detection_cutoff = m.value("detection_cutoff", c.metrics.detection_cutoff);
    c.decode_threshold = m.value("decode_threshold", c.decode_threshold);
    return c;
}

nlohmann::ordered_json RunConfig::to_json() const {
    nlohmann::ordered_json j;
    j["dataset"] = dataset;
    j["images"] = images;
    j["out"] = out;
    j["checkpoint"] = checkpoint;
    j["task"] = task_name(task);
    j["seed"] = seed;
    j["threads"] = threads;
    j["model"] = model.to_json();
    j["split"] = {{"ratios", split.ratios}, {"seed", split.seed}};
    j["train"] = {{"lr", train.lr > 0.0 ? train.lr : default_lr(task)},
                  {"weight_decay", train.weight_decay},
                  {"epochs", train.epochs},
                  {"batch_size", train.batch_size},
                  {"steps", train.steps},
                  {"modality", modality_name(train.modality)},
                  {"seeds", seeds},
                  {"log_every", train.log_every}};
    j["metrics"] = {{"strict_inequality", metrics.em.strict_inequality},
                    {"count_empty_predictions", metrics.em.count_empty_predictions},
                    {"token_threshold", metrics.token_threshold},
                    {"box_conf_threshold", metrics.box_conf_threshold},
                    {"detection_cutoff", metrics.detection_cutoff},
                    {"decode_threshold", decode_threshold}};
    return j;
}

RunConfig resolve_run_config(const std::optional<std::filesystem::path>& config_file,
                             const std::map<std::string, std::string>& env, const json& flags) {
    json doc = json::object();
    if (config_file) {
        std::ifstream in(*config_file);
        if (!in) throw MissingArtifactError("config file not found: " + config_file->string());
        try {
            doc = json::parse(in);
        } catch (const json::parse_error& e) {
            throw ValidationError("config file " + config_file->string() + " is not valid JSON: " + e.what());
        }
        if (!doc.is_object()) throw ValidationError("config file " + config_file->string() + " must hold a JSON object");
    }
    doc = merge_json(doc, env_overrides(env));
    doc = merge_json(doc, flags);
    return RunConfig::from_json(doc);
}

}  // namespace docmsu
