// SPDX-License-Identifier: Apache-2.0
//
// Run configuration shared by every CLI command. Values are layered as
// built-in defaults < config file < DOCMSU_* environment < command-line flags,
// and the merged document is checked against schemas/run_config.schema.json
// before it is interpreted.
#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "docmsu/data_model.hpp"
#include "docmsu/fusion_model.hpp"
#include "docmsu/metrics.hpp"
#include "docmsu/training.hpp"
#include "json.hpp"

namespace docmsu {

/// The run-config schema compiled into the binary.
const nlohmann::json& run_config_schema();

/// Checks `doc` against a JSON Schema. Supports the keywords the run-config
/// schema uses: type, properties, additionalProperties (boolean), required,
/// enum, minimum, maximum, items, minItems, maxItems. Returns one message per
/// violation, each starting with a JSON pointer.
std::vector<std::string> schema_errors(const nlohmann::json& doc, const nlohmann::json& schema);

/// Environment overrides: DOCMSU_<KEY> for top-level keys and
/// DOCMSU_<SECTION>_<KEY> for nested ones (e.g. DOCMSU_TRAIN_BATCH_SIZE).
/// Values are parsed according to the schema type; arrays as JSON.
/// Unknown DOCMSU_ variables are reported in `ignored`.
nlohmann::json env_overrides(const std::map<std::string, std::string>& env, std::vector<std::string>* ignored = nullptr);

/// Current process environment restricted to DOCMSU_* names.
std::map<std::string, std::string> docmsu_environment();

/// Recursive object merge; `over` wins.
nlohmann::json merge_json(nlohmann::json base, const nlohmann::json& over);

struct RunConfig {
    std::string dataset;
    std::string images;
    std::string out;
    std::string checkpoint;
    Task task = Task::kDetect;
    std::uint64_t seed = 42;
    int threads = 0;

    ModelConfig model;
    /// The config named a model section; evaluate then insists the checkpoint matches.
    bool model_given = false;
    SplitConfig split;
    TrainOptions train;
    int seeds = 1;
    MetricOptions metrics;
    /// Objectness threshold for decoded boxes written to prediction files.
    double decode_threshold = 0.05;

    /// Validates against the schema, then builds the config. The model seed
    /// follows `seed` unless the model section sets its own.
    static RunConfig from_json(const nlohmann::json& doc);
    nlohmann::ordered_json to_json() const;
};

/// Layers file, environment and flag values and builds the config.
RunConfig resolve_run_config(const std::optional<std::filesystem::path>& config_file,
                             const std::map<std::string, std::string>& env, const nlohmann::json& flags);

}  // namespace docmsu
