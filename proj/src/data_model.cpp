// SPDX-License-Identifier: Apache-2.0
#include "docmsu/data_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <spdlog/spdlog.h>

#include "docmsu/errors.hpp"
#include "docmsu/image_io.hpp"

namespace docmsu {

using nlohmann::json;

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        std::size_t j = i;
        while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
        if (j > i) out.emplace_back(text.substr(i, j - i));
        i = j;
    }
    return out;
}

std::vector<std::string> DatasetRecord::tokens() const { return tokenize(text); }

int DatasetRecord::token_count() const { return static_cast<int>(tokens().size()); }

void SplitConfig::validate() const {
    double sum = 0.0;
    for (double r : ratios) {
        if (!(r > 0.0)) throw ValidationError("split ratios must all be > 0");
        sum += r;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
        throw ValidationError("split ratios must sum to 1.0, got " + std::to_string(sum));
    }
}

void validate_record(const DatasetRecord& r) {
    auto fail = [&](const std::string& what) {
        throw ValidationError("record '" + r.id + "': " + what);
    };
    if (r.id.empty()) throw ValidationError("record with empty id");
    if (r.topic.empty()) fail("empty topic");
    const int n = r.token_count();
    if (n < 1) fail("document has no tokens");

    const bool has_gold = r.gold.has_value() && !r.gold->empty();
    if (r.sarcastic && !has_gold) fail("sarcastic record without gold annotation");
    if (!r.sarcastic && r.gold.has_value() && !r.gold->empty()) {
        fail("non-sarcastic record carries gold spans or boxes");
    }
    if (!has_gold) return;

    const auto& g = *r.gold;
    if (!g.spans.empty() && g.boxes.empty()) fail("annotation has spans but no boxes");
    std::vector<TokenSpan> sorted = g.spans;
    for (const auto& s : sorted) {
        if (s.start < 0 || s.start >= s.end) {
            fail("invalid span [" + std::to_string(s.start) + "," + std::to_string(s.end) + ")");
        }
        if (s.end > n) {
            fail("span [" + std::to_string(s.start) + "," + std::to_string(s.end) +
                 ") exceeds token count " + std::to_string(n));
        }
    }
    std::sort(sorted.begin(), sorted.end(),
              [](const TokenSpan& a, const TokenSpan& b) { return a.start < b.start; });
    for (std::size_t i = 1; i < sorted.size(); ++i) {
        if (sorted[i].start < sorted[i - 1].end) fail("overlapping spans");
    }
    for (const auto& b : g.boxes) {
        if (!(b.w > 0.0) || !(b.h > 0.0)) fail("box with non-positive width or height");
        if (!std::isfinite(b.x) || !std::isfinite(b.y)) fail("box with non-finite corner");
    }
}

void validate_boxes_in_image(const DatasetRecord& r, int width, int height) {
    if (!r.gold) return;
    constexpr double kSlack = 1e-6;
    for (const auto& b : r.gold->boxes) {
        if (b.x < -kSlack || b.y < -kSlack || b.x2() > width + kSlack || b.y2() > height + kSlack) {
            throw ValidationError("record '" + r.id + "': box outside " + std::to_string(width) +
                                  "x" + std::to_string(height) + " image");
        }
    }
}

DatasetRecord record_from_json(const json& j) {
    if (!j.is_object()) throw ValidationError("record is not a JSON object");
    static const std::array<const char*, 7> kAllowed = {"id",        "topic", "text", "image",
                                                        "sarcastic", "spans", "boxes"};
    for (const auto& [key, _] : j.items()) {
        if (std::find_if(kAllowed.begin(), kAllowed.end(),
                         [&](const char* k) { return key == k; }) == kAllowed.end()) {
            throw ValidationError("unknown field '" + key + "'");
        }
    }
    auto require = [&](const char* key) -> const json& {
        if (!j.contains(key)) throw ValidationError(std::string("missing field '") + key + "'");
        return j.at(key);
    };

    DatasetRecord r;
    try {
        r.id = require("id").get<std::string>();
        r.topic = require("topic").get<std::string>();
        r.text = require("text").get<std::string>();
        r.image_path = require("image").get<std::string>();
        r.sarcastic = require("sarcastic").get<bool>();

        AnnotationSet gold;
        gold.annotator_id = "gold";
        if (j.contains("spans")) {
            for (const auto& s : j.at("spans")) {
                if (!s.is_array() || s.size() != 2) throw ValidationError("span must be [start,end]");
                gold.spans.push_back({s[0].get<int>(), s[1].get<int>()});
            }
        }
        if (j.contains("boxes")) {
            for (const auto& b : j.at("boxes")) {
                if (!b.is_array() || b.size() != 4) throw ValidationError("box must be [x,y,w,h]");
                gold.boxes.push_back(
                    {b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()});
            }
        }
        if (!gold.empty()) r.gold = std::move(gold);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("type error: ") + e.what());
    }
    return r;
}

nlohmann::ordered_json record_to_json(const DatasetRecord& r) {
    nlohmann::ordered_json j;
    j["id"] = r.id;
    j["topic"] = r.topic;
    j["text"] = r.text;
    j["image"] = r.image_path;
    j["sarcastic"] = r.sarcastic;
    if (r.sarcastic && r.gold) {
        auto spans = nlohmann::ordered_json::array();
        for (const auto& s : r.gold->spans) spans.push_back({s.start, s.end});
        auto boxes = nlohmann::ordered_json::array();
        for (const auto& b : r.gold->boxes) boxes.push_back({b.x, b.y, b.w, b.h});
        j["spans"] = std::move(spans);
        j["boxes"] = std::move(boxes);
    }
    return j;
}

std::vector<DatasetRecord> parse_dataset(std::istream& in) {
    std::vector<DatasetRecord> out;
    std::vector<std::string> errors;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (std::all_of(line.begin(), line.end(),
                        [](unsigned char c) { return std::isspace(c); })) {
            continue;
        }
        try {
            json j = json::parse(line);
            DatasetRecord r = record_from_json(j);
            validate_record(r);
            out.push_back(std::move(r));
        } catch (const json::parse_error& e) {
            errors.push_back("line " + std::to_string(lineno) + ": malformed JSON (" + e.what() + ")");
        } catch (const ValidationError& e) {
            errors.push_back("line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    if (!errors.empty()) {
        std::string msg = std::to_string(errors.size()) + " invalid record(s):";
        for (const auto& e : errors) msg += "\n  " + e;
        throw ValidationError(msg);
    }
    return out;
}

std::filesystem::path resolve_image(const DatasetRecord& r, const std::filesystem::path& root) {
    std::filesystem::path p(r.image_path);
    return p.is_absolute() ? p : root / p;
}

std::vector<DatasetRecord> load_dataset(const std::filesystem::path& path, const LoadOptions& opt) {
    if (!std::filesystem::exists(path)) {
        throw MissingArtifactError("dataset not found: " + path.string());
    }
    std::ifstream in(path);
    auto records = parse_dataset(in);
    if (records.empty()) throw ValidationError("dataset is empty: " + path.string());

    const auto root = opt.image_root.value_or(path.parent_path());
    std::vector<std::string> errors;
    for (const auto& r : records) {
        const auto img = resolve_image(r, root);
        if (!std::filesystem::exists(img)) {
            if (opt.strict_images) {
                errors.push_back("record '" + r.id + "': image not found: " + img.string());
            } else {
                spdlog::warn("record '{}': image not found: {}", r.id, img.string());
            }
            continue;
        }
        if (opt.check_box_bounds && r.gold && !r.gold->boxes.empty()) {
            try {
                const auto [w, h] = image_size(img);
                validate_boxes_in_image(r, w, h);
            } catch (const ValidationError& e) {
                errors.push_back(e.what());
            }
        }
    }
    if (!errors.empty()) {
        std::string msg = std::to_string(errors.size()) + " invalid record(s):";
        for (const auto& e : errors) msg += "\n  " + e;
        throw ValidationError(msg);
    }
    return records;
}

std::string serialize_dataset(const std::vector<DatasetRecord>& records) {
    std::string out;
    for (const auto& r : records) {
        out += record_to_json(r).dump();
        out += '\n';
    }
    return out;
}

void save_dataset(const std::filesystem::path& path, const std::vector<DatasetRecord>& records) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    out << serialize_dataset(records);
}

DatasetSplits split_dataset(const std::vector<DatasetRecord>& records, const SplitConfig& cfg) {
    cfg.validate();
    if (records.empty()) throw ValidationError("cannot split an empty dataset");

    const auto n = static_cast<long>(records.size());
    const long n_val = std::lround(static_cast<double>(n) * cfg.ratios[1]);
    const long n_test = std::lround(static_cast<double>(n) * cfg.ratios[2]);
    const long n_train = n - n_val - n_test;
    if (n_train <= 0 || n_val <= 0 || n_test <= 0) {
        throw ValidationError("split of " + std::to_string(n) + " records leaves an empty partition");
    }

    std::vector<std::size_t> order(records.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(cfg.seed);
    std::shuffle(order.begin(), order.end(), rng);

    DatasetSplits s;
    for (long i = 0; i < n; ++i) {
        const auto& r = records[order[static_cast<std::size_t>(i)]];
        if (i < n_train) {
            s.train.push_back(r);
        } else if (i < n_train + n_val) {
            s.val.push_back(r);
        } else {
            s.test.push_back(r);
        }
    }
    return s;
}

std::string ids_hash(const std::vector<DatasetRecord>& records) {
    std::uint64_t h = 1469598103934665603ull;
    for (const auto& r : records) {
        for (unsigned char c : r.id) {
            h ^= c;
            h *= 1099511628211ull;
        }
        h ^= 0xffu;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace docmsu
