// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace docmsu {

/// Half-open range [start, end) of whitespace-token indices.
struct TokenSpan {
    int start = 0;
    int end = 0;

    int length() const { return end - start; }
    bool contains(int token) const { return token >= start && token < end; }
    friend bool operator==(const TokenSpan&, const TokenSpan&) = default;
};

/// Axis-aligned box in absolute pixels, (x, y) is the top-left corner.
struct BoundingBox {
    double x = 0.0;
    double y = 0.0;
    double w = 0.0;
    double h = 0.0;

    double x2() const { return x + w; }
    double y2() const { return y + h; }
    double area() const { return w * h; }
    double center_x() const { return x + 0.5 * w; }
    double center_y() const { return y + 0.5 * h; }
    BoundingBox scaled(double sx, double sy) const { return {x * sx, y * sy, w * sx, h * sy}; }
    BoundingBox normalized(double image_w, double image_h) const {
        return scaled(1.0 / image_w, 1.0 / image_h);
    }
    friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

struct AnnotationSet {
    std::string annotator_id;
    std::vector<TokenSpan> spans;
    std::vector<BoundingBox> boxes;

    bool empty() const { return spans.empty() && boxes.empty(); }
};

/// The nine topic tags of the corpus. Records accept any non-empty tag.
inline constexpr std::array<std::string_view, 9> kTopics = {
    "Science", "Health",    "Sport",       "Technology", "Entertainment",
    "Education", "Business", "Environment", "Politics"};

struct DatasetRecord {
    std::string id;
    std::string topic;
    std::string text;
    std::string image_path;
    bool sarcastic = false;
    std::optional<AnnotationSet> gold;

    std::vector<std::string> tokens() const;
    int token_count() const;
};

struct SplitConfig {
    std::array<double, 3> ratios{0.7, 0.2, 0.1};
    std::uint64_t seed = 42;

    void validate() const;
};

struct DatasetSplits {
    std::vector<DatasetRecord> train;
    std::vector<DatasetRecord> val;
    std::vector<DatasetRecord> test;
};

struct LoadOptions {
    /// Directory image paths are resolved against; defaults to the dataset's directory.
    std::optional<std::filesystem::path> image_root;
    /// Missing images are errors instead of warnings.
    bool strict_images = false;
    /// Decode images to check that boxes fit inside them.
    bool check_box_bounds = true;
};

/// Whitespace tokenization used for every span index in the dataset.
std::vector<std::string> tokenize(std::string_view text);

/// Checks the record-level invariants. Throws ValidationError naming the record.
void validate_record(const DatasetRecord& record);

/// Checks that every gold box lies inside a `width` x `height` image.
void validate_boxes_in_image(const DatasetRecord& record, int width, int height);

DatasetRecord record_from_json(const nlohmann::json& j);
nlohmann::ordered_json record_to_json(const DatasetRecord& record);

/// Parses a JSONL stream. Malformed lines and invariant violations are collected
/// and reported together in one ValidationError.
std::vector<DatasetRecord> parse_dataset(std::istream& in);

std::vector<DatasetRecord> load_dataset(const std::filesystem::path& path,
                                        const LoadOptions& options = {});

/// One canonical JSONL line per record, terminated by '\n'.
std::string serialize_dataset(const std::vector<DatasetRecord>& records);
void save_dataset(const std::filesystem::path& path, const std::vector<DatasetRecord>& records);

std::filesystem::path resolve_image(const DatasetRecord& record, const std::filesystem::path& root);

/// Seeded shuffle into train/val/test. Val and test get round(N * ratio) records,
/// train takes the remainder.
DatasetSplits split_dataset(const std::vector<DatasetRecord>& records, const SplitConfig& cfg);

/// 64-bit FNV-1a over the ordered record ids, rendered as 16 hex digits.
std::string ids_hash(const std::vector<DatasetRecord>& records);

}  // namespace docmsu
