// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "docmsu/data_model.hpp"
#include "docmsu/image_io.hpp"

namespace docmsu {

enum class FixtureMode {
    /// Sarcastic samples carry clue words in the text and a red rectangle in the image.
    kPlantedClue,
    /// Every sample names a colour in the text and shows a coloured rectangle;
    /// sarcastic iff the two disagree. Neither modality alone is informative.
    kIncongruity,
};

struct FixtureOptions {
    FixtureMode mode = FixtureMode::kPlantedClue;
    /// Clue tokens are placed inside the first `clue_window` tokens.
    int clue_window = 64;
    int min_tokens = 20;
    int max_tokens = 100;
};

struct FixtureSet {
    std::vector<DatasetRecord> records;
    std::vector<RgbImage> images;  // parallel to records
};

/// Fraction of sarcastic samples in the full corpus (34,130 of 102,588).
inline constexpr double kSarcasticFraction = 34130.0 / 102588.0;

FixtureSet gen_fixtures(int n_samples, std::uint64_t seed, int image_size,
                        const FixtureOptions& options = {});

/// Writes `dataset.jsonl` and `images/<id>.png` under `dir`.
void write_fixtures(const std::filesystem::path& dir, const FixtureSet& set);

}  // namespace docmsu
