// SPDX-License-Identifier: Apache-2.0
#include "docmsu/fixtures.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <random>
#include <string_view>

#include "docmsu/errors.hpp"

namespace docmsu {
namespace {

constexpr std::array<std::string_view, 48> kFiller = {
    "the",      "city",     "council",   "announced", "a",        "new",      "plan",    "to",
    "improve",  "local",    "roads",     "after",     "months",   "of",       "debate",  "officials",
    "said",     "report",   "shows",     "market",    "growth",   "in",       "recent",  "years",
    "while",    "experts",  "warn",      "about",     "costs",    "and",      "delays",  "residents",
    "expect",   "changes",  "next",      "week",      "study",    "finds",    "school",  "budget",
    "hospital", "company",  "quarterly", "results",   "climate",  "policy",   "team",    "season"};

constexpr std::array<std::string_view, 10> kClueWords = {
    "brilliant", "genius", "flawless", "obviously", "totally",
    "wonderful", "surely",  "perfect",  "thrilled",  "fantastic"};

struct Colour {
    std::string_view word;
    std::array<double, 3> rgb;
};
constexpr std::array<Colour, 2> kColours = {Colour{"red", {0.90, 0.12, 0.10}},
                                             Colour{"blue", {0.10, 0.20, 0.90}}};

int uniform_int(std::mt19937_64& rng, int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(rng);
}

RgbImage background(std::mt19937_64& rng, int size) {
    RgbImage img = make_image(size, size);
    const double base = 0.35 + 0.3 * std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    std::normal_distribution<double> noise(0.0, 0.03);
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            const double g = base + 0.15 * (static_cast<double>(x + y) / (2.0 * size) - 0.25);
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = std::clamp(g + noise(rng), 0.0, 1.0);
        }
    }
    return img;
}

BoundingBox paint_rect(std::mt19937_64& rng, RgbImage& img, int min_side, int max_side,
                       const std::array<double, 3>& rgb) {
    const int size = img.width;
    const int w = uniform_int(rng, min_side, max_side);
    const int h = uniform_int(rng, min_side, max_side);
    const int x = uniform_int(rng, 0, size - w);
    const int y = uniform_int(rng, 0, size - h);
    for (int yy = y; yy < y + h; ++yy) {
        for (int xx = x; xx < x + w; ++xx) {
            for (int c = 0; c < 3; ++c) img.at(yy, xx, c) = rgb[c];
        }
    }
    return {static_cast<double>(x), static_cast<double>(y), static_cast<double>(w),
            static_cast<double>(h)};
}

std::string join(const std::vector<std::string>& words) {
    std::string out;
    for (const auto& w : words) {
        if (!out.empty()) out += ' ';
        out += w;
    }
    return out;
}

}  // namespace

FixtureSet gen_fixtures(int n_samples, std::uint64_t seed, int image_size, const FixtureOptions& opt) {
    if (n_samples < 1) throw ValidationError("gen_fixtures needs n_samples >= 1");
    if (image_size < 8) throw ValidationError("gen_fixtures needs image_size >= 8");
    if (opt.min_tokens < 2 || opt.max_tokens < opt.min_tokens) {
        throw ValidationError("gen_fixtures: invalid token length range");
    }

    // Own stream: a plain mt19937_64(seed) would shuffle exactly like
    // split_dataset with the same seed and put every sarcastic sample in train.
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x66697874u};
    std::mt19937_64 rng(seq);

    // Exactly round(n * fraction) sarcastic samples, at shuffled positions.
    const auto n_sarcastic = static_cast<int>(std::lround(n_samples * kSarcasticFraction));
    std::vector<int> order(static_cast<std::size_t>(n_samples));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<bool> sarcastic(static_cast<std::size_t>(n_samples), false);
    for (int i = 0; i < n_sarcastic; ++i) sarcastic[static_cast<std::size_t>(order[i])] = true;

    FixtureSet set;
    const int min_side = std::max(2, image_size / 4);
    const int max_side = std::max(min_side, image_size / 2);
    for (int i = 0; i < n_samples; ++i) {
        const bool is_sarcastic = sarcastic[static_cast<std::size_t>(i)];
        const int n_tokens = uniform_int(rng, opt.min_tokens, opt.max_tokens);
        std::vector<std::string> words;
        words.reserve(static_cast<std::size_t>(n_tokens));
        for (int t = 0; t < n_tokens; ++t) {
            words.emplace_back(kFiller[static_cast<std::size_t>(uniform_int(rng, 0, kFiller.size() - 1))]);
        }

        DatasetRecord r;
        char idbuf[32];
        std::snprintf(idbuf, sizeof(idbuf), "fx%06d", i);
        r.id = idbuf;
        r.topic = std::string(kTopics[static_cast<std::size_t>(uniform_int(rng, 0, kTopics.size() - 1))]);
        r.image_path = "images/" + r.id + ".png";
        r.sarcastic = is_sarcastic;

        RgbImage img = background(rng, image_size);
        const int window = std::min(opt.clue_window, n_tokens);
        AnnotationSet gold;
        gold.annotator_id = "gold";

        if (opt.mode == FixtureMode::kPlantedClue) {
            if (is_sarcastic) {
                const int len = std::min(uniform_int(rng, 1, 3), window);
                const int start = uniform_int(rng, 0, window - len);
                for (int t = start; t < start + len; ++t) {
                    words[static_cast<std::size_t>(t)] =
                        kClueWords[static_cast<std::size_t>(uniform_int(rng, 0, kClueWords.size() - 1))];
                }
                gold.spans.push_back({start, start + len});
                gold.boxes.push_back(paint_rect(rng, img, min_side, max_side, kColours[0].rgb));
            } else if (uniform_int(rng, 0, 1) == 1) {
                paint_rect(rng, img, min_side, max_side, {0.15, 0.55, 0.20});
            }
        } else {
            const int text_colour = uniform_int(rng, 0, 1);
            const int image_colour = is_sarcastic ? 1 - text_colour : text_colour;
            const int pos = uniform_int(rng, 0, window - 1);
            words[static_cast<std::size_t>(pos)] = std::string(kColours[static_cast<std::size_t>(text_colour)].word);
            // Wide enough that every document cell meets the rectangle in some window.
            const auto box = paint_rect(rng, img, std::max(2, (3 * image_size) / 5),
                                        std::max(2, (5 * image_size) / 6),
                                        kColours[static_cast<std::size_t>(image_colour)].rgb);
            if (is_sarcastic) {
                gold.spans.push_back({pos, pos + 1});
                gold.boxes.push_back(box);
            }
        }
        r.text = join(words);
        if (is_sarcastic) r.gold = std::move(gold);
        validate_record(r);
        set.records.push_back(std::move(r));
        set.images.push_back(std::move(img));
    }
    return set;
}

void write_fixtures(const std::filesystem::path& dir, const FixtureSet& set) {
    std::filesystem::create_directories(dir / "images");
    for (std::size_t i = 0; i < set.records.size(); ++i) {
        save_png(dir / set.records[i].image_path, set.images[i]);
    }
    save_dataset(dir / "dataset.jsonl", set.records);
}

}  // namespace docmsu
