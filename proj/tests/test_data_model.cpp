// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "docmsu/data_model.hpp"
#include "docmsu/errors.hpp"
#include "docmsu/fixtures.hpp"

using namespace docmsu;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
    auto p = fs::temp_directory_path() / ("docmsu_dm_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::vector<DatasetRecord> make_records(int n) {
    std::vector<DatasetRecord> out;
    for (int i = 0; i < n; ++i) {
        DatasetRecord r;
        r.id = "r" + std::to_string(i);
        r.topic = "Science";
        r.text = "one two three";
        r.image_path = "img.png";
        out.push_back(r);
    }
    return out;
}

const char* kThreeLines =
    R"({"id":"a","topic":"Sport","text":"the team won again","image":"a.png","sarcastic":false})"
    "\n"
    R"({"id":"b","topic":"Health","text":"great , another   monday","image":"b.png","sarcastic":true,"spans":[[0,2]],"boxes":[[1,2,3,4]]})"
    "\n"
    R"({"id":"c","topic":"Politics","text":"x","image":"c.png","sarcastic":false})"
    "\n";

}  // namespace

TEST_CASE("whitespace tokenization") {
    CHECK(tokenize("  great ,\tanother\nmonday ") == std::vector<std::string>{"great", ",", "another", "monday"});
    CHECK(tokenize("").empty());
}

TEST_CASE("three valid lines load as three records") {
    std::istringstream in(kThreeLines);
    const auto recs = parse_dataset(in);
    REQUIRE(recs.size() == 3);
    CHECK(recs[1].sarcastic);
    REQUIRE(recs[1].gold.has_value());
    CHECK(recs[1].gold->spans == std::vector<TokenSpan>{{0, 2}});
    CHECK(recs[1].gold->boxes == std::vector<BoundingBox>{{1, 2, 3, 4}});
    CHECK(recs[1].token_count() == 4);
    CHECK_FALSE(recs[0].gold.has_value());
    for (const auto& r : recs) CHECK_NOTHROW(validate_record(r));
}

TEST_CASE("span past the end of the document names the record") {
    std::istringstream in(
        R"({"id":"long","topic":"Sport","text":"a b c","image":"x.png","sarcastic":true,"spans":[[1,4]],"boxes":[[0,0,1,1]]})"
        "\n");
    try {
        parse_dataset(in);
        FAIL("expected a validation error");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("long") != std::string::npos);
    }
}

TEST_CASE("non-sarcastic record with gold is rejected") {
    DatasetRecord r = make_records(1)[0];
    r.sarcastic = false;
    r.gold = AnnotationSet{"gold", {{0, 1}}, {{0, 0, 2, 2}}};
    CHECK_THROWS_AS(validate_record(r), ValidationError);
    r.sarcastic = true;
    CHECK_NOTHROW(validate_record(r));
    r.gold.reset();
    CHECK_THROWS_AS(validate_record(r), ValidationError);
}

TEST_CASE("record invariants") {
    DatasetRecord r = make_records(1)[0];
    r.sarcastic = true;
    r.gold = AnnotationSet{"gold", {{0, 2}, {1, 3}}, {{0, 0, 2, 2}}};
    CHECK_THROWS_AS(validate_record(r), ValidationError);  // overlapping spans
    r.gold = AnnotationSet{"gold", {{2, 2}}, {{0, 0, 2, 2}}};
    CHECK_THROWS_AS(validate_record(r), ValidationError);  // empty span
    r.gold = AnnotationSet{"gold", {{0, 1}}, {{0, 0, 0, 2}}};
    CHECK_THROWS_AS(validate_record(r), ValidationError);  // zero-width box
    r.gold = AnnotationSet{"gold", {{0, 1}}, {{0, 0, 5, 5}}};
    CHECK_NOTHROW(validate_boxes_in_image(r, 5, 5));
    CHECK_THROWS_AS(validate_boxes_in_image(r, 4, 5), ValidationError);
    r.text = "   ";
    CHECK_THROWS_AS(validate_record(r), ValidationError);
}

TEST_CASE("malformed lines are reported with line numbers") {
    std::istringstream in(std::string(kThreeLines) + "{not json\n" +
                          R"({"id":"d","topic":"Sport","text":"a","image":"d.png","sarcastic":false,"extra":1})" + "\n");
    try {
        parse_dataset(in);
        FAIL("expected a validation error");
    } catch (const ValidationError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("line 4") != std::string::npos);
        CHECK(msg.find("line 5") != std::string::npos);
    }
}

TEST_CASE("serialize then load round-trips and is idempotent") {
    std::istringstream in(kThreeLines);
    const auto recs = parse_dataset(in);
    const auto text = serialize_dataset(recs);
    std::istringstream again(text);
    const auto recs2 = parse_dataset(again);
    CHECK(serialize_dataset(recs2) == text);
    CHECK(text.find("\"spans\"") == text.rfind("\"spans\""));  // only the sarcastic record carries spans
}

TEST_CASE("load_dataset errors: missing file, empty file, missing image") {
    const auto dir = scratch_dir("load");
    CHECK_THROWS_AS(load_dataset(dir / "absent.jsonl"), MissingArtifactError);
    std::ofstream(dir / "empty.jsonl").close();
    CHECK_THROWS_AS(load_dataset(dir / "empty.jsonl"), ValidationError);

    std::ofstream(dir / "d.jsonl") << kThreeLines;
    LoadOptions strict;
    strict.strict_images = true;
    CHECK_THROWS(load_dataset(dir / "d.jsonl", strict));
    CHECK(load_dataset(dir / "d.jsonl").size() == 3);  // warnings only
    fs::remove_all(dir);
}

TEST_CASE("split sizes follow rounding with the remainder in train") {
    SplitConfig cfg;
    auto s10 = split_dataset(make_records(10), cfg);
    CHECK(s10.train.size() == 7);
    CHECK(s10.val.size() == 2);
    CHECK(s10.test.size() == 1);
    auto s100 = split_dataset(make_records(100), cfg);
    CHECK(s100.train.size() == 70);
    CHECK(s100.val.size() == 20);
    CHECK(s100.test.size() == 10);
    auto s11 = split_dataset(make_records(11), cfg);
    CHECK(s11.val.size() == 2);
    CHECK(s11.test.size() == 1);
    CHECK(s11.train.size() == 8);
}

TEST_CASE("splits are deterministic, disjoint and exhaustive") {
    const auto recs = make_records(53);
    SplitConfig cfg;
    cfg.seed = 9;
    const auto a = split_dataset(recs, cfg);
    const auto b = split_dataset(recs, cfg);
    CHECK(ids_hash(a.train) == ids_hash(b.train));
    CHECK(ids_hash(a.val) == ids_hash(b.val));
    CHECK(ids_hash(a.test) == ids_hash(b.test));
    std::set<std::string> all;
    for (const auto* part : {&a.train, &a.val, &a.test}) {
        for (const auto& r : *part) CHECK(all.insert(r.id).second);
    }
    CHECK(all.size() == recs.size());
    cfg.seed = 10;
    CHECK(ids_hash(split_dataset(recs, cfg).train) != ids_hash(a.train));
}

TEST_CASE("split config validation") {
    SplitConfig cfg;
    cfg.ratios = {0.7, 0.2, 0.2};
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg.ratios = {0.9, 0.1, 0.0};
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    CHECK_THROWS_AS(split_dataset(make_records(2), SplitConfig{}), ValidationError);  // a partition would be empty
}

TEST_CASE("fixtures: counts, determinism and invariants") {
    const auto a = gen_fixtures(9, 5, 32);
    REQUIRE(a.records.size() == 9);
    REQUIRE(a.images.size() == 9);
    CHECK(std::count_if(a.records.begin(), a.records.end(), [](const auto& r) { return r.sarcastic; }) == 3);
    const auto b = gen_fixtures(9, 5, 32);
    CHECK(serialize_dataset(a.records) == serialize_dataset(b.records));
    CHECK(a.images[4].pixels == b.images[4].pixels);

    const auto big = gen_fixtures(300, 1, 32);
    for (const auto& r : big.records) {
        CHECK_NOTHROW(validate_record(r));
        CHECK_NOTHROW(validate_boxes_in_image(r, 32, 32));
        CHECK(r.token_count() >= 20);
        CHECK(r.token_count() <= 100);
    }
    const auto one = gen_fixtures(1, 3, 32);
    CHECK_FALSE(one.records[0].sarcastic);
    CHECK_FALSE(one.records[0].gold.has_value());
}

TEST_CASE("fixture labels are independent of a split with the same seed") {
    const auto set = gen_fixtures(500, 42, 32);
    SplitConfig cfg;
    cfg.seed = 42;
    const auto s = split_dataset(set.records, cfg);
    const auto sarcastic = [](const std::vector<DatasetRecord>& v) {
        return std::count_if(v.begin(), v.end(), [](const auto& r) { return r.sarcastic; });
    };
    CHECK(sarcastic(s.val) > 15);
    CHECK(sarcastic(s.test) > 5);
}

TEST_CASE("fixtures written to disk load back") {
    const auto dir = scratch_dir("fx");
    const auto set = gen_fixtures(12, 2, 32);
    write_fixtures(dir, set);
    LoadOptions opt;
    opt.strict_images = true;
    const auto recs = load_dataset(dir / "dataset.jsonl", opt);
    CHECK(serialize_dataset(recs) == serialize_dataset(set.records));
    fs::remove_all(dir);
}
