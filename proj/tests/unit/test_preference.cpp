// Copyright (C) 2026 The fusionpref Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <fstream>

#include "fusionpref/error.hpp"
#include "fusionpref/metrics.hpp"
#include "fusionpref/preference.hpp"
#include "test_support.hpp"

using namespace fusionpref;
using namespace fusionpref::preference;
namespace fs = std::filesystem;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected an error");
    return ErrorCode::Io;
}

// candidates with increasing contrast: flat, mild, strong
CandidateSet write_candidates(const fs::path& dir, int count = 3) {
    fs::create_directories(dir / "p0");
    CandidateSet set{"p0", dir / "p0/ir.png", dir / "p0/vis.png", {}};
    write_png(set.ir_path, testing::random_image(16, 16, 1, 1));
    write_png(set.vis_path, testing::random_image(16, 16, 1, 2));
    for (int i = 0; i < count; ++i) {
        Image img(16, 16, 1, 0.5f);
        const float amp = 0.1f * static_cast<float>(i);
        for (int y = 0; y < 16; ++y)
            for (int x = 0; x < 16; ++x) img.at(y, x) = 0.5f + (((x + y) % 2) ? amp : -amp);
        auto path = dir / "p0" / ("cand_" + std::to_string(i) + ".png");
        write_png(path, img);
        set.candidates.push_back(path);
    }
    return set;
}

PreferenceRecord sample_record() {
    return {"p7", "p7/ir.png", "p7/vis.png", "p7/cand_level4.png", "p7/cand_level0.png", "masks/p7_0.png",
            Source::automatic("sd"), "2026-01-02T03:04:05Z", std::nullopt};
}

}  // namespace

TEST_CASE("source strings") {
    CHECK(Source::parse("human") == Source::from_human());
    CHECK(Source::parse("auto:sd") == Source::automatic("sd"));
    CHECK(Source::automatic("en").str() == "auto:en");
    CHECK(code_of([] { Source::parse("robot"); }) == ErrorCode::MalformedManifest);
    CHECK(code_of([] { Source::parse("auto:"); }) != ErrorCode::Io);
}

TEST_CASE("record json round trip") {
    auto r = sample_record();
    CHECK(from_json_line(to_json_line(r)) == r);
    r.annotator = "ana";
    r.source = Source::from_human();
    CHECK(from_json_line(to_json_line(r)) == r);
    CHECK(to_json_line(r).find('\n') == std::string::npos);

    CHECK(code_of([] { from_json_line("{not json"); }) == ErrorCode::MalformedManifest);
    CHECK(code_of([] { from_json_line("[]"); }) == ErrorCode::MalformedManifest);
    auto bad = sample_record();
    bad.loser_path = bad.winner_path;
    CHECK(code_of([&] { from_json_line(to_json_line(bad)); }) == ErrorCode::IndexCollision);
}

TEST_CASE("manifest files") {
    testing::TempDir dir("manifest");
    const auto path = dir / "manifest.jsonl";
    std::ofstream(path).close();
    CHECK(load_manifest(path, false).empty());

    auto r = sample_record();
    append_manifest(path, r);
    auto r2 = r;
    r2.pair_id = "p8";
    append_manifest(path, r2);
    auto loaded = load_manifest(path, false);
    REQUIRE(loaded.size() == 2);
    CHECK(loaded[0] == r);
    CHECK(loaded[1] == r2);

    SUBCASE("a trailing partial line is invisible") {
        std::ofstream(path, std::ios::app) << "{\"pair_id\": \"p9\"";
        CHECK(load_manifest(path, false).size() == 2);
    }
    SUBCASE("malformed lines name their line number") {
        std::ofstream(path, std::ios::app) << "garbage\n";
        try {
            load_manifest(path, false);
            FAIL("expected MalformedManifest");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::MalformedManifest);
            CHECK(std::string(e.what()).find(":3:") != std::string::npos);
        }
    }
    SUBCASE("unknown sources are rejected") {
        auto line = to_json_line(r);
        line.replace(line.find("auto:sd"), 7, "oracle!");
        std::ofstream(path, std::ios::app) << line << "\n";
        CHECK(code_of([&] { load_manifest(path, false); }) == ErrorCode::MalformedManifest);
    }
    SUBCASE("missing files are listed") {
        try {
            load_manifest(path, true);
            FAIL("expected MissingFile");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::MissingFile);
            CHECK(std::string(e.what()).find("p7/cand_level4.png") != std::string::npos);
        }
    }
}

TEST_CASE("ranking and tie-breaks") {
    CHECK(rank_candidates({10, 30, 20}) == std::pair<size_t, size_t>{1, 0});
    CHECK(rank_candidates({5, 5, 5, 5}) == std::pair<size_t, size_t>{0, 3});
    CHECK(code_of([] { rank_candidates({1.0}); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("builtin scorers") {
    auto scorers = builtin_scorers();
    std::vector<std::string> names;
    for (const auto& s : scorers) names.push_back(s.name);
    CHECK(names == std::vector<std::string>{"en", "sd", "ag", "composite"});

    Image flat(16, 16, 1, 0.3f);
    CHECK(find_scorer("en").score(flat, nullptr) == 0.0);
    Image binary(16, 16, 1, 0.0f);
    for (int x = 0; x < 8; ++x)
        for (int y = 0; y < 16; ++y) binary.at(y, x) = 1.0f;
    CHECK(find_scorer("sd").score(binary, nullptr) == 127.5);
    CHECK(find_scorer("sd").score(binary, nullptr) > find_scorer("sd").score(flat, nullptr));

    auto img = testing::random_image(16, 16, 1, 3);
    auto en_only = composite_scorer(1, 0, 0);
    CHECK(en_only.score(img, nullptr) == find_scorer("en").score(img, nullptr));
    auto mask = rectangle_mask(16, 16, 0, 0, 8, 16);
    const auto masked = metrics::masked_stats(metrics::to_gray(img), mask);
    CHECK(find_scorer("sd").score(img, &mask) == *masked.in_mask.sd);
    CHECK(code_of([] { find_scorer("musiq"); }) == ErrorCode::NotFound);
}

TEST_CASE("region-specific collection") {
    testing::TempDir dir("store");
    auto set = write_candidates(dir / "cands", 5);
    PreferenceStore store(dir / "cands/manifest.jsonl");
    auto mask = rectangle_mask(16, 16, 4, 4, 6, 6);
    auto got = store.collect_region_specific(set, mask, 2, 4, Source::from_human(), "ana");
    CHECK(got.winner_index == 2);
    CHECK(got.loser_index == 4);
    CHECK(got.record.winner_path == "p0/cand_2.png");
    CHECK(got.record.mask_path == "masks/p0_0.png");
    CHECK(got.warnings.empty());
    CHECK(read_png(store.resolve(got.record.mask_path)).data == mask.data);
    auto loaded = store.load();
    REQUIRE(loaded.size() == 1);
    CHECK(loaded[0] == got.record);

    auto second = store.collect_region_specific(set, mask, 0, 1);
    CHECK(second.record.mask_path == "masks/p0_1.png");

    auto empty = store.collect_region_specific(set, Image(16, 16, 1, 0.0f), 0, 1);
    CHECK(empty.warnings.size() == 1);
    CHECK(store.load().size() == 3);

    CHECK(code_of([&] { store.collect_region_specific(set, mask, 3, 3); }) == ErrorCode::IndexCollision);
    Image grey(16, 16, 1, 0.5f);
    CHECK(code_of([&] { store.collect_region_specific(set, grey, 0, 1); }) == ErrorCode::NonBinaryMask);
    CHECK(code_of([&] { store.collect_region_specific(set, rectangle_mask(8, 8, 0, 0, 2, 2), 0, 1); }) ==
          ErrorCode::ShapeMismatch);
    CHECK(code_of([&] { store.collect_region_specific(set, mask, 0, 9); }) == ErrorCode::InvalidRange);
    CHECK(store.load().size() == 3);
}

TEST_CASE("global collection") {
    testing::TempDir dir("store");
    auto set = write_candidates(dir / "cands");
    PreferenceStore store(dir / "cands/manifest.jsonl");
    auto sd = find_scorer("sd");
    auto whole = store.collect_global(set, sd);
    CHECK(whole.winner_index == 2);
    CHECK(whole.loser_index == 0);
    CHECK(whole.record.source == Source::automatic("sd"));
    auto m = read_png(store.resolve(whole.record.mask_path));
    CHECK(std::all_of(m.data.begin(), m.data.end(), [](float v) { return v == 1.0f; }));

    auto patch = store.collect_global(set, sd, Rect{2, 2, 4, 4});
    auto pm = read_png(store.resolve(patch.record.mask_path));
    CHECK(pm.data == rectangle_mask(16, 16, 2, 2, 4, 4).data);

    auto again = store.collect_global(set, sd);
    CHECK(again.winner_index == whole.winner_index);
    CHECK(again.loser_index == whole.loser_index);

    CandidateSet lonely{"p1", set.ir_path, set.vis_path, {set.candidates[0]}};
    CHECK(code_of([&] { store.collect_global(lonely, sd); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("a missing manifest loads as empty") {
    testing::TempDir dir("store");
    PreferenceStore store(dir / "none/manifest.jsonl");
    CHECK(store.load().empty());
    CHECK(utc_timestamp().back() == 'Z');
}
