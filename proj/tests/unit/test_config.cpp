// Copyright (C) 2026 The fusionpref Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <fstream>

#include "fusionpref/error.hpp"
#include "fusionpref/run_config.hpp"
#include "test_support.hpp"

using namespace fusionpref;
using nlohmann::json;

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

RunConfig seeded() {
    RunConfig c;
    c.seed = 7;
    return c;
}

}  // namespace

TEST_CASE("defaults") {
    RunConfig c;
    CHECK_FALSE(c.seed.has_value());
    CHECK(c.schedule.steps == 200);
    CHECK(c.paldm.levels == 5);
    CHECK(c.paldm.lambda == 2.0);
    CHECK(c.finetune.beta == 10.0);
    CHECK(c.finetune.mu == 0.5);
    CHECK(c.corpus.count == 200);
    CHECK_NOTHROW(seeded().validate());
}

TEST_CASE("json round trip") {
    auto c = seeded();
    c.paldm.channel_mults = {1, 2, 4};
    c.finetune.beta = 3.5;
    c.paths.run_dir = "elsewhere";
    auto back = RunConfig::from_json(c.to_json());
    CHECK(back.to_json() == c.to_json());
    CHECK(*back.seed == 7);
    CHECK(RunConfig::from_json(json::object()).to_json() == RunConfig{}.to_json());
}

TEST_CASE("strict parsing") {
    CHECK(code_of([] { RunConfig::from_json(json{{"colour", 1}}); }) == ErrorCode::InvalidArgument);
    CHECK(code_of([] { RunConfig::from_json(json{{"lfm", {{"depth", 3}}}}); }) == ErrorCode::InvalidArgument);
    CHECK(code_of([] { RunConfig::from_json(json{{"version", 2}}); }) == ErrorCode::InvalidArgument);
    CHECK(code_of([] { RunConfig::from_json(json{{"seed", -1}}); }) == ErrorCode::InvalidArgument);
    CHECK(code_of([] { RunConfig::from_json(json{{"lfm", {{"steps", "many"}}}}); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("load from disk") {
    testing::TempDir dir("config");
    std::ofstream(dir / "c.json") << seeded().to_json().dump(2);
    CHECK(*RunConfig::load(dir / "c.json").seed == 7);
    std::ofstream(dir / "bad.json") << "{ nope";
    CHECK(code_of([&] { RunConfig::load(dir / "bad.json"); }) == ErrorCode::InvalidArgument);
    CHECK(code_of([&] { RunConfig::load(dir / "absent.json"); }) == ErrorCode::MissingFile);
}

TEST_CASE("overrides") {
    auto c = seeded();
    c.set("paldm.steps=12");
    c.set("codec.variant=tiny-autoencoder");
    c.set("finetune.beta=0.25");
    CHECK(c.paldm.steps == 12);
    CHECK(c.codec.variant == "tiny-autoencoder");
    CHECK(c.finetune.beta == 0.25);
    CHECK(code_of([&] { c.set("paldm.steps"); }) == ErrorCode::InvalidArgument);
    CHECK(code_of([&] { c.set("paldm.nothing=1"); }) == ErrorCode::InvalidArgument);
    CHECK(code_of([&] { c.set("paldm.channel_mults=1"); }) == ErrorCode::InvalidArgument);
    CHECK(code_of([&] { c.set("paldm.steps=abc"); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("validation") {
    CHECK(code_of([] { RunConfig{}.validate(); }) == ErrorCode::InvalidArgument);
    CHECK(code_of([] { RunConfig{}.require_seed(); }) == ErrorCode::InvalidArgument);
    auto bad = [](const std::string& assignment) {
        auto c = seeded();
        c.set(assignment);
        return code_of([&] { c.validate(); });
    };
    CHECK(bad("codec.factor=3") == ErrorCode::InvalidRange);
    CHECK(bad("schedule.steps=1") == ErrorCode::InvalidRange);
    CHECK(bad("schedule.sampling_steps=500") == ErrorCode::InvalidRange);
    CHECK(bad("schedule.beta_end=0.00001") == ErrorCode::InvalidRange);
    CHECK(bad("corpus.size=66") == ErrorCode::InvalidRange);
    CHECK(bad("corpus.holdout=200") == ErrorCode::InvalidRange);
    CHECK(bad("paldm.levels=1") == ErrorCode::InvalidRange);
    CHECK(bad("paldm.groups=5") == ErrorCode::InvalidRange);
    CHECK(bad("finetune.beta=0") == ErrorCode::InvalidRange);
    CHECK(bad("finetune.divergence_factor=1") == ErrorCode::InvalidRange);
    CHECK(bad("codec.variant=vae") == ErrorCode::InvalidArgument);
}
