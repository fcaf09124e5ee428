// Copyright (C) 2026 The fusionpref Authors
// SPDX-License-Identifier: Apache-2.0

#include "fusionpref/run_config.hpp"

#include <fstream>

#include "fusionpref/error.hpp"

namespace fusionpref {

using nlohmann::json;

namespace {

json sections(const RunConfig& c) {
    return {
        {"codec",
         {{"variant", c.codec.variant},
          {"factor", c.codec.factor},
          {"image_channels", c.codec.image_channels},
          {"autoencoder_steps", c.codec.autoencoder_steps},
          {"autoencoder_width", c.codec.autoencoder_width}}},
        {"schedule",
         {{"steps", c.schedule.steps},
          {"beta_start", c.schedule.beta_start},
          {"beta_end", c.schedule.beta_end},
          {"sampling_steps", c.schedule.sampling_steps}}},
        {"corpus", {{"count", c.corpus.count}, {"size", c.corpus.size}, {"holdout", c.corpus.holdout}}},
        {"lfm",
         {{"width", c.lfm.width},
          {"blocks", c.lfm.blocks},
          {"steps", c.lfm.steps},
          {"batch_size", c.lfm.batch_size},
          {"learning_rate", c.lfm.learning_rate},
          {"sigma1", c.lfm.sigma1},
          {"sigma2", c.lfm.sigma2}}},
        {"paldm",
         {{"base_width", c.paldm.base_width},
          {"channel_mults", c.paldm.channel_mults},
          {"time_dim", c.paldm.time_dim},
          {"prompt_dim", c.paldm.prompt_dim},
          {"attention_dim", c.paldm.attention_dim},
          {"groups", c.paldm.groups},
          {"levels", c.paldm.levels},
          {"lambda", c.paldm.lambda},
          {"steps", c.paldm.steps},
          {"batch_size", c.paldm.batch_size},
          {"learning_rate", c.paldm.learning_rate},
          {"eval_every", c.paldm.eval_every}}},
        {"finetune",
         {{"beta", c.finetune.beta},
          {"mu", c.finetune.mu},
          {"margin", c.finetune.margin},
          {"learning_rate", c.finetune.learning_rate},
          {"batch_size", c.finetune.batch_size},
          {"epochs", c.finetune.epochs},
          {"divergence_factor", c.finetune.divergence_factor},
          {"divergence_patience", c.finetune.divergence_patience}}},
        {"paths",
         {{"run_dir", c.paths.run_dir},
          {"corpus", c.paths.corpus},
          {"candidates", c.paths.candidates},
          {"manifest", c.paths.manifest}}},
    };
}

template <typename T>
void read(const json& section, const char* key, T& out, const std::string& where) {
    if (!section.contains(key)) return;
    try {
        out = section.at(key).get<T>();
    } catch (const json::exception&) {
        fail(ErrorCode::InvalidArgument, "config field " + where + "." + key + " has the wrong type");
    }
}

void check_keys(const json& given, const json& known, const std::string& where) {
    require(given.is_object(), ErrorCode::InvalidArgument, "config section " + where + " must be an object");
    for (const auto& item : given.items()) {
        require(known.contains(item.key()), ErrorCode::InvalidArgument,
                "unknown config key " + (where.empty() ? "" : where + ".") + item.key());
    }
}

}  // namespace

json RunConfig::to_json() const {
    json j = sections(*this);
    j["version"] = kVersion;
    j["seed"] = seed ? json(*seed) : json(nullptr);
    return j;
}

RunConfig RunConfig::from_json(const json& j) {
    RunConfig c;
    json known = sections(c);
    known["version"] = kVersion;
    known["seed"] = nullptr;
    check_keys(j, known, "");
    require(j.value("version", kVersion) == kVersion, ErrorCode::InvalidArgument,
            "unsupported config version " + j.value("version", json()).dump() + " (expected " +
                std::to_string(kVersion) + ")");
    if (j.contains("seed") && !j["seed"].is_null()) {
        require(j["seed"].is_number_unsigned() || (j["seed"].is_number_integer() && j["seed"].get<int64_t>() >= 0),
                ErrorCode::InvalidArgument, "seed must be a non-negative integer");
        c.seed = j["seed"].get<std::uint64_t>();
    }
    for (const auto& item : j.items()) {
        if (item.key() == "version" || item.key() == "seed") continue;
        check_keys(item.value(), known[item.key()], item.key());
    }
    auto sec = [&](const char* name) { return j.contains(name) ? j[name] : json::object(); };
    auto s = sec("codec");
    read(s, "variant", c.codec.variant, "codec");
    read(s, "factor", c.codec.factor, "codec");
    read(s, "image_channels", c.codec.image_channels, "codec");
    read(s, "autoencoder_steps", c.codec.autoencoder_steps, "codec");
    read(s, "autoencoder_width", c.codec.autoencoder_width, "codec");
    s = sec("schedule");
    read(s, "steps", c.schedule.steps, "schedule");
    read(s, "beta_start", c.schedule.beta_start, "schedule");
    read(s, "beta_end", c.schedule.beta_end, "schedule");
    read(s, "sampling_steps", c.schedule.sampling_steps, "schedule");
    s = sec("corpus");
    read(s, "count", c.corpus.count, "corpus");
    read(s, "size", c.corpus.size, "corpus");
    read(s, "holdout", c.corpus.holdout, "corpus");
    s = sec("lfm");
    read(s, "width", c.lfm.width, "lfm");
    read(s, "blocks", c.lfm.blocks, "lfm");
    read(s, "steps", c.lfm.steps, "lfm");
    read(s, "batch_size", c.lfm.batch_size, "lfm");
    read(s, "learning_rate", c.lfm.learning_rate, "lfm");
    read(s, "sigma1", c.lfm.sigma1, "lfm");
    read(s, "sigma2", c.lfm.sigma2, "lfm");
    s = sec("paldm");
    read(s, "base_width", c.paldm.base_width, "paldm");
    read(s, "channel_mults", c.paldm.channel_mults, "paldm");
    read(s, "time_dim", c.paldm.time_dim, "paldm");
    read(s, "prompt_dim", c.paldm.prompt_dim, "paldm");
    read(s, "attention_dim", c.paldm.attention_dim, "paldm");
    read(s, "groups", c.paldm.groups, "paldm");
    read(s, "levels", c.paldm.levels, "paldm");
    read(s, "lambda", c.paldm.lambda, "paldm");
    read(s, "steps", c.paldm.steps, "paldm");
    read(s, "batch_size", c.paldm.batch_size, "paldm");
    read(s, "learning_rate", c.paldm.learning_rate, "paldm");
    read(s, "eval_every", c.paldm.eval_every, "paldm");
    s = sec("finetune");
    read(s, "beta", c.finetune.beta, "finetune");
    read(s, "mu", c.finetune.mu, "finetune");
    read(s, "margin", c.finetune.margin, "finetune");
    read(s, "learning_rate", c.finetune.learning_rate, "finetune");
    read(s, "batch_size", c.finetune.batch_size, "finetune");
    read(s, "epochs", c.finetune.epochs, "finetune");
    read(s, "divergence_factor", c.finetune.divergence_factor, "finetune");
    read(s, "divergence_patience", c.finetune.divergence_patience, "finetune");
    s = sec("paths");
    read(s, "run_dir", c.paths.run_dir, "paths");
    read(s, "corpus", c.paths.corpus, "paths");
    read(s, "candidates", c.paths.candidates, "paths");
    read(s, "manifest", c.paths.manifest, "paths");
    return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorCode::MissingFile, "cannot open config " + path.string());
    try {
        return from_json(json::parse(in));
    } catch (const json::parse_error& e) {
        fail(ErrorCode::InvalidArgument, "config " + path.string() + " is not valid JSON: " + e.what());
    }
}

void RunConfig::set(const std::string& assignment) {
    const auto eq = assignment.find('=');
    const auto dot = assignment.find('.');
    require(eq != std::string::npos && dot != std::string::npos && dot < eq, ErrorCode::InvalidArgument,
            "override must look like section.field=value, got '" + assignment + "'");
    const std::string section = assignment.substr(0, dot);
    const std::string field = assignment.substr(dot + 1, eq - dot - 1);
    const std::string text = assignment.substr(eq + 1);
    json j = to_json();
    require(j.contains(section) && j[section].is_object() && j[section].contains(field), ErrorCode::InvalidArgument,
            "unknown config field " + section + "." + field);
    json& slot = j[section][field];
    require(!slot.is_array() && !slot.is_object(), ErrorCode::InvalidArgument,
            section + "." + field + " is not a scalar field");
    if (slot.is_string()) {
        slot = text;
    } else {
        try {
            slot = json::parse(text);
        } catch (const json::exception&) {
            fail(ErrorCode::InvalidArgument, "cannot parse value '" + text + "' for " + section + "." + field);
        }
    }
    *this = from_json(j);
}

std::uint64_t RunConfig::require_seed() const {
    require(seed.has_value(), ErrorCode::InvalidArgument, "a seed is mandatory: set \"seed\" in the config or pass --seed");
    return *seed;
}

void RunConfig::validate() const {
    require_seed();
    auto range = [](bool ok, const std::string& what) { require(ok, ErrorCode::InvalidRange, what); };
    require(codec.variant == "patchify" || codec.variant == "tiny-autoencoder", ErrorCode::InvalidArgument,
            "codec.variant must be patchify or tiny-autoencoder");
    range(codec.factor >= 2 && (codec.factor & (codec.factor - 1)) == 0, "codec.factor must be a power of two >= 2");
    range(codec.image_channels == 1 || codec.image_channels == 3, "codec.image_channels must be 1 or 3");
    range(codec.autoencoder_steps >= 0 && codec.autoencoder_width > 0, "codec autoencoder settings out of range");
    range(schedule.steps >= 2, "schedule.steps must be >= 2");
    range(schedule.beta_start > 0 && schedule.beta_start < schedule.beta_end && schedule.beta_end < 1,
          "schedule betas must satisfy 0 < beta_start < beta_end < 1");
    range(schedule.sampling_steps >= 1 && schedule.sampling_steps <= schedule.steps,
          "schedule.sampling_steps must be in [1, schedule.steps]");
    range(corpus.count >= 1 && corpus.size >= codec.factor && corpus.size % codec.factor == 0,
          "corpus.size must be a positive multiple of codec.factor");
    range(corpus.holdout >= 0 && corpus.holdout < corpus.count, "corpus.holdout must be in [0, count)");
    range(lfm.width > 0 && lfm.blocks >= 0 && lfm.steps >= 0 && lfm.batch_size > 0 && lfm.learning_rate > 0,
          "lfm settings out of range");
    range(lfm.sigma1 >= 0 && lfm.sigma2 >= 0, "lfm sigmas must be non-negative");
    range(paldm.levels >= 2, "paldm.levels must be >= 2");
    range(paldm.lambda >= 0, "paldm.lambda must be non-negative");
    range(paldm.steps >= 0 && paldm.batch_size > 0 && paldm.learning_rate > 0 && paldm.eval_every > 0,
          "paldm training settings out of range");
    range(!paldm.channel_mults.empty() && paldm.base_width > 0 && paldm.groups > 0 &&
              paldm.base_width % paldm.groups == 0,
          "paldm width must be a positive multiple of groups");
    range(finetune.beta > 0 && finetune.mu >= 0 && finetune.margin >= 0, "finetune loss weights out of range");
    range(finetune.learning_rate > 0 && finetune.batch_size > 0 && finetune.epochs >= 0,
          "finetune training settings out of range");
    range(finetune.divergence_factor > 1 && finetune.divergence_patience > 0, "finetune divergence guard out of range");
    require(!paths.run_dir.empty(), ErrorCode::InvalidArgument, "paths.run_dir must not be empty");
}

}  // namespace fusionpref
