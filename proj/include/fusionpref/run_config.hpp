// Copyright (C) 2026 The fusionpref Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace fusionpref {

/// Versioned run configuration. Every field has a default except the seed.
struct RunConfig {
    static constexpr int kVersion = 1;

    std::optional<std::uint64_t> seed;

    struct Codec {
        std::string variant = "patchify";
        int factor = 4;
        int image_channels = 1;
        int64_t autoencoder_steps = 1500;
        int64_t autoencoder_width = 32;
    } codec;

    struct Schedule {
        int64_t steps = 200;
        double beta_start = 1e-4;
        double beta_end = 0.02;
        int64_t sampling_steps = 50;
    } schedule;

    struct Corpus {
        int count = 200;
        int size = 64;
        int holdout = 20;
    } corpus;

    struct Lfm {
        int64_t width = 32;
        int64_t blocks = 4;
        int64_t steps = 3000;
        int64_t batch_size = 16;
        double learning_rate = 1e-3;
        double sigma1 = 4.0;
        double sigma2 = 10.0;
    } lfm;

    struct Paldm {
        int64_t base_width = 32;
        std::vector<int64_t> channel_mults{1, 2};
        int64_t time_dim = 128;
        int64_t prompt_dim = 64;
        int64_t attention_dim = 64;
        int64_t groups = 8;
        int64_t levels = 5;
        double lambda = 2.0;
        int64_t steps = 3000;
        int64_t batch_size = 8;
        double learning_rate = 5e-4;
        int64_t eval_every = 100;
    } paldm;

    struct Finetune {
        double beta = 10.0;
        double mu = 0.5;
        double margin = 1.0;
        double learning_rate = 1e-5;
        int64_t batch_size = 8;
        int64_t epochs = 20;
        double divergence_factor = 10.0;
        int64_t divergence_patience = 100;
    } finetune;

    struct Paths {
        std::string run_dir = "run";
        std::string corpus;      // default <run_dir>/corpus
        std::string candidates;  // default <run_dir>/candidates
        std::string manifest;    // default <candidates>/manifest.jsonl
    } paths;

    nlohmann::json to_json() const;
    /// Strict: unknown keys and a wrong version are rejected.
    static RunConfig from_json(const nlohmann::json& j);
    static RunConfig load(const std::filesystem::path& path);

    /// Applies `section.field=value` (scalar fields only).
    void set(const std::string& assignment);

    /// Throws InvalidRange / InvalidArgument; a missing seed is an error.
    void validate() const;

    std::uint64_t require_seed() const;
};

}  // namespace fusionpref
