// Copyright (C) 2026 The fusionpref Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fusionpref/codec.hpp"
#include "fusionpref/corpus.hpp"
#include "fusionpref/diffusion.hpp"
#include "fusionpref/pcldm.hpp"
#include "fusionpref/preference.hpp"
#include "fusionpref/run_config.hpp"
#include "json.hpp"

namespace fusionpref::pipeline {

/// Artifact locations of one run.
///
///   <run>/corpus/                      synthetic pairs (make-corpus)
///   <run>/lfm/{codec,prior}.ckpt       train-lfm
///   <run>/paldm/denoiser.ckpt          train-paldm
///   <run>/candidates/index.json        generate-candidates
///   <run>/candidates/manifest.jsonl    autopref / annotate-serve
///   <run>/finetune-<loss>/coupled.ckpt finetune
///   <run>/fused-<model>/<pair>.png     fuse
///   <run>/eval/<input>/metrics.csv     eval
///
/// Each stage directory holds a run.json.
struct Layout {
    explicit Layout(const RunConfig& config);

    std::filesystem::path run_dir, corpus, lfm, paldm, candidates, manifest;

    std::filesystem::path finetune(const std::string& loss) const { return run_dir / ("finetune-" + loss); }
    std::filesystem::path fused(const std::string& model) const { return run_dir / ("fused-" + model); }
    std::filesystem::path eval() const { return run_dir / "eval"; }
};

struct StageResult {
    bool skipped = false;
    std::filesystem::path dir;
    nlohmann::json record;  // contents of run.json
};

struct StageFlags {
    bool force = false;
};

StageResult make_corpus(const RunConfig& config, StageFlags flags = {});
StageResult train_lfm(const RunConfig& config, StageFlags flags = {});
StageResult train_paldm(const RunConfig& config, StageFlags flags = {});
StageResult generate_candidates(const RunConfig& config, StageFlags flags = {});
/// Region = the pair's target mask when present, else the whole image.
StageResult autopref(const RunConfig& config, const std::string& scorer, StageFlags flags = {});
StageResult finetune(const RunConfig& config, pcldm::LossKind loss, StageFlags flags = {});
/// model is "reference" (PALDM, general prompt) or a loss name.
StageResult fuse(const RunConfig& config, const std::string& model, StageFlags flags = {});
/// Metrics CSV for every PNG under `input`; with `reference`, adds
/// target-region SD and off-target MAD against same-named files.
StageResult eval(const RunConfig& config, const std::filesystem::path& input,
                 const std::optional<std::filesystem::path>& reference, StageFlags flags = {});

diffusion::NoiseSchedule schedule(const RunConfig& config);

/// Pairs held out from every training stage.
struct Partition {
    std::vector<ImagePair> train, test;
};
Partition partition_corpus(const RunConfig& config, std::vector<ImagePair> corpus);

/// Per-pair z_T seed shared by candidate generation and fusion.
std::uint64_t pair_seed(std::uint64_t seed, const std::string& pair_id);

/// Encodes manifest records into latents; masks go through downsample_mask.
pcldm::PreferenceBatch preference_batch(const std::vector<preference::PreferenceRecord>& records,
                                        const std::filesystem::path& manifest_root, const LatentCodec& codec);

/// Hash of every regular file under dir: sha256 over "relpath:sha\n" lines.
std::string hash_tree(const std::filesystem::path& dir);

}  // namespace fusionpref::pipeline
