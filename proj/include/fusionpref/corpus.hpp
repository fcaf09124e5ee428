// Copyright (C) 2026 The fusionpref Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fusionpref/image.hpp"

namespace fusionpref {

/// One registered infrared/visible pair. `target` is the ground-truth blob
/// mask written by the synthetic generator, absent for real data.
struct ImagePair {
    std::string id;
    Image ir;
    Image vis;
    std::optional<Image> target;
};

/// Reads `<id>_ir.png` / `<id>_vis.png` pairs (and `targets/<id>.png` when
/// present), sorted by id.
std::vector<ImagePair> load_corpus(const std::filesystem::path& dir);

std::filesystem::path ir_path(const std::filesystem::path& dir, const std::string& id);
std::filesystem::path vis_path(const std::filesystem::path& dir, const std::string& id);
std::filesystem::path target_path(const std::filesystem::path& dir, const std::string& id);

/// Deterministic split: the last max(1, round(fraction·n)) pairs of a
/// seeded permutation are held out. With fewer than two pairs the
/// validation set aliases the training set.
struct CorpusSplit {
    std::vector<size_t> train;
    std::vector<size_t> validation;
};
CorpusSplit split_corpus(size_t n, double validation_fraction, std::uint64_t seed);

/// Synthetic desk-scale corpus: IR = dark smooth background with bright
/// flat-topped thermal blobs; VIS = textured background with geometric
/// shapes, where each target is dim on average but carries a high-contrast
/// stripe pattern. Writes the pair files and `targets/<id>.png`.
struct SyntheticCorpusOptions {
    int count = 200;
    int size = 64;
    std::uint64_t seed = 0;
};
std::vector<ImagePair> make_synthetic_corpus(const std::filesystem::path& dir, const SyntheticCorpusOptions& opts);

/// In-memory generation of a single pair (used by the writer above).
ImagePair synthesize_pair(const std::string& id, int size, std::uint64_t seed);

}  // namespace fusionpref
