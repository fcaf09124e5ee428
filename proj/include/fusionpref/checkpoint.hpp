// Copyright (C) 2026 The fusionpref Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <map>
#include <string>

#include "fusionpref/codec.hpp"
#include "fusionpref/denoiser.hpp"
#include "fusionpref/pcldm.hpp"
#include "fusionpref/prior_fusion.hpp"
#include "json.hpp"

namespace fusionpref::checkpoint {

/// Self-describing container:
///   "FPCKPT01" | u64 header size | JSON header | raw little-endian tensor bytes
/// The header carries the architecture descriptor, free-form metadata and
/// a table of {name, dtype, shape, offset, nbytes}.
struct Checkpoint {
    nlohmann::json architecture;
    nlohmann::json metadata = nlohmann::json::object();
    std::map<std::string, torch::Tensor> tensors;
};

void save(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load(const std::filesystem::path& path);

/// SHA-256 over names, dtypes, shapes and bytes of every tensor.
std::string state_hash(const std::map<std::string, torch::Tensor>& tensors);
std::string state_hash(const torch::nn::Module& module);

nlohmann::json describe(const paldm::DenoiserOptions& opts);
paldm::DenoiserOptions denoiser_options(const nlohmann::json& j);

void save_denoiser(const std::filesystem::path& path, const paldm::Denoiser& model, nlohmann::json metadata = {});
paldm::Denoiser load_denoiser(const std::filesystem::path& path);

void save_prior(const std::filesystem::path& path, const prior::PriorFusionNet& model, nlohmann::json metadata = {});
prior::PriorFusionNet load_prior(const std::filesystem::path& path);

/// Stores the codec kind and, for the autoencoder variant, its weights.
void save_codec(const std::filesystem::path& path, const LatentCodec& codec, nlohmann::json metadata = {});
LatentCodec load_codec(const std::filesystem::path& path);

/// Stores only the trainable branch and the projection; the reference is
/// identified by its state hash and must be supplied on load.
void save_coupled(const std::filesystem::path& path, const pcldm::CoupledModel& model, nlohmann::json metadata = {});
pcldm::CoupledModel load_coupled(const std::filesystem::path& path, const paldm::Denoiser& reference);

}  // namespace fusionpref::checkpoint
