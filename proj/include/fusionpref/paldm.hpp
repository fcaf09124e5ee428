// Copyright (C) 2026 The fusionpref Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fusionpref/codec.hpp"
#include "fusionpref/corpus.hpp"
#include "fusionpref/denoiser.hpp"
#include "fusionpref/diffusion.hpp"
#include "fusionpref/prior_fusion.hpp"

namespace fusionpref::paldm {

/// Discrete conditioning token: the general fusion prompt or property level
/// k of N. Levels map to token ids 0..N-1 and the general prompt to N.
struct PropertyPrompt {
    enum class Kind { General, Property };

    Kind kind = Kind::General;
    int64_t level = 0;
    int64_t levels = 5;

    static PropertyPrompt general(int64_t levels);
    static PropertyPrompt property(int64_t level, int64_t levels);
    /// Parses "general" or "level<k>".
    static PropertyPrompt from_label(const std::string& label, int64_t levels);

    int64_t token_id() const;
    std::string label() const;
    /// k/(N-1) for property prompts; undefined for the general prompt.
    double alpha() const;

    bool operator==(const PropertyPrompt&) const = default;
};

/// The general prompt followed by every property level.
std::vector<PropertyPrompt> default_prompt_set(int64_t levels);

/// ½(α·z_ir + (1−α)·z_vis) + ½·z_fusion with α = k/(N−1).
torch::Tensor interpolate_latent(const torch::Tensor& z_ir, const torch::Tensor& z_vis, const torch::Tensor& z_fusion,
                                 int64_t k, int64_t levels);

/// Per-sample variant: k holds one level per batch element.
torch::Tensor interpolate_latent(const torch::Tensor& z_ir, const torch::Tensor& z_vis, const torch::Tensor& z_fusion,
                                 const torch::Tensor& k, int64_t levels);

/// MSE between eps and the model's prediction on q_sample(z0, t, eps).
torch::Tensor denoise_loss(const diffusion::EpsPredictor& model, const torch::Tensor& z0, const torch::Tensor& z_c,
                           const torch::Tensor& prompt_ids, const torch::Tensor& t, const torch::Tensor& eps,
                           const diffusion::NoiseSchedule& sched);

struct JointLoss {
    torch::Tensor general;   // denoise loss on z_fusion with the general prompt
    torch::Tensor property;  // denoise loss on the interpolated latent with prompt level k
    torch::Tensor total;     // general + lambda·property
};

/// Both terms share t; eps_general and eps_property are separate draws
/// (pass the same tensor twice for the shared-noise variant). The two
/// terms are evaluated in a single batched forward pass.
JointLoss joint_conditional_loss(const diffusion::EpsPredictor& model, const torch::Tensor& z_fusion,
                                 const torch::Tensor& z_ir, const torch::Tensor& z_vis, const torch::Tensor& z_c,
                                 const torch::Tensor& k, int64_t levels, const torch::Tensor& t,
                                 const torch::Tensor& eps_general, const torch::Tensor& eps_property, double lambda,
                                 const diffusion::NoiseSchedule& sched);

/// Source and fused latents for a stack of pairs (B×c×h×w each; z_c is B×2c×h×w).
struct PairLatents {
    torch::Tensor z_ir, z_vis, z_c, z_fusion;

    int64_t size() const { return z_ir.size(0); }
    PairLatents select(const torch::Tensor& index) const;
};

PairLatents compute_latents(prior::PriorFusionNet& prior, const LatentCodec& codec, const std::vector<ImagePair>& pairs);

struct PaldmTrainConfig {
    int64_t steps = 3000;
    int64_t batch_size = 8;
    double learning_rate = 5e-4;
    double lambda = 2.0;
    int64_t levels = 5;
    double validation_fraction = 0.1;
    int64_t eval_every = 100;
    int64_t validation_repeats = 4;  // fixed (k, t, eps) draws per validation pair
    std::uint64_t seed = 0;
    DenoiserOptions model;
};

struct PaldmTrainResult {
    Denoiser model{nullptr};
    double initial_validation_loss = 0.0;
    double best_validation_loss = 0.0;
    double final_validation_loss = 0.0;
    int64_t best_step = 0;
    std::vector<double> train_losses;
    std::vector<std::pair<int64_t, double>> validation_history;
    bool converged = false;  // best <= initial / 5
};

/// Minimises the joint conditional loss with k and t resampled per step;
/// returns the checkpoint with the lowest validation loss.
PaldmTrainResult train_paldm(prior::PriorFusionNet& prior, const LatentCodec& codec,
                             const std::vector<ImagePair>& corpus, const diffusion::NoiseSchedule& sched,
                             const PaldmTrainConfig& config);

/// Joint loss averaged over fixed, seeded draws; used for validation.
double validation_loss(const diffusion::EpsPredictor& model, const PairLatents& data, int64_t levels, double lambda,
                       int64_t repeats, std::uint64_t seed, const diffusion::NoiseSchedule& sched);

/// Seeded initial latent z_T for one pair, 1×c×h×w.
torch::Tensor initial_noise(int64_t channels, int64_t height, int64_t width, std::uint64_t seed);

/// Samples one latent per prompt from a shared z_T, so candidates differ
/// only through the prompt. z_c is 2c×h×w (single pair).
std::vector<torch::Tensor> sample_candidates(Denoiser model, const torch::Tensor& z_c,
                                             const std::vector<PropertyPrompt>& prompts,
                                             const diffusion::NoiseSchedule& sched, int64_t steps, std::uint64_t seed);

/// Decoded candidates, one per prompt, for a source pair.
std::vector<Image> generate_candidates(Denoiser model, const LatentCodec& codec, const ImagePair& pair,
                                       const std::vector<PropertyPrompt>& prompts,
                                       const diffusion::NoiseSchedule& sched, int64_t steps, std::uint64_t seed);

}  // namespace fusionpref::paldm
