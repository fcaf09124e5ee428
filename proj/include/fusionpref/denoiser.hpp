// Copyright (C) 2026 The fusionpref Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <vector>

#include "fusionpref/diffusion.hpp"

namespace fusionpref::paldm {

/// Sinusoidal embedding of integer timesteps, shape [B, dim].
torch::Tensor timestep_embedding(const torch::Tensor& t, int64_t dim, const torch::TensorOptions& opts);

struct ResBlockImpl : torch::nn::Module {
    ResBlockImpl(int64_t in_ch, int64_t out_ch, int64_t time_dim, int64_t groups);
    torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& temb);

    torch::nn::GroupNorm norm1{nullptr}, norm2{nullptr};
    torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
    torch::nn::Linear time_proj{nullptr};
    torch::nn::Conv2d skip{nullptr};
};
TORCH_MODULE(ResBlock);

/// Cross-attention from spatial features to a token sequence:
/// x + W_out · Softmax(QKᵀ/√d)V with Q from (normalised) features and K, V
/// from the context. The output projection starts at zero, so the block is
/// the identity at construction.
struct CrossAttentionImpl : torch::nn::Module {
    CrossAttentionImpl(int64_t query_dim, int64_t context_dim, int64_t inner_dim, int64_t groups);

    /// x: B×C×H×W, context: B×L×context_dim. When `weights` is non-null it
    /// receives the B×(HW)×L attention matrix.
    torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& context, torch::Tensor* weights = nullptr);

    int64_t inner_dim;
    torch::nn::GroupNorm norm{nullptr};
    torch::nn::Linear to_q{nullptr}, to_k{nullptr}, to_v{nullptr}, to_out{nullptr};
};
TORCH_MODULE(CrossAttention);

struct DenoiserOptions {
    int64_t latent_channels = 16;                 // channels of z_t and of the output
    int64_t cond_channels = 32;                   // channels of z_c
    int64_t base_width = 32;
    std::vector<int64_t> channel_mults{1, 2};
    int64_t time_dim = 128;
    int64_t prompt_dim = 64;
    int64_t num_prompts = 6;                      // N levels + general token
    int64_t attention_dim = 64;
    int64_t groups = 8;
};

/// Small conditional U-Net ε(z_t, z_c, prompt, t). Input is the channel
/// concatenation of z_t and z_c; prompts enter only through the bottleneck
/// cross-attention block.
struct DenoiserImpl : torch::nn::Module {
    explicit DenoiserImpl(const DenoiserOptions& opts = {});

    torch::Tensor forward(const torch::Tensor& z_t, const torch::Tensor& t, const torch::Tensor& z_c,
                          const torch::Tensor& prompt_ids);

    /// Prompt embedding rows for the given ids, shaped B×1×prompt_dim.
    torch::Tensor prompt_context(const torch::Tensor& prompt_ids);

    DenoiserOptions options;
    torch::nn::Embedding prompts{nullptr};
    torch::nn::Linear time_fc1{nullptr}, time_fc2{nullptr};
    torch::nn::Conv2d conv_in{nullptr};
    torch::nn::ModuleList down_blocks{nullptr};
    torch::nn::ModuleList downsamplers{nullptr};
    ResBlock mid1{nullptr}, mid2{nullptr};
    CrossAttention attention{nullptr};
    torch::nn::ModuleList up_blocks{nullptr};
    torch::nn::ModuleList upsamplers{nullptr};
    torch::nn::GroupNorm norm_out{nullptr};
    torch::nn::Conv2d conv_out{nullptr};
};
TORCH_MODULE(Denoiser);

/// Adapts a Denoiser to the sampler's ε-predictor interface.
diffusion::EpsPredictor as_predictor(Denoiser model);

/// New denoiser with the same weights. `extra_prompts` appends rows to the
/// prompt table, each initialised from row `seed_prompt`.
Denoiser duplicate(const Denoiser& model, int64_t extra_prompts = 0, int64_t seed_prompt = 0);

}  // namespace fusionpref::paldm
