// Copyright (C) 2026 The fusionpref Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <vector>

#include "fusionpref/codec.hpp"
#include "fusionpref/corpus.hpp"

namespace fusionpref::prior {

/// Per-channel Sobel magnitude sqrt(Gx² + Gy²), kernels scaled by 1/8 so a
/// unit ramp yields unit response, replicate padding. Input C×H×W or
/// B×C×H×W. The gradient of the magnitude is taken as 0 where it vanishes.
torch::Tensor sobel_gradient(const torch::Tensor& images);

/// Raw (Gx, Gy) responses, same conventions as sobel_gradient.
std::pair<torch::Tensor, torch::Tensor> sobel_components(const torch::Tensor& images);

/// Mean over pixels of σ1·|max(ir, vis) − fused| + σ2·|max(∇ir, ∇vis) − ∇fused|.
torch::Tensor fusion_loss(const torch::Tensor& ir, const torch::Tensor& vis, const torch::Tensor& fused,
                          double sigma1 = 4.0, double sigma2 = 10.0);

struct PriorFusionOptions {
    int64_t latent_channels = 16;  // channels of one source latent
    int64_t width = 32;
    int64_t blocks = 4;
};

/// Residual CNN z_c (2k channels) -> z_fusion (k channels):
///   mean(z_ir, z_vis) + contrast(|z_ir − z_vis|) + head(body(stem(z_ir, z_vis, |z_ir − z_vis|)))
/// `contrast` is a 1×1 convolution. Both it and the head are zero-initialised,
/// so the untrained net returns the mean of the two halves.
struct PriorFusionNetImpl : torch::nn::Module {
    explicit PriorFusionNetImpl(const PriorFusionOptions& opts = {});
    torch::Tensor forward(const torch::Tensor& z_c);

    PriorFusionOptions options;
    torch::nn::Conv2d stem{nullptr};
    torch::nn::ModuleList body{nullptr};
    torch::nn::Conv2d head{nullptr};
    torch::nn::Conv2d contrast{nullptr};
};
TORCH_MODULE(PriorFusionNet);

torch::Tensor fuse_prior(PriorFusionNet& model, const torch::Tensor& z_c);

struct PriorTrainConfig {
    int64_t steps = 3000;
    int64_t batch_size = 16;
    double learning_rate = 1e-3;
    double sigma1 = 4.0;
    double sigma2 = 10.0;
    double validation_fraction = 0.1;
    int64_t eval_every = 50;
    std::uint64_t seed = 0;
    PriorFusionOptions model;
};

struct PriorTrainResult {
    PriorFusionNet model{nullptr};
    double initial_validation_loss = 0.0;
    double best_validation_loss = 0.0;
    std::vector<double> train_losses;  // one per step
    bool converged = false;            // best <= initial / 10
};

/// encode pair -> fuse -> decode -> fusion loss in pixel space -> Adam step.
/// Returns the parameters with the lowest validation loss.
PriorTrainResult train_prior(const std::vector<ImagePair>& corpus, const LatentCodec& codec,
                             const PriorTrainConfig& config);

/// Mean fusion loss of the model over the given pairs.
double evaluate_fusion_loss(PriorFusionNet& model, const LatentCodec& codec, const torch::Tensor& ir,
                            const torch::Tensor& vis, double sigma1, double sigma2);

}  // namespace fusionpref::prior
