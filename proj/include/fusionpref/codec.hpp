// Copyright (C) 2026 The fusionpref Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fusionpref/image.hpp"

namespace fusionpref {

enum class CodecVariant { Patchify, TinyAutoencoder };

std::string to_string(CodecVariant v);
CodecVariant codec_variant_from_string(const std::string& name);

struct CodecKind {
    CodecVariant variant = CodecVariant::Patchify;
    int factor = 4;          // spatial downsample ratio, a power of two
    int image_channels = 1;  // 1 or 3

    /// Latent channel count: f²·C for both variants, so the two are
    /// interchangeable downstream.
    int latent_channels() const { return factor * factor * image_channels; }
    void validate() const;
};

/// Small convolutional autoencoder: log2(f) stride-2 blocks each way.
struct TinyAutoencoderImpl : torch::nn::Module {
    explicit TinyAutoencoderImpl(const CodecKind& kind, int64_t width = 32);

    torch::Tensor encode(const torch::Tensor& images);
    torch::Tensor decode(const torch::Tensor& latents);
    torch::Tensor forward(const torch::Tensor& images) { return decode(encode(images)); }

    torch::nn::Sequential encoder{nullptr};
    torch::nn::Sequential decoder{nullptr};
    int64_t width = 32;
};
TORCH_MODULE(TinyAutoencoder);

/// Image <-> latent mapping. Tensors are B×C×H×W (a leading batch dim is
/// added and removed for 3-D inputs). Encoding is deterministic.
class LatentCodec {
public:
    explicit LatentCodec(CodecKind kind = {});
    LatentCodec(CodecKind kind, TinyAutoencoder autoencoder);

    const CodecKind& kind() const { return kind_; }
    TinyAutoencoder autoencoder() const { return autoencoder_; }

    torch::Tensor encode(const torch::Tensor& images) const;
    /// Output is clamped to [0,1]. Differentiable with respect to the latent.
    torch::Tensor decode(const torch::Tensor& latents) const;

    torch::Tensor encode(const Image& image) const;
    Image decode_image(const torch::Tensor& latent) const;

private:
    CodecKind kind_;
    TinyAutoencoder autoencoder_{nullptr};
};

/// Channel-wise concatenation, infrared channels first.
torch::Tensor concat_sources(const torch::Tensor& z_ir, const torch::Tensor& z_vis);

struct AutoencoderTrainConfig {
    int64_t steps = 1500;
    int64_t batch_size = 16;
    double learning_rate = 2e-3;
    std::uint64_t seed = 0;
};

struct AutoencoderTrainResult {
    LatentCodec codec;
    std::vector<double> loss_history;
};

/// L1 reconstruction training of the tiny autoencoder on an N×C×H×W stack.
AutoencoderTrainResult train_autoencoder(const torch::Tensor& images, const CodecKind& kind,
                                         const AutoencoderTrainConfig& config);

/// Mean absolute reconstruction error of decode(encode(x)).
double reconstruction_mae(const LatentCodec& codec, const torch::Tensor& images);

}  // namespace fusionpref
