// Copyright (C) 2026 The fusionpref Authors
// SPDX-License-Identifier: Apache-2.0

#include "fusionpref/codec.hpp"

#include <sstream>

#include "fusionpref/error.hpp"
#include "fusionpref/tensor_bridge.hpp"

namespace fusionpref {

namespace nn = torch::nn;

std::string to_string(CodecVariant v) {
    return v == CodecVariant::Patchify ? "patchify" : "tiny-autoencoder";
}

CodecVariant codec_variant_from_string(const std::string& name) {
    if (name == "patchify") return CodecVariant::Patchify;
    if (name == "tiny-autoencoder") return CodecVariant::TinyAutoencoder;
    fail(ErrorCode::InvalidArgument, "unknown codec variant '" + name + "'");
}

void CodecKind::validate() const {
    require(factor >= 2 && (factor & (factor - 1)) == 0, ErrorCode::InvalidArgument,
            "codec factor must be a power of two >= 2, got " + std::to_string(factor));
    require(image_channels == 1 || image_channels == 3, ErrorCode::InvalidArgument,
            "image channels must be 1 or 3");
}

namespace {

int log2_int(int v) {
    int n = 0;
    while (v > 1) {
        v >>= 1;
        ++n;
    }
    return n;
}

torch::Tensor add_batch(const torch::Tensor& t, bool& added) {
    added = t.dim() == 3;
    return added ? t.unsqueeze(0) : t;
}

}  // namespace

TinyAutoencoderImpl::TinyAutoencoderImpl(const CodecKind& kind, int64_t width_) : width(width_) {
    const int levels = log2_int(kind.factor);
    const int64_t c = kind.image_channels;
    const int64_t lat = kind.latent_channels();

    nn::Sequential enc;
    enc->push_back(nn::Conv2d(nn::Conv2dOptions(c, width, 3).padding(1)));
    enc->push_back(nn::SiLU());
    for (int i = 0; i < levels; ++i) {
        enc->push_back(nn::Conv2d(nn::Conv2dOptions(width, width, 4).stride(2).padding(1)));
        enc->push_back(nn::SiLU());
    }
    enc->push_back(nn::Conv2d(nn::Conv2dOptions(width, lat, 3).padding(1)));

    nn::Sequential dec;
    dec->push_back(nn::Conv2d(nn::Conv2dOptions(lat, width, 3).padding(1)));
    dec->push_back(nn::SiLU());
    for (int i = 0; i < levels; ++i) {
        dec->push_back(nn::ConvTranspose2d(nn::ConvTranspose2dOptions(width, width, 4).stride(2).padding(1)));
        dec->push_back(nn::SiLU());
    }
    dec->push_back(nn::Conv2d(nn::Conv2dOptions(width, c, 3).padding(1)));

    encoder = register_module("encoder", enc);
    decoder = register_module("decoder", dec);
}

torch::Tensor TinyAutoencoderImpl::encode(const torch::Tensor& images) {
    return encoder->forward(images);
}

torch::Tensor TinyAutoencoderImpl::decode(const torch::Tensor& latents) {
    return decoder->forward(latents);
}

LatentCodec::LatentCodec(CodecKind kind) : kind_(kind) {
    kind_.validate();
    if (kind_.variant == CodecVariant::TinyAutoencoder) autoencoder_ = TinyAutoencoder(kind_);
}

LatentCodec::LatentCodec(CodecKind kind, TinyAutoencoder autoencoder)
    : kind_(kind), autoencoder_(std::move(autoencoder)) {
    kind_.validate();
    require(kind_.variant != CodecVariant::TinyAutoencoder || !autoencoder_.is_empty(),
            ErrorCode::InvalidArgument, "tiny-autoencoder codec needs weights");
}

torch::Tensor LatentCodec::encode(const torch::Tensor& images) const {
    bool added = false;
    auto x = add_batch(images, added);
    require(x.dim() == 4, ErrorCode::ShapeMismatch, "encode expects C×H×W or B×C×H×W");
    require(x.size(1) == kind_.image_channels, ErrorCode::ShapeMismatch,
            "encode: image has " + std::to_string(x.size(1)) + " channels, codec expects " +
                std::to_string(kind_.image_channels));
    if (x.size(2) % kind_.factor != 0 || x.size(3) % kind_.factor != 0) {
        std::ostringstream msg;
        msg << "image " << x.size(3) << "x" << x.size(2) << " not divisible by codec factor " << kind_.factor;
        fail(ErrorCode::DimensionNotDivisible, msg.str());
    }
    torch::Tensor z = kind_.variant == CodecVariant::Patchify ? torch::pixel_unshuffle(x, kind_.factor)
                                                              : autoencoder_.ptr()->encode(x);
    return added ? z.squeeze(0) : z;
}

torch::Tensor LatentCodec::decode(const torch::Tensor& latents) const {
    bool added = false;
    auto z = add_batch(latents, added);
    require(z.dim() == 4 && z.size(1) == kind_.latent_channels(), ErrorCode::ShapeMismatch,
            "decode: latent shape inconsistent with codec (expected " +
                std::to_string(kind_.latent_channels()) + " channels)");
    torch::Tensor x = kind_.variant == CodecVariant::Patchify ? torch::pixel_shuffle(z, kind_.factor)
                                                              : autoencoder_.ptr()->decode(z);
    x = x.clamp(0.0, 1.0);
    return added ? x.squeeze(0) : x;
}

torch::Tensor LatentCodec::encode(const Image& image) const {
    torch::NoGradGuard no_grad;
    return encode(to_tensor(image));
}

Image LatentCodec::decode_image(const torch::Tensor& latent) const {
    torch::NoGradGuard no_grad;
    return to_image(decode(latent));
}

torch::Tensor concat_sources(const torch::Tensor& z_ir, const torch::Tensor& z_vis) {
    const auto d = z_ir.dim();
    require(d == z_vis.dim() && (d == 3 || d == 4), ErrorCode::ShapeMismatch, "concat_sources: rank mismatch");
    const bool same_spatial = z_ir.size(d - 1) == z_vis.size(d - 1) && z_ir.size(d - 2) == z_vis.size(d - 2) &&
                              (d == 3 || z_ir.size(0) == z_vis.size(0));
    require(same_spatial, ErrorCode::ShapeMismatch, "concat_sources: spatial dims differ");
    return torch::cat({z_ir, z_vis}, d - 3);
}

AutoencoderTrainResult train_autoencoder(const torch::Tensor& images, const CodecKind& kind,
                                         const AutoencoderTrainConfig& config) {
    require(images.dim() == 4 && images.size(0) > 0, ErrorCode::EmptyDataset, "no images to train on");
    torch::manual_seed(config.seed);
    TinyAutoencoder ae(kind);
    torch::optim::Adam opt(ae->parameters(), torch::optim::AdamOptions(config.learning_rate));
    auto gen = make_generator(config.seed);
    const int64_t n = images.size(0);

    AutoencoderTrainResult result{LatentCodec(CodecKind{CodecVariant::Patchify, kind.factor, kind.image_channels}), {}};
    for (int64_t step = 0; step < config.steps; ++step) {
        auto idx = torch::randint(n, {std::min(config.batch_size, n)}, gen, torch::kLong);
        auto x = images.index_select(0, idx);
        auto loss = (ae->forward(x) - x).abs().mean();
        opt.zero_grad();
        loss.backward();
        opt.step();
        result.loss_history.push_back(loss.item<double>());
    }
    ae->eval();
    for (auto& p : ae->parameters()) p.set_requires_grad(false);
    CodecKind trained = kind;
    trained.variant = CodecVariant::TinyAutoencoder;
    result.codec = LatentCodec(trained, ae);
    return result;
}

double reconstruction_mae(const LatentCodec& codec, const torch::Tensor& images) {
    torch::NoGradGuard no_grad;
    return (codec.decode(codec.encode(images)) - images).abs().mean().item<double>();
}

}  // namespace fusionpref
