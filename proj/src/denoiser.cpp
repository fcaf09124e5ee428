// Copyright (C) 2026 The fusionpref Authors
// SPDX-License-Identifier: Apache-2.0

#include "fusionpref/denoiser.hpp"

#include <cmath>

#include "fusionpref/error.hpp"

namespace fusionpref::paldm {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

torch::Tensor timestep_embedding(const torch::Tensor& t, int64_t dim, const torch::TensorOptions& opts) {
    const int64_t half = dim / 2;
    auto freqs = torch::exp(-std::log(10000.0) * torch::arange(half, opts) / static_cast<double>(half));
    auto args = t.to(opts.dtype()).view({-1, 1}) * freqs.view({1, -1});
    return torch::cat({torch::sin(args), torch::cos(args)}, 1);
}

ResBlockImpl::ResBlockImpl(int64_t in_ch, int64_t out_ch, int64_t time_dim, int64_t groups) {
    norm1 = register_module("norm1", nn::GroupNorm(groups, in_ch));
    conv1 = register_module("conv1", nn::Conv2d(nn::Conv2dOptions(in_ch, out_ch, 3).padding(1)));
    time_proj = register_module("time_proj", nn::Linear(time_dim, out_ch));
    norm2 = register_module("norm2", nn::GroupNorm(groups, out_ch));
    conv2 = register_module("conv2", nn::Conv2d(nn::Conv2dOptions(out_ch, out_ch, 3).padding(1)));
    if (in_ch != out_ch) skip = register_module("skip", nn::Conv2d(nn::Conv2dOptions(in_ch, out_ch, 1)));
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& temb) {
    auto h = conv1->forward(torch::silu(norm1->forward(x)));
    h = h + time_proj->forward(torch::silu(temb)).unsqueeze(-1).unsqueeze(-1);
    h = conv2->forward(torch::silu(norm2->forward(h)));
    return (skip.is_empty() ? x : skip->forward(x)) + h;
}

CrossAttentionImpl::CrossAttentionImpl(int64_t query_dim, int64_t context_dim, int64_t inner, int64_t groups)
    : inner_dim(inner) {
    norm = register_module("norm", nn::GroupNorm(groups, query_dim));
    to_q = register_module("to_q", nn::Linear(nn::LinearOptions(query_dim, inner).bias(false)));
    to_k = register_module("to_k", nn::Linear(nn::LinearOptions(context_dim, inner).bias(false)));
    to_v = register_module("to_v", nn::Linear(nn::LinearOptions(context_dim, inner).bias(false)));
    to_out = register_module("to_out", nn::Linear(inner, query_dim));
    torch::NoGradGuard no_grad;
    to_out->weight.zero_();
    to_out->bias.zero_();
}

torch::Tensor CrossAttentionImpl::forward(const torch::Tensor& x, const torch::Tensor& context,
                                          torch::Tensor* weights) {
    require(x.dim() == 4 && context.dim() == 3 && x.size(0) == context.size(0), ErrorCode::ShapeMismatch,
            "cross-attention expects B×C×H×W features and B×L×D context");
    const auto b = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
    auto seq = norm->forward(x).flatten(2).transpose(1, 2);  // B×HW×C
    auto q = to_q->forward(seq);
    auto k = to_k->forward(context);
    auto v = to_v->forward(context);
    auto scores = torch::matmul(q, k.transpose(1, 2)) / std::sqrt(static_cast<double>(inner_dim));
    auto attn = torch::softmax(scores, -1);
    if (weights) *weights = attn;
    auto out = to_out->forward(torch::matmul(attn, v));  // B×HW×C
    return x + out.transpose(1, 2).reshape({b, c, h, w});
}

DenoiserImpl::DenoiserImpl(const DenoiserOptions& opts) : options(opts) {
    require(!opts.channel_mults.empty(), ErrorCode::InvalidArgument, "denoiser needs at least one resolution");
    const int64_t base = opts.base_width;
    prompts = register_module("prompts", nn::Embedding(opts.num_prompts, opts.prompt_dim));
    time_fc1 = register_module("time_fc1", nn::Linear(base, opts.time_dim));
    time_fc2 = register_module("time_fc2", nn::Linear(opts.time_dim, opts.time_dim));
    conv_in = register_module("conv_in",
                              nn::Conv2d(nn::Conv2dOptions(opts.latent_channels + opts.cond_channels, base, 3).padding(1)));

    down_blocks = register_module("down_blocks", nn::ModuleList());
    downsamplers = register_module("downsamplers", nn::ModuleList());
    std::vector<int64_t> skip_channels;
    int64_t ch = base;
    const auto levels = static_cast<int64_t>(opts.channel_mults.size());
    for (int64_t i = 0; i < levels; ++i) {
        const int64_t out = base * opts.channel_mults[i];
        down_blocks->push_back(ResBlock(ch, out, opts.time_dim, opts.groups));
        ch = out;
        skip_channels.push_back(ch);
        if (i + 1 < levels) downsamplers->push_back(nn::Conv2d(nn::Conv2dOptions(ch, ch, 3).stride(2).padding(1)));
    }

    mid1 = register_module("mid1", ResBlock(ch, ch, opts.time_dim, opts.groups));
    attention = register_module("attention", CrossAttention(ch, opts.prompt_dim, opts.attention_dim, opts.groups));
    mid2 = register_module("mid2", ResBlock(ch, ch, opts.time_dim, opts.groups));

    up_blocks = register_module("up_blocks", nn::ModuleList());
    upsamplers = register_module("upsamplers", nn::ModuleList());
    for (int64_t i = levels - 1; i >= 0; --i) {
        const int64_t out = base * opts.channel_mults[i];
        up_blocks->push_back(ResBlock(ch + skip_channels[i], out, opts.time_dim, opts.groups));
        ch = out;
        if (i > 0) upsamplers->push_back(nn::Conv2d(nn::Conv2dOptions(ch, ch, 3).padding(1)));
    }
    norm_out = register_module("norm_out", nn::GroupNorm(opts.groups, ch));
    conv_out = register_module("conv_out", nn::Conv2d(nn::Conv2dOptions(ch, opts.latent_channels, 3).padding(1)));
    torch::NoGradGuard no_grad;
    conv_out->weight.zero_();
    conv_out->bias.zero_();
}

torch::Tensor DenoiserImpl::prompt_context(const torch::Tensor& prompt_ids) {
    require(prompt_ids.defined(), ErrorCode::InvalidArgument, "denoiser needs prompt ids");
    auto ids = prompt_ids.to(torch::kLong).flatten();
    require(ids.numel() == 0 || (ids.min().item<int64_t>() >= 0 && ids.max().item<int64_t>() < options.num_prompts),
            ErrorCode::InvalidRange, "prompt id outside the embedding table");
    return prompts->forward(ids).unsqueeze(1);
}

torch::Tensor DenoiserImpl::forward(const torch::Tensor& z_t, const torch::Tensor& t, const torch::Tensor& z_c,
                                    const torch::Tensor& prompt_ids) {
    require(z_t.dim() == 4 && z_t.size(1) == options.latent_channels, ErrorCode::ShapeMismatch,
            "denoiser: z_t must be B×" + std::to_string(options.latent_channels) + "×h×w");
    require(z_c.dim() == 4 && z_c.size(1) == options.cond_channels && z_c.size(0) == z_t.size(0) &&
                z_c.size(2) == z_t.size(2) && z_c.size(3) == z_t.size(3),
            ErrorCode::ShapeMismatch, "denoiser: z_c inconsistent with z_t");
    require(t.numel() == z_t.size(0) && prompt_ids.numel() == z_t.size(0), ErrorCode::ShapeMismatch,
            "denoiser: need one timestep and one prompt per batch element");
    const int64_t down_factor = int64_t{1} << (options.channel_mults.size() - 1);
    require(z_t.size(2) % down_factor == 0 && z_t.size(3) % down_factor == 0, ErrorCode::DimensionNotDivisible,
            "denoiser: latent size not divisible by the U-Net depth");

    auto temb = timestep_embedding(t, options.base_width, z_t.options());
    temb = time_fc2->forward(torch::silu(time_fc1->forward(temb)));
    auto context = prompt_context(prompt_ids).to(z_t.dtype());

    auto h = conv_in->forward(torch::cat({z_t, z_c}, 1));
    std::vector<torch::Tensor> skips;
    const auto levels = down_blocks->size();
    for (size_t i = 0; i < levels; ++i) {
        h = down_blocks[i]->as<ResBlock>()->forward(h, temb);
        skips.push_back(h);
        if (i + 1 < levels) h = downsamplers[i]->as<nn::Conv2d>()->forward(h);
    }
    h = mid1->forward(h, temb);
    h = attention->forward(h, context);
    h = mid2->forward(h, temb);
    for (size_t j = 0; j < levels; ++j) {
        const size_t level = levels - 1 - j;
        h = up_blocks[j]->as<ResBlock>()->forward(torch::cat({h, skips[level]}, 1), temb);
        if (level > 0) {
            h = F::interpolate(h, F::InterpolateFuncOptions()
                                      .size(std::vector<int64_t>{skips[level - 1].size(2), skips[level - 1].size(3)})
                                      .mode(torch::kNearest));
            h = upsamplers[j]->as<nn::Conv2d>()->forward(h);
        }
    }
    return conv_out->forward(torch::silu(norm_out->forward(h)));
}

diffusion::EpsPredictor as_predictor(Denoiser model) {
    return [model](const torch::Tensor& z_t, const torch::Tensor& t, const diffusion::Conditioning& cond) mutable {
        return model->forward(z_t, t, cond.z_c, cond.prompt_ids);
    };
}

Denoiser duplicate(const Denoiser& model, int64_t extra_prompts, int64_t seed_prompt) {
    require(extra_prompts >= 0, ErrorCode::InvalidArgument, "extra_prompts must be >= 0");
    auto opts = model->options;
    opts.num_prompts += extra_prompts;
    Denoiser copy(opts);
    copy->to(model->parameters().front().scalar_type());
    torch::NoGradGuard no_grad;
    auto src_params = model->named_parameters(true);
    for (auto& item : copy->named_parameters(true)) {
        const auto& src = src_params[item.key()];
        if (item.key() == "prompts.weight") {
            const int64_t rows = src.size(0);
            item.value().narrow(0, 0, rows).copy_(src);
            for (int64_t r = rows; r < item.value().size(0); ++r) item.value()[r].copy_(src[seed_prompt]);
        } else {
            item.value().copy_(src);
        }
    }
    auto src_buffers = model->named_buffers(true);
    for (auto& item : copy->named_buffers(true)) item.value().copy_(src_buffers[item.key()]);
    copy->train(model->is_training());
    return copy;
}

}  // namespace fusionpref::paldm
