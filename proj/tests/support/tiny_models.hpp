// Copyright (C) 2026 The fusionpref Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <torch/torch.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "fusionpref/denoiser.hpp"
#include "fusionpref/tensor_bridge.hpp"

namespace fusionpref::testing {

/// A denoiser small enough for float64 finite differences: 4 latent
/// channels, 8 conditioning channels, two resolutions.
inline paldm::DenoiserOptions tiny_denoiser_options(int64_t levels = 5) {
    paldm::DenoiserOptions o;
    o.latent_channels = 4;
    o.cond_channels = 8;
    o.base_width = 8;
    o.channel_mults = {1, 2};
    o.time_dim = 16;
    o.prompt_dim = 8;
    o.attention_dim = 8;
    o.groups = 4;
    o.num_prompts = levels + 1;
    return o;
}

/// Tiny denoiser with every weight randomised, including the zero-initialised
/// output layers, so the prompt path is live.
inline paldm::Denoiser tiny_denoiser(std::uint64_t seed, torch::Dtype dtype = torch::kFloat64, int64_t levels = 5) {
    torch::manual_seed(seed);
    paldm::Denoiser model(tiny_denoiser_options(levels));
    model->to(dtype);
    torch::NoGradGuard no_grad;
    auto gen = make_generator(seed + 1);
    for (auto& p : model->parameters()) p.copy_(0.3 * torch::randn(p.sizes(), gen, p.options()));
    return model;
}

inline torch::Tensor randn_like_seeded(const torch::Tensor& like, std::uint64_t seed) {
    auto gen = make_generator(seed);
    return torch::randn(like.sizes(), gen, like.options());
}

inline torch::Tensor randn_seeded(std::vector<int64_t> shape, std::uint64_t seed, torch::Dtype dtype = torch::kFloat64) {
    auto gen = make_generator(seed);
    return torch::randn(shape, gen, torch::TensorOptions().dtype(dtype));
}

struct GradCheck {
    int64_t sampled = 0;
    int64_t within = 0;
    double worst = 0.0;
    double fraction() const { return sampled == 0 ? 0.0 : static_cast<double>(within) / static_cast<double>(sampled); }
};

/// Central finite differences of `loss` at `samples` random coordinates
/// spread over `params`, compared against autograd. A coordinate passes
/// when its relative error is within `tol`; pairs where both derivatives
/// are below `abs_floor` count as agreeing.
inline GradCheck finite_difference_check(const std::function<torch::Tensor()>& loss, std::vector<torch::Tensor> params,
                                         int64_t samples, std::uint64_t seed, double tol = 1e-3, double h = 1e-6,
                                         double abs_floor = 1e-9) {
    for (auto& p : params)
        if (p.grad().defined()) p.mutable_grad().zero_();
    loss().backward();
    std::vector<torch::Tensor> grads;
    int64_t total = 0;
    for (auto& p : params) {
        grads.push_back(p.grad().defined() ? p.grad().clone() : torch::zeros_like(p));
        total += p.numel();
    }

    GradCheck out;
    auto gen = make_generator(seed);
    torch::NoGradGuard no_grad;
    for (int64_t s = 0; s < samples; ++s) {
        int64_t flat = torch::randint(total, {1}, gen, torch::kLong).item<int64_t>();
        size_t which = 0;
        while (flat >= params[which].numel()) flat -= params[which++].numel();
        auto view = params[which].view({-1});
        const double original = view[flat].item<double>();
        view[flat] = original + h;
        const double up = loss().item<double>();
        view[flat] = original - h;
        const double down = loss().item<double>();
        view[flat] = original;
        const double numeric = (up - down) / (2.0 * h);
        const double analytic = grads[which].view({-1})[flat].item<double>();
        const double scale = std::max(std::abs(numeric), std::abs(analytic));
        const double rel = scale < abs_floor ? 0.0 : std::abs(numeric - analytic) / scale;
        out.worst = std::max(out.worst, rel);
        ++out.sampled;
        if (rel <= tol) ++out.within;
    }
    return out;
}

}  // namespace fusionpref::testing
