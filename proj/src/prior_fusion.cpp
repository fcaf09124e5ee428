// Copyright (C) 2026 The fusionpref Authors
// SPDX-License-Identifier: Apache-2.0

#include "fusionpref/prior_fusion.hpp"

#include <cmath>

#include "fusionpref/log.hpp"
#include "fusionpref/error.hpp"
#include "fusionpref/module_state.hpp"
#include "fusionpref/tensor_bridge.hpp"

namespace fusionpref::prior {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

std::pair<torch::Tensor, torch::Tensor> sobel_components(const torch::Tensor& images) {
    const bool batched = images.dim() == 4;
    require(batched || images.dim() == 3, ErrorCode::ShapeMismatch, "sobel expects C×H×W or B×C×H×W");
    auto x = batched ? images : images.unsqueeze(0);
    const int64_t c = x.size(1);
    auto opts = x.options().requires_grad(false);
    auto kx = torch::tensor({-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0}, opts).view({1, 1, 3, 3}) / 8.0;
    auto ky = kx.transpose(2, 3).contiguous();
    auto padded = F::pad(x, F::PadFuncOptions({1, 1, 1, 1}).mode(torch::kReplicate));
    auto gx = F::conv2d(padded, kx.expand({c, 1, 3, 3}), F::Conv2dFuncOptions().groups(c));
    auto gy = F::conv2d(padded, ky.expand({c, 1, 3, 3}), F::Conv2dFuncOptions().groups(c));
    if (!batched) return {gx.squeeze(0), gy.squeeze(0)};
    return {gx, gy};
}

torch::Tensor sobel_gradient(const torch::Tensor& images) {
    auto [gx, gy] = sobel_components(images);
    auto sq = gx * gx + gy * gy;
    // sqrt'(0) is infinite; feed the masked-out lanes a harmless 1.
    auto positive = sq > 0;
    auto safe = torch::where(positive, sq, torch::ones_like(sq)).sqrt();
    return torch::where(positive, safe, torch::zeros_like(sq));
}

torch::Tensor fusion_loss(const torch::Tensor& ir, const torch::Tensor& vis, const torch::Tensor& fused,
                          double sigma1, double sigma2) {
    require(ir.sizes() == vis.sizes() && ir.sizes() == fused.sizes(), ErrorCode::ShapeMismatch,
            "fusion_loss: ir, vis and fused must share a shape");
    require(sigma1 >= 0.0 && sigma2 >= 0.0, ErrorCode::InvalidRange, "fusion_loss weights must be >= 0");
    auto intensity = (torch::maximum(ir, vis) - fused).abs();
    auto grad_target = torch::maximum(sobel_gradient(ir), sobel_gradient(vis));
    auto gradient = (grad_target - sobel_gradient(fused)).abs();
    return (sigma1 * intensity + sigma2 * gradient).mean();
}

PriorFusionNetImpl::PriorFusionNetImpl(const PriorFusionOptions& opts) : options(opts) {
    // stem sees z_ir, z_vis and |z_ir − z_vis|
    stem = register_module("stem", nn::Conv2d(nn::Conv2dOptions(3 * opts.latent_channels, opts.width, 3).padding(1)));
    body = register_module("body", nn::ModuleList());
    for (int64_t i = 0; i < opts.blocks; ++i) {
        nn::Sequential block(nn::Conv2d(nn::Conv2dOptions(opts.width, opts.width, 3).padding(1)), nn::SiLU(),
                             nn::Conv2d(nn::Conv2dOptions(opts.width, opts.width, 3).padding(1)));
        body->push_back(block);
    }
    head = register_module("head", nn::Conv2d(nn::Conv2dOptions(opts.width, opts.latent_channels, 3).padding(1)));
    contrast = register_module("contrast", nn::Conv2d(nn::Conv2dOptions(opts.latent_channels, opts.latent_channels, 1)));
    torch::NoGradGuard no_grad;
    head->weight.zero_();
    head->bias.zero_();
    contrast->weight.zero_();
    contrast->bias.zero_();
}

torch::Tensor PriorFusionNetImpl::forward(const torch::Tensor& z_c) {
    require(z_c.dim() == 4 && z_c.size(1) == 2 * options.latent_channels, ErrorCode::ShapeMismatch,
            "prior fusion expects B×" + std::to_string(2 * options.latent_channels) + "×h×w input");
    auto halves = z_c.chunk(2, 1);
    auto base = 0.5 * (halves[0] + halves[1]);
    auto gap = (halves[0] - halves[1]).abs();
    auto h = torch::silu(stem->forward(torch::cat({z_c, gap}, 1)));
    for (const auto& block : *body) h = h + block->as<nn::Sequential>()->forward(h);
    return base + contrast->forward(gap) + head->forward(torch::silu(h));
}

torch::Tensor fuse_prior(PriorFusionNet& model, const torch::Tensor& z_c) {
    const bool batched = z_c.dim() == 4;
    require(batched || z_c.dim() == 3, ErrorCode::ShapeMismatch, "fuse_prior expects 3-D or 4-D latents");
    require(z_c.size(batched ? 1 : 0) == 2 * model->options.latent_channels, ErrorCode::ShapeMismatch,
            "fuse_prior: z_c channel count must be twice the model output channels");
    auto out = model->forward(batched ? z_c : z_c.unsqueeze(0));
    return batched ? out : out.squeeze(0);
}

double evaluate_fusion_loss(PriorFusionNet& model, const LatentCodec& codec, const torch::Tensor& ir,
                            const torch::Tensor& vis, double sigma1, double sigma2) {
    torch::NoGradGuard no_grad;
    double total = 0.0;
    const int64_t n = ir.size(0);
    for (int64_t start = 0; start < n; start += 32) {
        const int64_t len = std::min<int64_t>(32, n - start);
        auto a = ir.narrow(0, start, len);
        auto b = vis.narrow(0, start, len);
        auto z_c = concat_sources(codec.encode(a), codec.encode(b));
        auto fused = codec.decode(model->forward(z_c));
        total += fusion_loss(a, b, fused, sigma1, sigma2).item<double>() * static_cast<double>(len);
    }
    return total / static_cast<double>(n);
}

PriorTrainResult train_prior(const std::vector<ImagePair>& corpus, const LatentCodec& codec,
                             const PriorTrainConfig& config) {
    require(!corpus.empty(), ErrorCode::EmptyDataset, "train_prior: empty corpus");
    torch::manual_seed(config.seed);

    std::vector<Image> irs, viss;
    for (const auto& p : corpus) {
        irs.push_back(p.ir);
        viss.push_back(p.vis);
    }
    auto ir_all = stack_images(irs);
    auto vis_all = stack_images(viss);
    auto split = split_corpus(corpus.size(), config.validation_fraction, config.seed);
    auto as_index = [](const std::vector<size_t>& v) {
        std::vector<int64_t> idx(v.begin(), v.end());
        return torch::tensor(idx, torch::kLong);
    };
    auto train_idx = as_index(split.train);
    auto val_idx = as_index(split.validation);
    auto ir_train = ir_all.index_select(0, train_idx), vis_train = vis_all.index_select(0, train_idx);
    auto ir_val = ir_all.index_select(0, val_idx), vis_val = vis_all.index_select(0, val_idx);
    // latents are fixed: the codec is frozen
    torch::Tensor zc_train;
    {
        torch::NoGradGuard no_grad;
        zc_train = concat_sources(codec.encode(ir_train), codec.encode(vis_train));
    }

    PriorFusionOptions model_opts = config.model;
    model_opts.latent_channels = codec.kind().latent_channels();
    PriorFusionNet model(model_opts);
    torch::optim::Adam opt(model->parameters(), torch::optim::AdamOptions(config.learning_rate));
    auto gen = make_generator(config.seed ^ 0x9e3779b97f4a7c15ULL);

    PriorTrainResult result;
    result.initial_validation_loss =
        evaluate_fusion_loss(model, codec, ir_val, vis_val, config.sigma1, config.sigma2);
    result.best_validation_loss = result.initial_validation_loss;
    auto best_state = snapshot_state(*model);

    const int64_t n = ir_train.size(0);
    for (int64_t step = 0; step < config.steps; ++step) {
        const double lr = 0.5 * config.learning_rate *
                          (1.0 + std::cos(M_PI * static_cast<double>(step) / static_cast<double>(config.steps)));
        for (auto& group : opt.param_groups()) static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
        auto idx = torch::randint(n, {std::min(config.batch_size, n)}, gen, torch::kLong);
        auto fused = codec.decode(model->forward(zc_train.index_select(0, idx)));
        auto loss = fusion_loss(ir_train.index_select(0, idx), vis_train.index_select(0, idx), fused,
                                config.sigma1, config.sigma2);
        opt.zero_grad();
        loss.backward();
        opt.step();
        result.train_losses.push_back(loss.item<double>());

        if ((step + 1) % config.eval_every == 0 || step + 1 == config.steps) {
            const double val = evaluate_fusion_loss(model, codec, ir_val, vis_val, config.sigma1, config.sigma2);
            log::debug("prior step ", step + 1, " train ", result.train_losses.back(), " val ", val);
            if (val < result.best_validation_loss) {
                result.best_validation_loss = val;
                best_state = snapshot_state(*model);
            }
        }
    }
    restore_state(*model, best_state);
    model->eval();
    result.converged = result.best_validation_loss <= result.initial_validation_loss / 10.0;
    if (!result.converged) {
        log::warn("prior fusion training did not reach a 10x loss reduction (", result.initial_validation_loss,
                  " -> ", result.best_validation_loss, "); returning best checkpoint");
    }
    result.model = model;
    return result;
}

}  // namespace fusionpref::prior
