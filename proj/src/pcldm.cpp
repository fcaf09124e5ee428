// Copyright (C) 2026 The fusionpref Authors
// SPDX-License-Identifier: Apache-2.0

#include "fusionpref/pcldm.hpp"

#include "fusionpref/log.hpp"

#include "fusionpref/error.hpp"
#include "fusionpref/module_state.hpp"
#include "fusionpref/paldm.hpp"
#include "fusionpref/tensor_bridge.hpp"

namespace fusionpref::pcldm {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

LatentMask downsample_mask(const Image& mask, int factor) {
    require(mask.channels == 1, ErrorCode::InvalidArgument, "mask must be single-channel");
    require(is_binary(mask), ErrorCode::NonBinaryMask, "mask must contain only 0 and 1");
    require(factor >= 1 && mask.width % factor == 0 && mask.height % factor == 0, ErrorCode::DimensionNotDivisible,
            "mask dims not divisible by factor " + std::to_string(factor));
    const int h = mask.height / factor, w = mask.width / factor;
    auto values = torch::empty({h, w}, torch::kFloat32);
    auto acc = values.accessor<float, 2>();
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) acc[i][j] = mask.at(i * factor, j * factor);
    return {values};
}

CoupledModelImpl::CoupledModelImpl(const paldm::Denoiser& ref) {
    const int64_t levels = ref->options.num_prompts - 1;
    general_prompt = paldm::PropertyPrompt::general(levels).token_id();
    preference_prompt = ref->options.num_prompts;
    reference = register_module("reference", paldm::duplicate(ref));
    trainable = register_module("trainable", paldm::duplicate(ref, 1, general_prompt));
    const int64_t c = ref->options.latent_channels;
    zero_proj = register_module("zero_proj", nn::Conv2d(nn::Conv2dOptions(c, c, 1)));
    zero_proj->to(ref->parameters().front().scalar_type());
    torch::NoGradGuard no_grad;
    zero_proj->weight.zero_();
    zero_proj->bias.zero_();
    set_requires_grad(*reference, false);
    reference->eval();
}

CoupledModelImpl::Outputs CoupledModelImpl::forward_both(const torch::Tensor& z_t, const torch::Tensor& t,
                                                         const torch::Tensor& z_c) {
    const int64_t b = z_t.size(0);
    torch::Tensor ref_out;
    {
        torch::NoGradGuard no_grad;
        ref_out = reference->forward(z_t, t, z_c, torch::full({b}, general_prompt, torch::kLong));
    }
    auto branch = trainable->forward(z_t, t, z_c, torch::full({b}, preference_prompt, torch::kLong));
    return {ref_out, ref_out + zero_proj->forward(branch)};
}

torch::Tensor CoupledModelImpl::forward(const torch::Tensor& z_t, const torch::Tensor& t, const torch::Tensor& z_c) {
    return forward_both(z_t, t, z_c).coupled;
}

std::vector<torch::Tensor> CoupledModelImpl::trainable_parameters() {
    auto params = trainable->parameters();
    for (auto& p : zero_proj->parameters()) params.push_back(p);
    return params;
}

diffusion::EpsPredictor CoupledModelImpl::predictor() {
    return [this](const torch::Tensor& z_t, const torch::Tensor& t, const diffusion::Conditioning& cond) {
        return forward(z_t, t, cond.z_c);
    };
}

namespace {

torch::Tensor per_sample_sum(const torch::Tensor& x) {
    return x.dim() <= 1 ? x : x.flatten(1).sum(1);
}

void check_latents(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
    require(a.sizes() == b.sizes(), ErrorCode::ShapeMismatch, std::string(what) + ": latent shapes differ");
}

torch::Tensor broadcast_mask(const torch::Tensor& mask, const torch::Tensor& like) {
    auto m = mask.to(like.dtype());
    if (m.dim() == 2) m = m.view({1, 1, m.size(0), m.size(1)});
    require(m.dim() == like.dim() && m.size(-1) == like.size(-1) && m.size(-2) == like.size(-2), ErrorCode::ShapeMismatch,
            "mask spatial dims differ from latent dims");
    return m;
}

}  // namespace

torch::Tensor p_terms(const torch::Tensor& eps_gt, const torch::Tensor& eps_theta, const torch::Tensor& eps_ref,
                      const torch::Tensor& mask) {
    check_latents(eps_gt, eps_theta, "p_terms");
    check_latents(eps_gt, eps_ref, "p_terms");
    auto m = broadcast_mask(mask, eps_gt);
    return per_sample_sum(((eps_gt - eps_theta) * m).pow(2)) - per_sample_sum(((eps_gt - eps_ref) * m).pow(2));
}

torch::Tensor o_terms(const torch::Tensor& eps_theta, const torch::Tensor& eps_ref,
                      const torch::Tensor& mask_complement) {
    check_latents(eps_theta, eps_ref, "o_terms");
    auto m = broadcast_mask(mask_complement, eps_theta);
    return per_sample_sum(((eps_theta - eps_ref) * m).pow(2));
}

PreferenceBatch PreferenceBatch::select(const torch::Tensor& index) const {
    return {z_c.index_select(0, index), z0_w.index_select(0, index), z0_l.index_select(0, index),
            mask.index_select(0, index)};
}

PreferenceBatch PreferenceBatch::to(torch::Dtype dtype) const {
    return {z_c.to(dtype), z0_w.to(dtype), z0_l.to(dtype), mask.to(dtype)};
}

namespace {

struct PairedPredictions {
    torch::Tensor ref_w, ref_l, theta_w, theta_l, eps_w, eps_l;
};

PairedPredictions predict_pair(CoupledModel& model, const PreferenceBatch& batch, const torch::Tensor& t,
                               const torch::Tensor& eps_w, const torch::Tensor& eps_l,
                               const diffusion::NoiseSchedule& sched) {
    check_latents(batch.z0_w, eps_w, "preference loss");
    check_latents(batch.z0_l, eps_l, "preference loss");
    check_latents(batch.z0_w, batch.z0_l, "preference loss");
    const int64_t b = batch.size();
    require(t.numel() == b, ErrorCode::ShapeMismatch, "one timestep per record expected");
    auto tt = torch::cat({t.flatten(), t.flatten()});
    auto z_t = diffusion::q_sample(torch::cat({batch.z0_w, batch.z0_l}), tt, torch::cat({eps_w, eps_l}), sched);
    auto out = model->forward_both(z_t, tt, torch::cat({batch.z_c, batch.z_c}));
    return {out.reference.narrow(0, 0, b), out.reference.narrow(0, b, b), out.coupled.narrow(0, 0, b),
            out.coupled.narrow(0, b, b), eps_w, eps_l};
}

}  // namespace

IdpoTerms idpo_loss(CoupledModel& model, const PreferenceBatch& batch, const torch::Tensor& t,
                    const torch::Tensor& eps_w, const torch::Tensor& eps_l, double beta, double mu,
                    const diffusion::NoiseSchedule& sched) {
    auto pred = predict_pair(model, batch, t, eps_w, eps_l, sched);
    auto mask_c = 1.0 - batch.mask;
    IdpoTerms out;
    out.p_w = p_terms(pred.eps_w, pred.theta_w, pred.ref_w, batch.mask);
    out.p_l = p_terms(pred.eps_l, pred.theta_l, pred.ref_l, batch.mask);
    out.o_w = o_terms(pred.theta_w, pred.ref_w, mask_c);
    out.o_l = o_terms(pred.theta_l, pred.ref_l, mask_c);
    out.preference_argument = beta * (out.p_w - out.p_l);
    // −log σ(−x) = softplus(x)
    out.preference = F::softplus(out.preference_argument).mean();
    out.consistency = (mu * (out.o_w + out.o_l)).mean();
    out.total = out.preference + out.consistency;
    return out;
}

IdpoTerms dpo_loss_baseline(CoupledModel& model, const PreferenceBatch& batch, const torch::Tensor& t,
                            const torch::Tensor& eps_w, const torch::Tensor& eps_l, double beta,
                            const diffusion::NoiseSchedule& sched) {
    PreferenceBatch whole = batch;
    whole.mask = torch::ones_like(batch.mask);
    return idpo_loss(model, whole, t, eps_w, eps_l, beta, 0.0, sched);
}

torch::Tensor contrastive_hinge(const torch::Tensor& err_w, const torch::Tensor& err_l, double margin) {
    return torch::relu(margin + err_w - err_l);
}

torch::Tensor contrastive_loss_baseline(CoupledModel& model, const PreferenceBatch& batch, const torch::Tensor& t,
                                        const torch::Tensor& eps_w, const torch::Tensor& eps_l, double margin,
                                        const diffusion::NoiseSchedule& sched) {
    auto pred = predict_pair(model, batch, t, eps_w, eps_l, sched);
    auto m = broadcast_mask(batch.mask, pred.eps_w);
    auto err_w = per_sample_sum(((pred.eps_w - pred.theta_w) * m).pow(2));
    auto err_l = per_sample_sum(((pred.eps_l - pred.theta_l) * m).pow(2));
    return contrastive_hinge(err_w, err_l, margin).mean();
}

std::string to_string(LossKind kind) {
    switch (kind) {
        case LossKind::Idpo: return "idpo";
        case LossKind::Dpo: return "dpo";
        case LossKind::Contrast: return "contrast";
    }
    return "idpo";
}

LossKind loss_kind_from_string(const std::string& name) {
    if (name == "idpo") return LossKind::Idpo;
    if (name == "dpo") return LossKind::Dpo;
    if (name == "contrast") return LossKind::Contrast;
    fail(ErrorCode::InvalidArgument, "unknown loss '" + name + "' (expected idpo, dpo or contrast)");
}

FinetuneResult finetune(const paldm::Denoiser& reference, const PreferenceBatch& dataset,
                        const diffusion::NoiseSchedule& sched, const FinetuneConfig& config) {
    require(dataset.z_c.defined() && dataset.size() > 0, ErrorCode::EmptyDataset, "finetune: empty preference dataset");
    torch::manual_seed(config.seed);
    return finetune(CoupledModel(reference), dataset, sched, config);
}

FinetuneResult finetune(CoupledModel model, const PreferenceBatch& dataset, const diffusion::NoiseSchedule& sched,
                        const FinetuneConfig& config) {
    require(dataset.z_c.defined() && dataset.size() > 0, ErrorCode::EmptyDataset, "finetune: empty preference dataset");
    require(config.batch_size > 0 && config.epochs >= 0, ErrorCode::InvalidRange, "finetune: bad batch/epoch config");
    model->reference->eval();
    model->trainable->train();
    torch::optim::Adam opt(model->trainable_parameters(), torch::optim::AdamOptions(config.learning_rate));
    auto gen = make_generator(config.seed + 17);
    const auto dtype = model->zero_proj->weight.scalar_type();
    auto data = dataset.to(dtype);
    const int64_t n = data.size();

    FinetuneResult result;
    double initial_loss = 0.0;
    int64_t above = 0;
    bool done = false;
    for (int64_t epoch = 0; epoch < config.epochs && !done; ++epoch) {
        auto order = torch::randperm(n, gen, torch::kLong);
        for (int64_t start = 0; start < n; start += config.batch_size) {
            if (config.max_steps >= 0 && result.steps >= config.max_steps) {
                done = true;
                break;
            }
            const int64_t len = std::min(config.batch_size, n - start);
            auto batch = data.select(order.narrow(0, start, len));
            auto t = torch::randint(sched.steps(), {len}, gen, torch::kLong);
            auto eps_w = torch::randn(batch.z0_w.sizes(), gen, batch.z0_w.options());
            auto eps_l = torch::randn(batch.z0_l.sizes(), gen, batch.z0_l.options());

            torch::Tensor loss;
            double pref = 0.0;
            switch (config.loss) {
                case LossKind::Idpo: {
                    auto terms = idpo_loss(model, batch, t, eps_w, eps_l, config.beta, config.mu, sched);
                    loss = terms.total;
                    pref = terms.preference.item<double>();
                    break;
                }
                case LossKind::Dpo: {
                    auto terms = dpo_loss_baseline(model, batch, t, eps_w, eps_l, config.beta, sched);
                    loss = terms.total;
                    pref = terms.preference.item<double>();
                    break;
                }
                case LossKind::Contrast:
                    loss = contrastive_loss_baseline(model, batch, t, eps_w, eps_l, config.margin, sched);
                    pref = loss.item<double>();
                    break;
            }
            const double value = loss.item<double>();
            if (result.steps == 0) {
                result.step0_preference = pref;
                initial_loss = value;
            }
            opt.zero_grad();
            loss.backward();
            opt.step();
            result.losses.push_back(value);
            result.preference_terms.push_back(pref);
            ++result.steps;

            above = (initial_loss > 0.0 && value > config.divergence_factor * initial_loss) ? above + 1 : 0;
            if (above >= config.divergence_patience) {
                fail(ErrorCode::Diverged, "fine-tuning diverged: loss " + std::to_string(value) + " stayed above " +
                                              std::to_string(config.divergence_factor) + "x the initial " +
                                              std::to_string(initial_loss) + " for " +
                                              std::to_string(config.divergence_patience) + " steps");
            }
        }
        log::debug("finetune epoch ", epoch, " loss ", result.losses.empty() ? 0.0 : result.losses.back());
    }
    model->eval();
    result.model = model;
    return result;
}

torch::Tensor fuse_latent(CoupledModel& model, const torch::Tensor& z_c, const diffusion::NoiseSchedule& sched,
                          int64_t steps, std::uint64_t seed) {
    require(z_c.dim() == 3, ErrorCode::ShapeMismatch, "fuse_latent expects a single 2c×h×w z_c");
    torch::NoGradGuard no_grad;
    model->eval();
    const auto dtype = model->zero_proj->weight.scalar_type();
    auto z_T = paldm::initial_noise(model->reference->options.latent_channels, z_c.size(1), z_c.size(2), seed).to(dtype);
    diffusion::Conditioning cond{z_c.to(dtype).unsqueeze(0), torch::Tensor()};
    return diffusion::ddim_sample(model->predictor(), z_T, cond, sched, steps).squeeze(0);
}

Image fuse_with_preference(CoupledModel& model, const LatentCodec& codec, const ImagePair& pair,
                           const diffusion::NoiseSchedule& sched, int64_t steps, std::uint64_t seed) {
    auto z_c = concat_sources(codec.encode(pair.ir), codec.encode(pair.vis));
    return codec.decode_image(fuse_latent(model, z_c, sched, steps, seed).to(torch::kFloat32));
}

}  // namespace fusionpref::pcldm
