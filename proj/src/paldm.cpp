// Copyright (C) 2026 The fusionpref Authors
// SPDX-License-Identifier: Apache-2.0

#include "fusionpref/paldm.hpp"

#include "fusionpref/log.hpp"

#include "fusionpref/error.hpp"
#include "fusionpref/module_state.hpp"
#include "fusionpref/tensor_bridge.hpp"

namespace fusionpref::paldm {

PropertyPrompt PropertyPrompt::general(int64_t levels) {
    require(levels >= 2, ErrorCode::InvalidRange, "need at least two property levels");
    return {Kind::General, 0, levels};
}

PropertyPrompt PropertyPrompt::property(int64_t level, int64_t levels) {
    require(levels >= 2, ErrorCode::InvalidRange, "need at least two property levels");
    require(level >= 0 && level < levels, ErrorCode::InvalidRange,
            "property level " + std::to_string(level) + " outside [0, " + std::to_string(levels) + ")");
    return {Kind::Property, level, levels};
}

PropertyPrompt PropertyPrompt::from_label(const std::string& label, int64_t levels) {
    if (label == "general") return general(levels);
    if (label.rfind("level", 0) == 0 && label.size() > 5) {
        try {
            return property(std::stoll(label.substr(5)), levels);
        } catch (const std::logic_error&) {
        }
    }
    fail(ErrorCode::InvalidArgument, "unknown prompt label '" + label + "'");
}

int64_t PropertyPrompt::token_id() const { return kind == Kind::General ? levels : level; }

std::string PropertyPrompt::label() const {
    return kind == Kind::General ? "general" : "level" + std::to_string(level);
}

double PropertyPrompt::alpha() const {
    return static_cast<double>(level) / static_cast<double>(levels - 1);
}

std::vector<PropertyPrompt> default_prompt_set(int64_t levels) {
    std::vector<PropertyPrompt> out{PropertyPrompt::general(levels)};
    for (int64_t k = 0; k < levels; ++k) out.push_back(PropertyPrompt::property(k, levels));
    return out;
}

torch::Tensor interpolate_latent(const torch::Tensor& z_ir, const torch::Tensor& z_vis, const torch::Tensor& z_fusion,
                                 int64_t k, int64_t levels) {
    const auto prompt = PropertyPrompt::property(k, levels);
    require(z_ir.sizes() == z_vis.sizes() && z_ir.sizes() == z_fusion.sizes(), ErrorCode::ShapeMismatch,
            "interpolate_latent: latents differ in shape");
    const double a = prompt.alpha();
    return 0.5 * (a * z_ir + (1.0 - a) * z_vis) + 0.5 * z_fusion;
}

torch::Tensor interpolate_latent(const torch::Tensor& z_ir, const torch::Tensor& z_vis, const torch::Tensor& z_fusion,
                                 const torch::Tensor& k, int64_t levels) {
    require(levels >= 2, ErrorCode::InvalidRange, "need at least two property levels");
    require(z_ir.sizes() == z_vis.sizes() && z_ir.sizes() == z_fusion.sizes(), ErrorCode::ShapeMismatch,
            "interpolate_latent: latents differ in shape");
    require(z_ir.dim() == 4 && k.numel() == z_ir.size(0), ErrorCode::ShapeMismatch,
            "interpolate_latent: one level per batch element");
    require(k.min().item<int64_t>() >= 0 && k.max().item<int64_t>() < levels, ErrorCode::InvalidRange,
            "interpolate_latent: level out of range");
    auto a = (k.to(z_ir.dtype()) / static_cast<double>(levels - 1)).view({-1, 1, 1, 1});
    return 0.5 * (a * z_ir + (1.0 - a) * z_vis) + 0.5 * z_fusion;
}

torch::Tensor denoise_loss(const diffusion::EpsPredictor& model, const torch::Tensor& z0, const torch::Tensor& z_c,
                           const torch::Tensor& prompt_ids, const torch::Tensor& t, const torch::Tensor& eps,
                           const diffusion::NoiseSchedule& sched) {
    auto z_t = diffusion::q_sample(z0, t, eps, sched);
    auto pred = model(z_t, t, {z_c, prompt_ids});
    require(pred.sizes() == eps.sizes(), ErrorCode::ShapeMismatch, "denoise_loss: prediction shape mismatch");
    return (eps - pred).pow(2).mean();
}

JointLoss joint_conditional_loss(const diffusion::EpsPredictor& model, const torch::Tensor& z_fusion,
                                 const torch::Tensor& z_ir, const torch::Tensor& z_vis, const torch::Tensor& z_c,
                                 const torch::Tensor& k, int64_t levels, const torch::Tensor& t,
                                 const torch::Tensor& eps_general, const torch::Tensor& eps_property, double lambda,
                                 const diffusion::NoiseSchedule& sched) {
    require(lambda >= 0.0, ErrorCode::InvalidRange, "lambda must be >= 0");
    const int64_t b = z_fusion.size(0);
    auto z_prop = interpolate_latent(z_ir, z_vis, z_fusion, k, levels);
    auto general_ids = torch::full({b}, PropertyPrompt::general(levels).token_id(), torch::kLong);
    auto prop_ids = k.to(torch::kLong).flatten();

    auto z0 = torch::cat({z_fusion, z_prop});
    auto eps = torch::cat({eps_general, eps_property});
    auto tt = torch::cat({t.flatten(), t.flatten()});
    auto z_t = diffusion::q_sample(z0, tt, eps, sched);
    auto pred = model(z_t, tt, {torch::cat({z_c, z_c}), torch::cat({general_ids, prop_ids})});
    require(pred.sizes() == eps.sizes(), ErrorCode::ShapeMismatch, "joint loss: prediction shape mismatch");
    auto sq = (eps - pred).pow(2);
    JointLoss out;
    out.general = sq.narrow(0, 0, b).mean();
    out.property = sq.narrow(0, b, b).mean();
    out.total = out.general + lambda * out.property;
    return out;
}

PairLatents PairLatents::select(const torch::Tensor& index) const {
    return {z_ir.index_select(0, index), z_vis.index_select(0, index), z_c.index_select(0, index),
            z_fusion.index_select(0, index)};
}

PairLatents compute_latents(prior::PriorFusionNet& prior, const LatentCodec& codec,
                            const std::vector<ImagePair>& pairs) {
    require(!pairs.empty(), ErrorCode::EmptyDataset, "no pairs to encode");
    torch::NoGradGuard no_grad;
    std::vector<Image> irs, viss;
    for (const auto& p : pairs) {
        irs.push_back(p.ir);
        viss.push_back(p.vis);
    }
    PairLatents out;
    out.z_ir = codec.encode(stack_images(irs));
    out.z_vis = codec.encode(stack_images(viss));
    out.z_c = concat_sources(out.z_ir, out.z_vis);
    prior->eval();
    out.z_fusion = prior->forward(out.z_c);
    return out;
}

double validation_loss(const diffusion::EpsPredictor& model, const PairLatents& data, int64_t levels, double lambda,
                       int64_t repeats, std::uint64_t seed, const diffusion::NoiseSchedule& sched) {
    torch::NoGradGuard no_grad;
    auto gen = make_generator(seed);
    const int64_t n = data.size();
    auto opts = data.z_fusion.options();
    double total = 0.0;
    int64_t count = 0;
    for (int64_t r = 0; r < repeats; ++r) {
        auto k = torch::randint(levels, {n}, gen, torch::kLong);
        auto t = torch::randint(sched.steps(), {n}, gen, torch::kLong);
        auto eps_a = torch::randn(data.z_fusion.sizes(), gen, opts);
        auto eps_b = torch::randn(data.z_fusion.sizes(), gen, opts);
        for (int64_t start = 0; start < n; start += 32) {
            const int64_t len = std::min<int64_t>(32, n - start);
            auto sl = [&](const torch::Tensor& x) { return x.narrow(0, start, len); };
            auto loss = joint_conditional_loss(model, sl(data.z_fusion), sl(data.z_ir), sl(data.z_vis), sl(data.z_c),
                                               sl(k), levels, sl(t), sl(eps_a), sl(eps_b), lambda, sched);
            total += loss.total.item<double>() * static_cast<double>(len);
            count += len;
        }
    }
    return total / static_cast<double>(count);
}

PaldmTrainResult train_paldm(prior::PriorFusionNet& prior, const LatentCodec& codec,
                             const std::vector<ImagePair>& corpus, const diffusion::NoiseSchedule& sched,
                             const PaldmTrainConfig& config) {
    require(!corpus.empty(), ErrorCode::EmptyDataset, "train_paldm: empty corpus");
    require(!prior.is_empty(), ErrorCode::MissingDependency, "train_paldm: a trained prior model is required");
    torch::manual_seed(config.seed);

    auto all = compute_latents(prior, codec, corpus);
    auto split = split_corpus(corpus.size(), config.validation_fraction, config.seed);
    auto as_index = [](const std::vector<size_t>& v) {
        return torch::tensor(std::vector<int64_t>(v.begin(), v.end()), torch::kLong);
    };
    auto train = all.select(as_index(split.train));
    auto val = all.select(as_index(split.validation));

    DenoiserOptions opts = config.model;
    opts.latent_channels = codec.kind().latent_channels();
    opts.cond_channels = 2 * opts.latent_channels;
    opts.num_prompts = config.levels + 1;
    Denoiser model(opts);
    auto predictor = as_predictor(model);
    torch::optim::Adam opt(model->parameters(), torch::optim::AdamOptions(config.learning_rate));
    auto gen = make_generator(config.seed + 1);
    const std::uint64_t val_seed = config.seed + 2;

    PaldmTrainResult result;
    result.initial_validation_loss =
        validation_loss(predictor, val, config.levels, config.lambda, config.validation_repeats, val_seed, sched);
    result.best_validation_loss = result.initial_validation_loss;
    result.validation_history.emplace_back(0, result.initial_validation_loss);
    auto best_state = snapshot_state(*model);

    const int64_t n = train.size();
    for (int64_t step = 0; step < config.steps; ++step) {
        const int64_t b = std::min(config.batch_size, n);
        auto batch = train.select(torch::randint(n, {b}, gen, torch::kLong));
        auto k = torch::randint(config.levels, {b}, gen, torch::kLong);
        auto t = torch::randint(sched.steps(), {b}, gen, torch::kLong);
        auto eps_a = torch::randn(batch.z_fusion.sizes(), gen, batch.z_fusion.options());
        auto eps_b = torch::randn(batch.z_fusion.sizes(), gen, batch.z_fusion.options());
        auto loss = joint_conditional_loss(predictor, batch.z_fusion, batch.z_ir, batch.z_vis, batch.z_c, k,
                                           config.levels, t, eps_a, eps_b, config.lambda, sched);
        opt.zero_grad();
        loss.total.backward();
        opt.step();
        result.train_losses.push_back(loss.total.item<double>());

        if ((step + 1) % config.eval_every == 0 || step + 1 == config.steps) {
            const double v =
                validation_loss(predictor, val, config.levels, config.lambda, config.validation_repeats, val_seed, sched);
            result.validation_history.emplace_back(step + 1, v);
            result.final_validation_loss = v;
            if (v < result.best_validation_loss) {
                result.best_validation_loss = v;
                result.best_step = step + 1;
                best_state = snapshot_state(*model);
            }
            log::debug("paldm step ", step + 1, " train ", result.train_losses.back(), " val ", v);
        }
    }
    if (config.steps == 0) result.final_validation_loss = result.initial_validation_loss;
    restore_state(*model, best_state);
    model->eval();
    result.converged = result.best_validation_loss <= result.initial_validation_loss / 5.0;
    if (!result.converged) {
        log::warn("PALDM validation loss fell only from ", result.initial_validation_loss, " to ",
                  result.best_validation_loss, "; returning best checkpoint");
    }
    result.model = model;
    return result;
}

torch::Tensor initial_noise(int64_t channels, int64_t height, int64_t width, std::uint64_t seed) {
    auto gen = make_generator(seed);
    return torch::randn({1, channels, height, width}, gen, torch::kFloat32);
}

std::vector<torch::Tensor> sample_candidates(Denoiser model, const torch::Tensor& z_c,
                                             const std::vector<PropertyPrompt>& prompts,
                                             const diffusion::NoiseSchedule& sched, int64_t steps, std::uint64_t seed) {
    require(!prompts.empty(), ErrorCode::InvalidArgument, "no prompts requested");
    require(z_c.dim() == 3, ErrorCode::ShapeMismatch, "sample_candidates expects a single 2c×h×w z_c");
    torch::NoGradGuard no_grad;
    model->eval();
    const auto p = static_cast<int64_t>(prompts.size());
    const auto dtype = model->parameters().front().scalar_type();
    auto z_T = initial_noise(model->options.latent_channels, z_c.size(1), z_c.size(2), seed)
                   .to(dtype)
                   .expand({p, -1, -1, -1})
                   .contiguous();
    std::vector<int64_t> ids;
    for (const auto& pr : prompts) ids.push_back(pr.token_id());
    diffusion::Conditioning cond{z_c.to(dtype).unsqueeze(0).expand({p, -1, -1, -1}).contiguous(),
                                 torch::tensor(ids, torch::kLong)};
    auto z0 = diffusion::ddim_sample(as_predictor(model), z_T, cond, sched, steps);
    std::vector<torch::Tensor> out;
    for (int64_t i = 0; i < p; ++i) out.push_back(z0[i]);
    return out;
}

std::vector<Image> generate_candidates(Denoiser model, const LatentCodec& codec, const ImagePair& pair,
                                       const std::vector<PropertyPrompt>& prompts,
                                       const diffusion::NoiseSchedule& sched, int64_t steps, std::uint64_t seed) {
    auto z_c = concat_sources(codec.encode(pair.ir), codec.encode(pair.vis));
    auto latents = sample_candidates(std::move(model), z_c, prompts, sched, steps, seed);
    std::vector<Image> images;
    for (const auto& z : latents) images.push_back(codec.decode_image(z.to(torch::kFloat32)));
    return images;
}

}  // namespace fusionpref::paldm
