// Copyright (C) 2026 The fusionpref Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <string>
#include <vector>

#include "fusionpref/codec.hpp"
#include "fusionpref/corpus.hpp"
#include "fusionpref/denoiser.hpp"
#include "fusionpref/diffusion.hpp"

namespace fusionpref::pcldm {

/// Binary h×w latent mask, broadcast over channels.
struct LatentMask {
    torch::Tensor values;  // h×w, float, entries exactly 0 or 1

    LatentMask complement() const { return {1.0 - values}; }
    double support_fraction() const { return values.mean().item<double>(); }
};

/// Nearest-neighbour downsampling: latent cell (i, j) takes pixel (i·f, j·f).
LatentMask downsample_mask(const Image& mask, int factor);

/// Frozen reference ε_ref plus a trainable duplicate ε_θ whose output is
/// routed through a zero-initialised 1×1 convolution:
///   y = F_ref(x, c_general) + Z(F_θ(x, c_pref)).
struct CoupledModelImpl : torch::nn::Module {
    /// Duplicates `reference` into the trainable branch, appending one
    /// preference token (initialised from the general prompt row).
    explicit CoupledModelImpl(const paldm::Denoiser& reference);

    struct Outputs {
        torch::Tensor reference;  // F_ref(x, c_general)
        torch::Tensor coupled;    // y_p
    };

    Outputs forward_both(const torch::Tensor& z_t, const torch::Tensor& t, const torch::Tensor& z_c);
    torch::Tensor forward(const torch::Tensor& z_t, const torch::Tensor& t, const torch::Tensor& z_c);

    std::vector<torch::Tensor> trainable_parameters();
    diffusion::EpsPredictor predictor();

    paldm::Denoiser reference{nullptr};
    paldm::Denoiser trainable{nullptr};
    torch::nn::Conv2d zero_proj{nullptr};
    int64_t general_prompt = 0;
    int64_t preference_prompt = 0;
};
TORCH_MODULE(CoupledModel);

/// ‖(eps_gt − eps_theta)⊙m‖² − ‖(eps_gt − eps_ref)⊙m‖², summed per sample.
/// Latents are B×C×h×w; the mask is h×w or B×1×h×w. Returns shape [B].
torch::Tensor p_terms(const torch::Tensor& eps_gt, const torch::Tensor& eps_theta, const torch::Tensor& eps_ref,
                      const torch::Tensor& mask);

/// ‖(eps_theta − eps_ref)⊙m̄‖², summed per sample. Returns shape [B].
torch::Tensor o_terms(const torch::Tensor& eps_theta, const torch::Tensor& eps_ref, const torch::Tensor& mask_complement);

/// Preference examples as latents; mask is B×1×h×w.
struct PreferenceBatch {
    torch::Tensor z_c, z0_w, z0_l, mask;

    int64_t size() const { return z_c.size(0); }
    PreferenceBatch select(const torch::Tensor& index) const;
    PreferenceBatch to(torch::Dtype dtype) const;
};

struct IdpoTerms {
    torch::Tensor p_w, p_l, o_w, o_l;  // [B]
    torch::Tensor preference_argument; // β·(P_w − P_l), [B]
    torch::Tensor preference;          // batch mean of −log σ(−β(P_w − P_l))
    torch::Tensor consistency;         // batch mean of μ·(O_w + O_l)
    torch::Tensor total;
};

/// −log σ(−β(P_w − P_l)) + μ(O_w + O_l), batch-averaged. Winner and loser
/// share t; eps_w and eps_l are independent draws.
IdpoTerms idpo_loss(CoupledModel& model, const PreferenceBatch& batch, const torch::Tensor& t,
                    const torch::Tensor& eps_w, const torch::Tensor& eps_l, double beta, double mu,
                    const diffusion::NoiseSchedule& sched);

/// Whole-image diffusion DPO: IDPO with an all-ones mask and μ = 0.
IdpoTerms dpo_loss_baseline(CoupledModel& model, const PreferenceBatch& batch, const torch::Tensor& t,
                            const torch::Tensor& eps_w, const torch::Tensor& eps_l, double beta,
                            const diffusion::NoiseSchedule& sched);

/// max(0, margin + err_w − err_l) elementwise.
torch::Tensor contrastive_hinge(const torch::Tensor& err_w, const torch::Tensor& err_l, double margin);

/// Masked hinge on the coupled model's denoising errors, batch-averaged.
/// err(x) = ‖(ε^x − ε_θ^x)⊙m‖².
torch::Tensor contrastive_loss_baseline(CoupledModel& model, const PreferenceBatch& batch, const torch::Tensor& t,
                                        const torch::Tensor& eps_w, const torch::Tensor& eps_l, double margin,
                                        const diffusion::NoiseSchedule& sched);

enum class LossKind { Idpo, Dpo, Contrast };
std::string to_string(LossKind kind);
LossKind loss_kind_from_string(const std::string& name);

struct FinetuneConfig {
    LossKind loss = LossKind::Idpo;
    int64_t epochs = 20;
    int64_t batch_size = 8;
    double learning_rate = 1e-5;
    double beta = 10.0;
    double mu = 0.5;
    double margin = 1.0;
    std::uint64_t seed = 0;
    double divergence_factor = 10.0;
    int64_t divergence_patience = 100;
    int64_t max_steps = -1;  // stop early after this many steps when >= 0
};

struct FinetuneResult {
    CoupledModel model{nullptr};
    double step0_preference = 0.0;  // preference term on the first batch, before any update
    std::vector<double> losses;
    std::vector<double> preference_terms;
    int64_t steps = 0;
};

/// Fine-tunes a coupled model built from `reference`. Throws EmptyDataset
/// for an empty dataset and Diverged when the loss stays above
/// divergence_factor × its initial value for divergence_patience steps.
FinetuneResult finetune(const paldm::Denoiser& reference, const PreferenceBatch& dataset,
                        const diffusion::NoiseSchedule& sched, const FinetuneConfig& config);

/// Continues optimisation of an existing coupled model.
FinetuneResult finetune(CoupledModel model, const PreferenceBatch& dataset, const diffusion::NoiseSchedule& sched,
                        const FinetuneConfig& config);

/// Samples with the coupled model from the pair's seeded z_T and returns
/// the fused latent (c×h×w).
torch::Tensor fuse_latent(CoupledModel& model, const torch::Tensor& z_c, const diffusion::NoiseSchedule& sched,
                          int64_t steps, std::uint64_t seed);

Image fuse_with_preference(CoupledModel& model, const LatentCodec& codec, const ImagePair& pair,
                           const diffusion::NoiseSchedule& sched, int64_t steps, std::uint64_t seed);

}  // namespace fusionpref::pcldm
