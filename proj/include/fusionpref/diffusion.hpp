// Copyright (C) 2026 The fusionpref Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <functional>
#include <vector>

namespace fusionpref::diffusion {

/// Precomputed tables of a linear-β forward process. Immutable once built.
class NoiseSchedule {
public:
    /// Betas spaced linearly from beta_start to beta_end inclusive.
    /// Requires T >= 2 and 0 < beta_start < beta_end < 1.
    static NoiseSchedule linear(int64_t T, double beta_start = 1e-4, double beta_end = 0.02);

    int64_t steps() const { return static_cast<int64_t>(betas_.size()); }
    double beta_start() const { return betas_.front(); }
    double beta_end() const { return betas_.back(); }

    const std::vector<double>& betas() const { return betas_; }
    const std::vector<double>& alphas() const { return alphas_; }
    const std::vector<double>& alpha_bars() const { return alpha_bars_; }

    double alpha_bar(int64_t t) const;

    /// alpha_bars gathered at t (shape [B]) and reshaped to broadcast over
    /// a B×C×H×W tensor.
    torch::Tensor alpha_bar_at(const torch::Tensor& t, const torch::TensorOptions& opts) const;

private:
    NoiseSchedule() = default;
    std::vector<double> betas_;
    std::vector<double> alphas_;
    std::vector<double> alpha_bars_;
};

struct NoisedSample {
    torch::Tensor z_t;
    torch::Tensor eps;
    int64_t t = 0;
};

/// Closed-form forward noising at one timestep.
NoisedSample q_sample(const torch::Tensor& z0, int64_t t, const torch::Tensor& eps, const NoiseSchedule& sched);

/// Batched variant; t holds one (0-based) timestep per batch element.
torch::Tensor q_sample(const torch::Tensor& z0, const torch::Tensor& t, const torch::Tensor& eps,
                       const NoiseSchedule& sched);

/// Recovers z0 from z_t given the exact noise.
torch::Tensor predict_z0(const torch::Tensor& z_t, const torch::Tensor& eps, int64_t t, const NoiseSchedule& sched);

/// One ancestral reverse step z_t -> z_{t-1}: posterior mean plus σ_t·noise.
/// At t = 0 the mean is returned and noise is ignored.
torch::Tensor ddpm_step(const torch::Tensor& z_t, const torch::Tensor& eps_pred, int64_t t,
                        const NoiseSchedule& sched, const torch::Tensor& noise);

/// Conditioning shared by every evaluation along one sampling trajectory.
struct Conditioning {
    torch::Tensor z_c;         // B×2c×h×w concatenated source latents
    torch::Tensor prompt_ids;  // [B] int64 prompt tokens (may be undefined)
};

/// ε-prediction callable: (z_t, t[B], conditioning) -> ε̂ shaped like z_t.
using EpsPredictor =
    std::function<torch::Tensor(const torch::Tensor& z_t, const torch::Tensor& t, const Conditioning& cond)>;

/// Timesteps visited by a `steps`-step sampler, descending. steps == T yields T-1, ..., 0.
std::vector<int64_t> sampling_timesteps(int64_t T, int64_t steps);

/// Deterministic DDIM (η = 0) from z_T down to the predicted z_0.
torch::Tensor ddim_sample(const EpsPredictor& model, const torch::Tensor& z_T, const Conditioning& cond,
                          const NoiseSchedule& sched, int64_t steps);

}  // namespace fusionpref::diffusion
