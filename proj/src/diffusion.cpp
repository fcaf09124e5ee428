// Copyright (C) 2026 The fusionpref Authors
// SPDX-License-Identifier: Apache-2.0

#include "fusionpref/diffusion.hpp"

#include <cmath>
#include <sstream>

#include "fusionpref/error.hpp"

namespace fusionpref::diffusion {

NoiseSchedule NoiseSchedule::linear(int64_t T, double beta_start, double beta_end) {
    if (T < 2 || !(beta_start > 0.0) || !(beta_start < beta_end) || !(beta_end < 1.0)) {
        std::ostringstream msg;
        msg << "invalid schedule: T=" << T << " beta_start=" << beta_start << " beta_end=" << beta_end
            << " (need T >= 2 and 0 < beta_start < beta_end < 1)";
        fail(ErrorCode::InvalidRange, msg.str());
    }
    NoiseSchedule s;
    s.betas_.resize(T);
    s.alphas_.resize(T);
    s.alpha_bars_.resize(T);
    double running = 1.0;
    for (int64_t i = 0; i < T; ++i) {
        double beta = beta_start + (beta_end - beta_start) * static_cast<double>(i) / static_cast<double>(T - 1);
        if (i == T - 1) beta = beta_end;
        s.betas_[i] = beta;
        s.alphas_[i] = 1.0 - beta;
        running *= s.alphas_[i];
        s.alpha_bars_[i] = running;
    }
    return s;
}

double NoiseSchedule::alpha_bar(int64_t t) const {
    require(t >= 0 && t < steps(), ErrorCode::InvalidRange,
            "timestep " + std::to_string(t) + " outside [0, " + std::to_string(steps()) + ")");
    return alpha_bars_[t];
}

torch::Tensor NoiseSchedule::alpha_bar_at(const torch::Tensor& t, const torch::TensorOptions& opts) const {
    auto table = torch::tensor(alpha_bars_, torch::TensorOptions().dtype(torch::kFloat64));
    auto idx = t.to(torch::kLong).flatten();
    require(idx.numel() == 0 || (idx.min().item<int64_t>() >= 0 && idx.max().item<int64_t>() < steps()),
            ErrorCode::InvalidRange, "timestep outside schedule");
    return table.index_select(0, idx).to(opts.dtype()).view({-1, 1, 1, 1});
}

namespace {

void check_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
    if (a.sizes() != b.sizes()) {
        std::ostringstream msg;
        msg << what << ": shape " << a.sizes() << " vs " << b.sizes();
        fail(ErrorCode::ShapeMismatch, msg.str());
    }
}

}  // namespace

NoisedSample q_sample(const torch::Tensor& z0, int64_t t, const torch::Tensor& eps, const NoiseSchedule& sched) {
    check_same_shape(z0, eps, "q_sample");
    const double ab = sched.alpha_bar(t);
    return {std::sqrt(ab) * z0 + std::sqrt(1.0 - ab) * eps, eps, t};
}

torch::Tensor q_sample(const torch::Tensor& z0, const torch::Tensor& t, const torch::Tensor& eps,
                       const NoiseSchedule& sched) {
    check_same_shape(z0, eps, "q_sample");
    require(z0.dim() == 4 && t.numel() == z0.size(0), ErrorCode::ShapeMismatch,
            "batched q_sample expects B×C×H×W latents and one timestep per element");
    auto ab = sched.alpha_bar_at(t, z0.options());
    return ab.sqrt() * z0 + (1.0 - ab).sqrt() * eps;
}

torch::Tensor predict_z0(const torch::Tensor& z_t, const torch::Tensor& eps, int64_t t, const NoiseSchedule& sched) {
    check_same_shape(z_t, eps, "predict_z0");
    const double ab = sched.alpha_bar(t);
    return (z_t - std::sqrt(1.0 - ab) * eps) / std::sqrt(ab);
}

torch::Tensor ddpm_step(const torch::Tensor& z_t, const torch::Tensor& eps_pred, int64_t t,
                        const NoiseSchedule& sched, const torch::Tensor& noise) {
    check_same_shape(z_t, eps_pred, "ddpm_step");
    const double ab = sched.alpha_bar(t);
    const double beta = sched.betas()[t];
    const double alpha = sched.alphas()[t];
    auto mean = (z_t - (beta / std::sqrt(1.0 - ab)) * eps_pred) / std::sqrt(alpha);
    if (t == 0) return mean;
    check_same_shape(z_t, noise, "ddpm_step noise");
    const double ab_prev = sched.alpha_bars()[t - 1];
    const double posterior_var = beta * (1.0 - ab_prev) / (1.0 - ab);
    return mean + std::sqrt(posterior_var) * noise;
}

std::vector<int64_t> sampling_timesteps(int64_t T, int64_t steps) {
    require(steps >= 1 && steps <= T, ErrorCode::InvalidRange,
            "sampler steps must lie in [1, T]; got " + std::to_string(steps));
    std::vector<int64_t> ts;
    ts.reserve(steps);
    if (steps == 1) return {T - 1};
    for (int64_t i = steps - 1; i >= 0; --i) {
        // evenly spaced over [0, T-1], endpoints included
        const double pos = static_cast<double>(i) * static_cast<double>(T - 1) / static_cast<double>(steps - 1);
        ts.push_back(static_cast<int64_t>(std::llround(pos)));
    }
    return ts;
}

torch::Tensor ddim_sample(const EpsPredictor& model, const torch::Tensor& z_T, const Conditioning& cond,
                          const NoiseSchedule& sched, int64_t steps) {
    torch::NoGradGuard no_grad;
    const auto ts = sampling_timesteps(sched.steps(), steps);
    auto z = z_T.clone();
    torch::Tensor z0;
    for (size_t i = 0; i < ts.size(); ++i) {
        const int64_t t = ts[i];
        auto t_batch = torch::full({z.size(0)}, t, torch::TensorOptions().dtype(torch::kLong));
        auto eps = model(z, t_batch, cond);
        check_same_shape(z, eps, "ddim_sample model output");
        const double ab = sched.alpha_bars()[t];
        z0 = (z - std::sqrt(1.0 - ab) * eps) / std::sqrt(ab);
        if (i + 1 == ts.size()) break;
        const double ab_prev = sched.alpha_bars()[ts[i + 1]];
        z = std::sqrt(ab_prev) * z0 + std::sqrt(1.0 - ab_prev) * eps;
    }
    return z0;
}

}  // namespace fusionpref::diffusion
