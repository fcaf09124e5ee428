// Copyright (C) 2026 The fusionpref Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include "fusionpref/paldm.hpp"
#include "fusionpref/pcldm.hpp"
#include "tiny_models.hpp"

using namespace fusionpref;
using testing::randn_seeded;

TEST_CASE("denoise loss gradient wrt denoiser parameters") {
    auto model = testing::tiny_denoiser(21);
    auto s = diffusion::NoiseSchedule::linear(50);
    auto z0 = randn_seeded({2, 4, 4, 4}, 1), z_c = randn_seeded({2, 8, 4, 4}, 2), eps = randn_seeded({2, 4, 4, 4}, 3);
    auto t = torch::tensor({4, 33}, torch::kLong);
    auto ids = torch::tensor({1, 5}, torch::kLong);
    auto pred = paldm::as_predictor(model);
    auto check = testing::finite_difference_check(
        [&] { return paldm::denoise_loss(pred, z0, z_c, ids, t, eps, s); }, model->parameters(), 60, 5);
    MESSAGE("denoise loss: " << check.within << "/" << check.sampled << " within 1e-3, worst " << check.worst);
    CHECK(check.fraction() >= 0.95);
}

TEST_CASE("IDPO gradient wrt the trainable branch and projection") {
    auto ref = testing::tiny_denoiser(22);
    pcldm::CoupledModel model(ref);
    {
        torch::NoGradGuard no_grad;
        auto gen = make_generator(9);
        for (auto& p : model->trainable_parameters()) p.add_(0.05 * torch::randn(p.sizes(), gen, p.options()));
    }
    auto s = diffusion::NoiseSchedule::linear(50);
    pcldm::PreferenceBatch batch{randn_seeded({2, 8, 4, 4}, 1), randn_seeded({2, 4, 4, 4}, 2),
                                 randn_seeded({2, 4, 4, 4}, 3),
                                 (randn_seeded({2, 1, 4, 4}, 7) > 0.3).to(torch::kFloat64)};
    auto t = torch::tensor({6, 30}, torch::kLong);
    auto ew = randn_seeded({2, 4, 4, 4}, 4), el = randn_seeded({2, 4, 4, 4}, 5);
    auto check = testing::finite_difference_check(
        [&] { return pcldm::idpo_loss(model, batch, t, ew, el, 10.0, 0.5, s).total; }, model->trainable_parameters(),
        60, 6);
    MESSAGE("IDPO: " << check.within << "/" << check.sampled << " within 1e-3, worst " << check.worst);
    CHECK(check.fraction() >= 0.95);
}
