// Copyright (C) 2026 The fusionpref Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>

#include "fusionpref/checkpoint.hpp"
#include "fusionpref/error.hpp"
#include "fusionpref/paldm.hpp"
#include "fusionpref/pcldm.hpp"
#include "test_support.hpp"
#include "tiny_models.hpp"

using namespace fusionpref;
using namespace fusionpref::pcldm;
using testing::randn_seeded;

namespace {

PreferenceBatch random_batch(int64_t b, uint64_t seed, torch::Tensor mask = {}) {
    PreferenceBatch batch{randn_seeded({b, 8, 8, 8}, seed), randn_seeded({b, 4, 8, 8}, seed + 1),
                          randn_seeded({b, 4, 8, 8}, seed + 2), mask};
    if (!mask.defined()) batch.mask = (randn_seeded({b, 1, 8, 8}, seed + 3) > 0).to(torch::kFloat64);
    return batch;
}

void perturb(CoupledModel& model, uint64_t seed) {
    torch::NoGradGuard no_grad;
    auto gen = make_generator(seed);
    for (auto& p : model->trainable_parameters()) p.add_(0.05 * torch::randn(p.sizes(), gen, p.options()));
}

}  // namespace

TEST_CASE("latent mask downsampling") {
    CHECK(downsample_mask(Image(8, 8, 1, 1.0f), 4).values.sum().item<float>() == 4.0f);
    CHECK(downsample_mask(Image(8, 8, 1, 0.0f), 4).values.sum().item<float>() == 0.0f);

    auto block = rectangle_mask(8, 8, 4, 0, 4, 4);
    auto m = downsample_mask(block, 4);
    CHECK(m.values.sizes() == torch::IntArrayRef({2, 2}));
    CHECK(m.values.sum().item<float>() == 1.0f);
    CHECK(m.values[0][1].item<float>() == 1.0f);
    CHECK(m.complement().values.sum().item<float>() == 3.0f);
    CHECK(m.support_fraction() == doctest::Approx(0.25));

    Image grey(8, 8, 1, 0.5f);
    CHECK_THROWS_AS(downsample_mask(grey, 4), Error);
    CHECK_THROWS_AS(downsample_mask(Image(10, 8, 1, 1.0f), 4), Error);
}

TEST_CASE("mask support fraction survives grid-aligned downsampling") {
    for (int x = 0; x < 32; x += 4)
        for (int w = 4; x + w <= 32; w += 8) {
            auto mask = rectangle_mask(32, 32, x, 8, w, 12);
            double pixel_fraction = 0.0;
            for (float v : mask.data) pixel_fraction += v;
            pixel_fraction /= 1024.0;
            CHECK(downsample_mask(mask, 4).support_fraction() == doctest::Approx(pixel_fraction).epsilon(1e-12));
        }
}

TEST_CASE("p and o terms") {
    auto one = torch::ones({1, 1, 1, 1}, torch::kFloat64);
    auto mask = torch::ones({1, 1}, torch::kFloat64);
    CHECK(p_terms(one, 0.0 * one, 0.5 * one, mask).item<double>() == doctest::Approx(0.75));
    CHECK(o_terms(one, 0.0 * one, mask).item<double>() == 1.0);

    auto gt = randn_seeded({2, 3, 4, 4}, 1), th = randn_seeded({2, 3, 4, 4}, 2), rf = randn_seeded({2, 3, 4, 4}, 3);
    auto m = (torch::rand({4, 4}) > 0.5).to(torch::kFloat64);
    CHECK(p_terms(gt, rf, rf, m).abs().max().item<double>() == 0.0);
    CHECK(p_terms(gt, th, rf, torch::zeros({4, 4}, torch::kFloat64)).abs().max().item<double>() == 0.0);
    CHECK(o_terms(rf, rf, m).abs().max().item<double>() == 0.0);
    CHECK(o_terms(th, rf, torch::zeros({4, 4}, torch::kFloat64)).abs().max().item<double>() == 0.0);
    CHECK(p_terms(gt, th, rf, m).sizes() == torch::IntArrayRef({2}));

    // additivity over disjoint supports
    auto whole = p_terms(gt, th, rf, torch::ones({4, 4}, torch::kFloat64));
    auto split = p_terms(gt, th, rf, m) + p_terms(gt, th, rf, 1.0 - m);
    CHECK((whole - split).abs().max().item<double>() <= 1e-9);

    CHECK_THROWS_AS(p_terms(gt, th.narrow(1, 0, 2), rf, m), Error);
    CHECK_THROWS_AS(o_terms(th, rf, torch::ones({3, 4}, torch::kFloat64)), Error);
}

TEST_CASE("coupled model") {
    auto ref = testing::tiny_denoiser(1);
    CoupledModel model(ref);
    CHECK(model->preference_prompt == 6);
    CHECK(model->general_prompt == 5);
    auto z_t = randn_seeded({2, 4, 8, 8}, 4), z_c = randn_seeded({2, 8, 8, 8}, 5);
    auto t = torch::tensor({3, 77}, torch::kLong);

    auto out = model->forward_both(z_t, t, z_c);
    CHECK(torch::equal(out.coupled, out.reference));
    CHECK(torch::equal(out.reference, ref->forward(z_t, t, z_c, torch::full({2}, 5, torch::kLong))));

    // gradients reach the trainable side only
    auto y = model->forward(z_t, t, z_c);
    y.pow(2).sum().backward();
    for (auto& p : model->reference->parameters()) CHECK_FALSE(p.requires_grad());
    CHECK(model->zero_proj->weight.grad().abs().sum().item<double>() > 0.0);

    {
        torch::NoGradGuard no_grad;
        model->zero_proj->bias.fill_(0.01);
    }
    CHECK((model->forward(z_t, t, z_c) - out.reference).abs().max().item<double>() > 0.0);
}

TEST_CASE("fresh coupled model gives ln 2 and a zero argument") {
    auto ref = testing::tiny_denoiser(2);
    CoupledModel model(ref);
    auto s = diffusion::NoiseSchedule::linear(100);
    auto batch = random_batch(4, 10);
    auto t = torch::tensor({1, 20, 60, 99}, torch::kLong);
    auto ew = randn_seeded({4, 4, 8, 8}, 20), el = randn_seeded({4, 4, 8, 8}, 21);
    auto terms = idpo_loss(model, batch, t, ew, el, 10.0, 0.5, s);
    CHECK(terms.preference.item<double>() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(terms.preference_argument.abs().max().item<double>() == 0.0);
    CHECK(terms.consistency.item<double>() == 0.0);
    auto dpo = dpo_loss_baseline(model, batch, t, ew, el, 10.0, s);
    CHECK(dpo.total.item<double>() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("IDPO structure on a perturbed model") {
    auto ref = testing::tiny_denoiser(3);
    CoupledModel model(ref);
    perturb(model, 30);
    auto s = diffusion::NoiseSchedule::linear(100);
    auto batch = random_batch(3, 40);
    auto t = torch::tensor({5, 50, 90}, torch::kLong);
    auto ew = randn_seeded({3, 4, 8, 8}, 50), el = randn_seeded({3, 4, 8, 8}, 51);

    auto terms = idpo_loss(model, batch, t, ew, el, 10.0, 0.5, s);
    auto manual = torch::nn::functional::softplus(10.0 * (terms.p_w - terms.p_l)).mean() +
                  (0.5 * (terms.o_w + terms.o_l)).mean();
    CHECK(terms.total.item<double>() == doctest::Approx(manual.item<double>()).epsilon(1e-12));

    SUBCASE("all-ones mask drops the consistency term") {
        auto whole = batch;
        whole.mask = torch::ones_like(batch.mask);
        auto w = idpo_loss(model, whole, t, ew, el, 10.0, 0.5, s);
        CHECK(w.consistency.item<double>() == 0.0);
        CHECK(w.total.item<double>() == w.preference.item<double>());
    }
    SUBCASE("DPO is IDPO with a full mask and no consistency") {
        auto whole = batch;
        whole.mask = torch::ones_like(batch.mask);
        auto a = dpo_loss_baseline(model, batch, t, ew, el, 10.0, s);
        auto b = idpo_loss(model, whole, t, ew, el, 10.0, 0.0, s);
        CHECK(std::abs(a.total.item<double>() - b.total.item<double>()) <= 1e-9);
    }
    SUBCASE("beta scales the argument linearly") {
        auto a = idpo_loss(model, batch, t, ew, el, 10.0, 0.5, s).preference_argument;
        auto b = idpo_loss(model, batch, t, ew, el, 500.0, 0.5, s).preference_argument;
        CHECK(torch::allclose(b, 50.0 * a, 1e-10, 0.0));
    }
    SUBCASE("swapping winner and loser negates the argument") {
        PreferenceBatch swapped{batch.z_c, batch.z0_l, batch.z0_w, batch.mask};
        auto a = idpo_loss(model, batch, t, ew, el, 10.0, 0.5, s);
        auto b = idpo_loss(model, swapped, t, el, ew, 10.0, 0.5, s);
        CHECK(torch::allclose(b.preference_argument, -a.preference_argument, 1e-10, 1e-12));
        CHECK(b.consistency.item<double>() == doctest::Approx(a.consistency.item<double>()).epsilon(1e-12));
    }
    SUBCASE("mask decomposition of the P terms") {
        auto ones = batch;
        ones.mask = torch::ones_like(batch.mask);
        auto comp = batch;
        comp.mask = 1.0 - batch.mask;
        auto a = idpo_loss(model, batch, t, ew, el, 10.0, 0.5, s);
        auto b = idpo_loss(model, comp, t, ew, el, 10.0, 0.5, s);
        auto c = idpo_loss(model, ones, t, ew, el, 10.0, 0.5, s);
        CHECK(((a.p_w + b.p_w) - c.p_w).abs().max().item<double>() <= 1e-9);
        CHECK(((a.p_l + b.p_l) - c.p_l).abs().max().item<double>() <= 1e-9);
    }
}

TEST_CASE("contrastive hinge") {
    auto h = [](double w, double l, double m) {
        return contrastive_hinge(torch::tensor({w}), torch::tensor({l}), m).item<double>();
    };
    CHECK(h(1.0, 1.0, 0.0) == 0.0);
    CHECK(h(0.0, 2.0, 1.0) == 0.0);
    CHECK(h(1.5, 1.0, 1.0) == doctest::Approx(1.5));

    auto ref = testing::tiny_denoiser(4);
    CoupledModel model(ref);
    auto s = diffusion::NoiseSchedule::linear(100);
    auto batch = random_batch(2, 60);
    auto t = torch::tensor({10, 40}, torch::kLong);
    auto ew = randn_seeded({2, 4, 8, 8}, 61), el = randn_seeded({2, 4, 8, 8}, 62);
    // margin large enough that no sample clamps: the loss is linear in the margin
    auto l1 = contrastive_loss_baseline(model, batch, t, ew, el, 1e4, s).item<double>();
    auto l2 = contrastive_loss_baseline(model, batch, t, ew, el, 2e4, s).item<double>();
    CHECK(l2 - l1 == doctest::Approx(1e4).epsilon(1e-9));
}

TEST_CASE("fine-tuning keeps the reference frozen and starts at ln 2") {
    auto ref = testing::tiny_denoiser(5, torch::kFloat32);
    const auto before = checkpoint::state_hash(*ref);
    auto s = diffusion::NoiseSchedule::linear(50);
    auto batch = random_batch(6, 70).to(torch::kFloat32);
    FinetuneConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 4;
    cfg.learning_rate = 1e-3;
    cfg.seed = 1;
    auto result = finetune(ref, batch, s, cfg);
    CHECK(result.steps == 6);
    CHECK(result.step0_preference == doctest::Approx(std::log(2.0)).epsilon(1e-5));
    CHECK(checkpoint::state_hash(*ref) == before);
    CHECK(checkpoint::state_hash(*result.model->reference) == before);
    CHECK(result.model->zero_proj->weight.abs().sum().item<double>() > 0.0);

    auto again = finetune(ref, batch, s, cfg);
    CHECK(again.losses == result.losses);

    cfg.loss = LossKind::Contrast;
    CHECK(finetune(ref, batch, s, cfg).steps == 6);
    cfg.loss = LossKind::Dpo;
    cfg.max_steps = 2;
    CHECK(finetune(ref, batch, s, cfg).steps == 2);
}

TEST_CASE("fine-tuning errors") {
    auto ref = testing::tiny_denoiser(6, torch::kFloat32);
    auto s = diffusion::NoiseSchedule::linear(50);
    FinetuneConfig cfg;
    try {
        finetune(ref, PreferenceBatch{}, s, cfg);
        FAIL("expected EmptyDataset");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::EmptyDataset);
    }

    // a huge step size blows the consistency term up; the guard must trip
    auto batch = random_batch(4, 80).to(torch::kFloat32);
    cfg.loss = LossKind::Idpo;
    cfg.mu = 1.0;
    cfg.learning_rate = 10.0;
    cfg.epochs = 400;
    cfg.batch_size = 4;
    cfg.divergence_factor = 2.0;
    cfg.divergence_patience = 3;
    try {
        finetune(ref, batch, s, cfg);
        FAIL("expected Diverged");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::Diverged);
    }

    CHECK(loss_kind_from_string("dpo") == LossKind::Dpo);
    CHECK(to_string(LossKind::Contrast) == "contrast");
    CHECK_THROWS_AS(loss_kind_from_string("ppo"), Error);
}

TEST_CASE("preference fusion equals the reference before training") {
    auto ref = testing::tiny_denoiser(7, torch::kFloat32);
    CoupledModel model(ref);
    auto s = diffusion::NoiseSchedule::linear(30);
    LatentCodec codec(CodecKind{CodecVariant::Patchify, 2, 1});
    ImagePair pair{"x", testing::random_image(8, 8, 1, 1), testing::random_image(8, 8, 1, 2), std::nullopt};
    auto fused = fuse_with_preference(model, codec, pair, s, 10, 123);
    auto plain = paldm::generate_candidates(ref, codec, pair, {paldm::PropertyPrompt::general(5)}, s, 10, 123);
    CHECK(fused.data == plain.front().data);
    CHECK(fuse_with_preference(model, codec, pair, s, 10, 123).data == fused.data);
}
