// Copyright (C) 2026 The fusionpref Authors
// SPDX-License-Identifier: Apache-2.0

#include <torch/torch.h>

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "fusionpref/checkpoint.hpp"
#include "fusionpref/codec.hpp"
#include "fusionpref/diffusion.hpp"
#include "fusionpref/error.hpp"
#include "fusionpref/log.hpp"
#include "fusionpref/metrics.hpp"
#include "fusionpref/paldm.hpp"
#include "fusionpref/pcldm.hpp"
#include "fusionpref/pipeline.hpp"
#include "fusionpref/prior_fusion.hpp"
#include "fusionpref/tensor_bridge.hpp"
#include "metric_oracles.hpp"
#include "test_support.hpp"
#include "tiny_models.hpp"

using namespace fusionpref;
using testing::randn_seeded;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

void perturb(pcldm::CoupledModel& model, std::uint64_t seed) {
    torch::NoGradGuard no_grad;
    auto gen = make_generator(seed);
    for (auto& p : model->trainable_parameters()) p.add_(0.05 * torch::randn(p.sizes(), gen, p.options()));
}

pcldm::PreferenceBatch random_batch(int64_t b, std::uint64_t seed, torch::Dtype dtype = torch::kFloat64) {
    return {randn_seeded({b, 8, 8, 8}, seed, dtype), randn_seeded({b, 4, 8, 8}, seed + 1, dtype),
            randn_seeded({b, 4, 8, 8}, seed + 2, dtype), (randn_seeded({b, 1, 8, 8}, seed + 3, dtype) > 0).to(dtype)};
}

Verdict a1_identity() {
    const auto start = Clock::now();
    auto ref = testing::tiny_denoiser(101, torch::kFloat32);
    pcldm::CoupledModel model(ref);
    torch::NoGradGuard no_grad;
    int equal = 0;
    for (int i = 0; i < 100; ++i) {
        auto z_t = randn_seeded({1, 4, 8, 8}, 1000 + i, torch::kFloat32);
        auto z_c = randn_seeded({1, 8, 8, 8}, 2000 + i, torch::kFloat32);
        auto t = torch::tensor({(i * 37) % 200}, torch::kLong);
        auto ids = torch::full({1}, model->general_prompt, torch::kLong);
        auto expected = ref->forward(z_t, t, z_c, ids);
        if (torch::equal(model->forward(z_t, t, z_c), expected)) ++equal;
    }
    const double secs = seconds_since(start);
    return {equal == 100 && secs < 10.0, fmt("%d/100 bitwise equal, %.2fs", equal, secs)};
}

Verdict a2_dpo_reduction() {
    auto ref = testing::tiny_denoiser(102);
    pcldm::CoupledModel model(ref);
    perturb(model, 7);
    auto s = diffusion::NoiseSchedule::linear(200);
    auto batch = random_batch(50, 300);
    batch.mask = torch::ones_like(batch.mask);
    auto gen = make_generator(5);
    auto t = torch::randint(200, {50}, gen, torch::kLong);
    auto ew = randn_seeded(shape_of(batch.z0_w), 11), el = randn_seeded(shape_of(batch.z0_w), 12);
    torch::NoGradGuard no_grad;
    auto idpo = pcldm::idpo_loss(model, batch, t, ew, el, 10.0, 0.0, s);
    auto dpo = pcldm::dpo_loss_baseline(model, batch, t, ew, el, 10.0, s);
    const double per_record = (idpo.preference_argument - dpo.preference_argument).abs().max().item<double>();
    const double total = std::abs(idpo.total.item<double>() - dpo.total.item<double>());
    const double worst = std::max(per_record, total);
    return {worst <= 1e-9, fmt("50 records, max |idpo - dpo| = %.3g", worst)};
}

Verdict a3_ln2() {
    auto ref = testing::tiny_denoiser(103, torch::kFloat32);
    auto batch = random_batch(16, 400, torch::kFloat32);
    pcldm::FinetuneConfig cfg;
    cfg.max_steps = 1;
    cfg.batch_size = 8;
    cfg.seed = 3;
    auto s = diffusion::NoiseSchedule::linear(200);
    auto result = pcldm::finetune(ref, batch, s, cfg);
    const double err = std::abs(result.step0_preference - std::log(2.0));
    return {err <= 1e-5, fmt("step-0 preference %.8f, |diff from ln 2| = %.3g", result.step0_preference, err)};
}

Verdict a4_gradients() {
    const auto start = Clock::now();
    std::ostringstream detail;
    bool ok = true;
    auto record = [&](const char* name, const testing::GradCheck& c) {
        detail << name << " " << c.within << "/" << c.sampled << "; ";
        ok = ok && c.fraction() >= 0.95;
    };
    {
        auto ir = randn_seeded({1, 1, 12, 12}, 1).sigmoid(), vis = randn_seeded({1, 1, 12, 12}, 2).sigmoid();
        auto fused = randn_seeded({1, 1, 12, 12}, 3).sigmoid().requires_grad_(true);
        record("fusion", testing::finite_difference_check([&] { return prior::fusion_loss(ir, vis, fused); }, {fused},
                                                          100, 4));
    }
    {
        auto model = testing::tiny_denoiser(104);
        auto s = diffusion::NoiseSchedule::linear(50);
        auto z0 = randn_seeded({2, 4, 4, 4}, 5), z_c = randn_seeded({2, 8, 4, 4}, 6), eps = randn_seeded({2, 4, 4, 4}, 7);
        auto t = torch::tensor({4, 33}, torch::kLong);
        auto ids = torch::tensor({1, 5}, torch::kLong);
        auto pred = paldm::as_predictor(model);
        record("denoise", testing::finite_difference_check(
                              [&] { return paldm::denoise_loss(pred, z0, z_c, ids, t, eps, s); }, model->parameters(),
                              100, 8));
    }
    {
        auto ref = testing::tiny_denoiser(105);
        pcldm::CoupledModel model(ref);
        perturb(model, 9);
        auto s = diffusion::NoiseSchedule::linear(50);
        pcldm::PreferenceBatch batch{randn_seeded({2, 8, 4, 4}, 10), randn_seeded({2, 4, 4, 4}, 11),
                                     randn_seeded({2, 4, 4, 4}, 12),
                                     (randn_seeded({2, 1, 4, 4}, 13) > 0.3).to(torch::kFloat64)};
        auto t = torch::tensor({6, 30}, torch::kLong);
        auto ew = randn_seeded({2, 4, 4, 4}, 14), el = randn_seeded({2, 4, 4, 4}, 15);
        record("idpo", testing::finite_difference_check(
                           [&] { return pcldm::idpo_loss(model, batch, t, ew, el, 10.0, 0.5, s).total; },
                           model->trainable_parameters(), 100, 16));
    }
    const double secs = seconds_since(start);
    detail << fmt("%.1fs", secs);
    return {ok && secs < 300.0, detail.str()};
}

Verdict a5_additivity() {
    double worst = 0.0;
    for (int i = 0; i < 50; ++i) {
        auto gt = randn_seeded({1, 4, 8, 8}, 500 + i), th = randn_seeded({1, 4, 8, 8}, 600 + i),
             rf = randn_seeded({1, 4, 8, 8}, 700 + i);
        auto m = (randn_seeded({8, 8}, 800 + i) > 0).to(torch::kFloat64);
        auto split = pcldm::p_terms(gt, th, rf, m) + pcldm::p_terms(gt, th, rf, 1.0 - m);
        auto whole = pcldm::p_terms(gt, th, rf, torch::ones_like(m));
        worst = std::max(worst, (split - whole).abs().max().item<double>());
    }
    return {worst <= 1e-9, fmt("50 cases, max |P(m) + P(1-m) - P(1)| = %.3g", worst)};
}

Verdict a6_interpolation() {
    const int64_t N = 5;
    auto ir = randn_seeded({2, 16, 8, 8}, 1), vis = randn_seeded({2, 16, 8, 8}, 2), fu = randn_seeded({2, 16, 8, 8}, 3);
    const double e0 = (paldm::interpolate_latent(ir, vis, fu, 0, N) - (0.5 * vis + 0.5 * fu)).abs().max().item<double>();
    const double e1 =
        (paldm::interpolate_latent(ir, vis, fu, N - 1, N) - (0.5 * ir + 0.5 * fu)).abs().max().item<double>();
    double collapse = 0.0;
    for (int64_t k = 0; k < N; ++k)
        collapse = std::max(collapse, (paldm::interpolate_latent(ir, ir, ir, k, N) - ir).abs().max().item<double>());
    const double worst = std::max({e0, e1, collapse});
    return {worst <= 1e-7, fmt("k=0 %.3g, k=N-1 %.3g, collapse %.3g", e0, e1, collapse)};
}

Verdict a7_codec() {
    int exact = 0;
    LatentCodec gray(CodecKind{CodecVariant::Patchify, 4, 1});
    LatentCodec rgb(CodecKind{CodecVariant::Patchify, 4, 3});
    for (int i = 0; i < 100; ++i) {
        const int c = i % 2 ? 3 : 1;
        const int size = 16 * (1 + i % 4);
        auto img = to_tensor(testing::random_image(size, size + 8 * (i % 3), c, 900 + i), torch::kFloat64);
        const auto& codec = c == 3 ? rgb : gray;
        if (torch::equal(codec.decode(codec.encode(img)), img)) ++exact;
    }
    return {exact == 100, fmt("%d/100 exact round trips", exact)};
}

Verdict a8_forward_stats() {
    const int64_t T = 200;
    auto s = diffusion::NoiseSchedule::linear(T);
    auto z0 = randn_seeded({2000, 1, 8, 8}, 21);
    const double n = static_cast<double>(z0.numel());
    bool ok = true;
    std::ostringstream detail;
    for (int64_t t : {int64_t{1}, T / 2, T - 1}) {
        auto eps = randn_seeded(shape_of(z0), 22 + t);
        auto z_t = diffusion::q_sample(z0, t, eps, s).z_t;
        const double ab = s.alpha_bar(t);
        auto resid = z_t - std::sqrt(ab) * z0;
        const double mean = resid.mean().item<double>();
        const double var = resid.var().item<double>();
        const double mean_se = std::sqrt((1.0 - ab) / n);
        const double var_se = (1.0 - ab) * std::sqrt(2.0 / (n - 1.0));
        const double zm = std::abs(mean) / mean_se, zv = std::abs(var - (1.0 - ab)) / var_se;
        ok = ok && zm <= 3.0 && zv <= 3.0;
        detail << fmt("t=%lld mean %.2f SE, var %.2f SE; ", static_cast<long long>(t), zm, zv);
    }
    return {ok, detail.str()};
}

Verdict a9_metrics() {
    using namespace metrics;
    double worst = 0.0, worst_sd = 0.0;
    for (int i = 0; i < 50; ++i) {
        auto g = testing::random_gray(32, 32, 1000 + i), a = testing::random_gray(32, 32, 2000 + i),
             b = testing::random_gray(32, 32, 3000 + i);
        worst = std::max({worst, std::abs(entropy_en(g) - testing::naive::en(g)),
                          std::abs(average_gradient_ag(g) - testing::naive::ag(g)),
                          std::abs(spatial_frequency_sf(g) - testing::naive::sf(g)),
                          std::abs(scd(g, a, b) - testing::naive::scd(g, a, b))});
        worst_sd = std::max(worst_sd, std::abs(standard_deviation_sd(g) - testing::naive::sd(g)));
    }
    GrayImage ramp(16, 16);
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) ramp.at(y, x) = x;
    const double ag_err = std::abs(average_gradient_ag(ramp) - std::sqrt(0.5));
    GrayImage half(16, 16);
    for (int y = 0; y < 16; ++y)
        for (int x = 8; x < 16; ++x) half.at(y, x) = 255;
    const double en = entropy_en(half);
    return {worst <= 1e-9 && worst_sd <= 1e-6 && ag_err <= 1e-6 && en == 1.0,
            fmt("oracle worst %.3g (SD %.3g), ramp AG err %.3g, half EN %.17g", worst, worst_sd, ag_err, en)};
}

// ---- toy end-to-end run ------------------------------------------------

RunConfig toy_config(const fs::path& run_dir, std::uint64_t seed) {
    RunConfig c;
    c.seed = seed;
    c.paths.run_dir = run_dir.string();
    return c;
}

double summary_value(const pipeline::StageResult& r, const char* key) {
    return r.record.at("summary").at(key).get<double>();
}

Verdict a10_toy(const RunConfig& c) {
    const auto start = Clock::now();
    std::ostringstream detail;
    pipeline::make_corpus(c);
    auto lfm = pipeline::train_lfm(c);
    auto paldm = pipeline::train_paldm(c);
    auto cands = pipeline::generate_candidates(c);
    pipeline::autopref(c, "sd");
    pipeline::finetune(c, pcldm::LossKind::Idpo);
    pipeline::finetune(c, pcldm::LossKind::Dpo);
    pipeline::Layout layout(c);
    for (const char* m : {"reference", "idpo", "dpo"}) pipeline::fuse(c, m);
    auto ev_ref = pipeline::eval(c, layout.fused("reference"), std::nullopt);
    auto ev_idpo = pipeline::eval(c, layout.fused("idpo"), layout.fused("reference"));
    auto ev_dpo = pipeline::eval(c, layout.fused("dpo"), layout.fused("reference"));

    const double lfm_red = summary_value(lfm, "reduction");
    const double paldm_red = summary_value(paldm, "reduction");
    const int per_pair = cands.record.at("summary").at("candidates_per_pair").get<int>();
    const double ref_sd = summary_value(ev_ref, "target_sd");
    const double idpo_gain = summary_value(ev_idpo, "target_sd") / ref_sd;
    const double idpo_mad = summary_value(ev_idpo, "off_target_mad");
    const double dpo_gain = summary_value(ev_dpo, "target_sd") / ref_sd;
    const double dpo_mad = summary_value(ev_dpo, "off_target_mad");
    const bool dpo_worse = dpo_mad > 0.02 || dpo_gain < idpo_gain;
    const bool pass = lfm_red >= 10.0 && paldm_red >= 5.0 && per_pair == 6 && idpo_gain >= 1.2 && idpo_mad <= 0.02;
    detail << fmt("lfm %.1fx, paldm %.1fx, %d candidates; idpo sd gain %.3fx (need 1.2), off-mask MAD %.4f; "
                  "dpo gain %.3fx, MAD %.4f (%s); %.0fs",
                  lfm_red, paldm_red, per_pair, idpo_gain, idpo_mad, dpo_gain, dpo_mad,
                  dpo_worse ? "dpo worse" : "dpo not worse", seconds_since(start));
    return {pass, detail.str()};
}

Verdict a11_empty_mask(const RunConfig& c) {
    pipeline::Layout layout(c);
    auto reference = checkpoint::load_denoiser(layout.paldm / "denoiser.ckpt");
    auto codec = checkpoint::load_codec(layout.lfm / "codec.ckpt");
    const auto sched = pipeline::schedule(c);
    auto records = preference::load_manifest(layout.manifest);
    auto data = pipeline::preference_batch(records, layout.manifest.parent_path(), codec);
    data.mask = torch::zeros_like(data.mask);

    pcldm::CoupledModel probe(reference);
    perturb(probe, 77);
    auto first = data.select(torch::arange(std::min<int64_t>(8, data.size())));
    auto gen = make_generator(5);
    auto t = torch::randint(sched.steps(), {first.size()}, gen, torch::kLong);
    auto ew = torch::randn(first.z0_w.sizes(), gen, first.z0_w.options());
    auto el = torch::randn(first.z0_w.sizes(), gen, first.z0_w.options());
    auto terms = pcldm::idpo_loss(probe, first, t, ew, el, c.finetune.beta, c.finetune.mu, sched);
    auto params = probe->trainable_parameters();
    auto grads = torch::autograd::grad({terms.preference}, params, {}, false, false, true);
    double sq = 0.0;
    for (auto& g : grads)
        if (g.defined()) sq += g.pow(2).sum().item<double>();
    const double grad_norm = std::sqrt(sq);

    pcldm::FinetuneConfig cfg;
    cfg.loss = pcldm::LossKind::Idpo;
    cfg.beta = c.finetune.beta;
    cfg.mu = c.finetune.mu;
    cfg.learning_rate = c.finetune.learning_rate;
    cfg.batch_size = c.finetune.batch_size;
    cfg.epochs = 1000;
    cfg.max_steps = 100;
    cfg.seed = c.require_seed() + 3;
    auto tuned = pcldm::finetune(reference, data, sched, cfg);
    pcldm::CoupledModel fresh(reference);

    auto part = pipeline::partition_corpus(c, load_corpus(layout.corpus));
    double drift = 0.0;
    const size_t n = std::min<size_t>(5, part.test.size());
    for (size_t i = 0; i < n; ++i) {
        const auto& pair = part.test[i];
        const auto seed = pipeline::pair_seed(c.require_seed(), pair.id);
        auto a = pcldm::fuse_with_preference(tuned.model, codec, pair, sched, c.schedule.sampling_steps, seed);
        auto b = pcldm::fuse_with_preference(fresh, codec, pair, sched, c.schedule.sampling_steps, seed);
        double sum = 0.0;
        for (size_t k = 0; k < a.data.size(); ++k) sum += std::abs(a.data[k] - b.data[k]);
        drift += sum / static_cast<double>(a.data.size());
    }
    drift /= static_cast<double>(n);
    return {grad_norm <= 1e-7 && drift <= 0.005 && tuned.steps == 100,
            fmt("preference grad norm %.3g, %lld steps, drift MAE %.5f over %zu held-out pairs", grad_norm,
                static_cast<long long>(tuned.steps), drift, n)};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria"};
    std::string run_dir = "toy_run";
    std::uint64_t seed = 7;
    app.add_option("--run-dir", run_dir, "Run directory for the toy end-to-end criteria")->capture_default_str();
    app.add_option("--seed", seed, "Seed for the toy run")->capture_default_str();
    CLI11_PARSE(app, argc, argv);
    log::set_level(log::level_from_string("warn"));
    torch::set_num_threads(1);

    int failed = 0;
    auto report = [&](const char* id, const std::function<Verdict()>& fn) {
        Verdict v;
        try {
            v = fn();
        } catch (const std::exception& e) {
            v = {false, std::string("error: ") + e.what()};
        }
        if (!v.pass) ++failed;
        std::printf("%s %s  %s\n", id, v.pass ? "PASS" : "FAIL", v.detail.c_str());
        std::fflush(stdout);
    };

    report("A1", a1_identity);
    report("A2", a2_dpo_reduction);
    report("A3", a3_ln2);
    report("A4", a4_gradients);
    report("A5", a5_additivity);
    report("A6", a6_interpolation);
    report("A7", a7_codec);
    report("A8", a8_forward_stats);
    report("A9", a9_metrics);
    const auto config = toy_config(run_dir, seed);
    report("A10", [&] { return a10_toy(config); });
    report("A11", [&] { return a11_empty_mask(config); });
    std::printf("%d of 11 criteria failed\n", failed);
    return failed == 0 ? 0 : 1;
}
