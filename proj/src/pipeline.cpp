// Copyright (C) 2026 The fusionpref Authors
// SPDX-License-Identifier: Apache-2.0

#include "fusionpref/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>

#include "fusionpref/candidate_index.hpp"
#include "fusionpref/checkpoint.hpp"
#include "fusionpref/error.hpp"
#include "fusionpref/hashing.hpp"
#include "fusionpref/log.hpp"
#include "fusionpref/metrics.hpp"
#include "fusionpref/paldm.hpp"
#include "fusionpref/prior_fusion.hpp"
#include "fusionpref/tensor_bridge.hpp"

namespace fusionpref::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

Layout::Layout(const RunConfig& c) {
    run_dir = c.paths.run_dir;
    corpus = c.paths.corpus.empty() ? run_dir / "corpus" : fs::path(c.paths.corpus);
    lfm = run_dir / "lfm";
    paldm = run_dir / "paldm";
    candidates = c.paths.candidates.empty() ? run_dir / "candidates" : fs::path(c.paths.candidates);
    manifest = c.paths.manifest.empty() ? candidates / "manifest.jsonl" : fs::path(c.paths.manifest);
}

diffusion::NoiseSchedule schedule(const RunConfig& c) {
    return diffusion::NoiseSchedule::linear(c.schedule.steps, c.schedule.beta_start, c.schedule.beta_end);
}

std::uint64_t pair_seed(std::uint64_t seed, const std::string& pair_id) { return seed ^ fnv1a64(pair_id); }

Partition partition_corpus(const RunConfig& c, std::vector<ImagePair> corpus) {
    Partition out;
    if (c.corpus.holdout <= 0 || corpus.size() < 2) {
        out.train = std::move(corpus);
        return out;
    }
    const double fraction = static_cast<double>(c.corpus.holdout) / static_cast<double>(corpus.size());
    auto split = split_corpus(corpus.size(), fraction, c.require_seed() ^ 0x5eedULL);
    std::sort(split.train.begin(), split.train.end());
    std::sort(split.validation.begin(), split.validation.end());
    for (auto i : split.train) out.train.push_back(corpus[i]);
    for (auto i : split.validation) out.test.push_back(corpus[i]);
    return out;
}

std::string hash_tree(const fs::path& dir) {
    std::vector<std::string> lines;
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
        if (!entry.is_regular_file() || entry.path().filename() == "run.json") continue;
        lines.push_back(fs::relative(entry.path(), dir).generic_string() + ":" + sha256_file(entry.path()));
    }
    std::sort(lines.begin(), lines.end());
    std::string all;
    for (const auto& l : lines) all += l + "\n";
    return sha256_hex(all);
}

namespace {

struct Stage {
    std::string name;
    fs::path dir;
    json config;
    json inputs = json::object();
};

std::string config_hash(const Stage& s) { return sha256_hex(s.config.dump()); }

std::optional<json> completed(const Stage& s) {
    const fs::path path = s.dir / "run.json";
    if (!fs::exists(path)) return std::nullopt;
    json run;
    try {
        std::ifstream in(path);
        run = json::parse(in);
    } catch (const json::exception&) {
        return std::nullopt;
    }
    if (run.value("config_hash", "") != config_hash(s) || run.value("inputs", json()) != s.inputs) return std::nullopt;
    const json outputs = run.value("outputs", json::object());
    for (const auto& [rel, hash] : outputs.items()) {
        const fs::path p = s.dir / rel;
        if (!fs::exists(p) || sha256_file(p) != hash.get<std::string>()) return std::nullopt;
    }
    return run;
}

StageResult finish(const Stage& s, const std::vector<fs::path>& produced, json summary) {
    json outputs = json::object();
    for (const auto& p : produced) outputs[fs::relative(p, s.dir).generic_string()] = sha256_file(p);
    json run{{"stage", s.name},
             {"version", RunConfig::kVersion},
             {"config", s.config},
             {"config_hash", config_hash(s)},
             {"inputs", s.inputs},
             {"outputs", outputs},
             {"summary", std::move(summary)}};
    fs::create_directories(s.dir);
    std::ofstream out(s.dir / "run.json");
    out << run.dump(2) << '\n';
    require(static_cast<bool>(out), ErrorCode::Io, "cannot write " + (s.dir / "run.json").string());
    return {false, s.dir, run};
}

std::optional<StageResult> resume(const Stage& s, StageFlags flags) {
    if (flags.force) return std::nullopt;
    if (auto run = completed(s)) {
        log::info(s.name, ": up to date in ", s.dir.string(), " (use --force to rerun)");
        return StageResult{true, s.dir, *run};
    }
    return std::nullopt;
}

void need(const fs::path& path, const std::string& producer) {
    require(fs::exists(path), ErrorCode::MissingDependency,
            "missing " + path.string() + "; produce it with `" + producer + "`");
}

std::vector<ImagePair> corpus_or_fail(const Layout& layout) {
    need(layout.corpus, "make-corpus");
    auto corpus = load_corpus(layout.corpus);
    require(!corpus.empty(), ErrorCode::EmptyDataset, "corpus " + layout.corpus.string() + " holds no pairs");
    return corpus;
}

json seed_section(const RunConfig& c) { return {{"seed", c.require_seed()}}; }

json section(const RunConfig& c, const char* name) { return c.to_json().at(name); }

void write_image(const fs::path& path, const Image& image, std::vector<fs::path>& produced) {
    write_png(path, image);
    produced.push_back(path);
}

paldm::Denoiser load_reference(const Layout& layout) {
    need(layout.paldm / "denoiser.ckpt", "train-paldm");
    return checkpoint::load_denoiser(layout.paldm / "denoiser.ckpt");
}

LatentCodec load_codec(const Layout& layout) {
    need(layout.lfm / "codec.ckpt", "train-lfm");
    return checkpoint::load_codec(layout.lfm / "codec.ckpt");
}

}  // namespace

StageResult make_corpus(const RunConfig& c, StageFlags flags) {
    c.validate();
    Layout layout(c);
    Stage s{"make-corpus", layout.corpus, {{"seed", c.require_seed()}, {"corpus", section(c, "corpus")}}};
    if (auto done = resume(s, flags)) return *done;
    if (fs::exists(layout.corpus)) fs::remove_all(layout.corpus);
    make_synthetic_corpus(layout.corpus, {c.corpus.count, c.corpus.size, c.require_seed()});
    std::vector<fs::path> produced;
    for (const auto& entry : fs::recursive_directory_iterator(layout.corpus))
        if (entry.is_regular_file()) produced.push_back(entry.path());
    std::sort(produced.begin(), produced.end());
    return finish(s, produced, {{"pairs", c.corpus.count}, {"size", c.corpus.size}});
}

StageResult train_lfm(const RunConfig& c, StageFlags flags) {
    c.validate();
    Layout layout(c);
    auto corpus = corpus_or_fail(layout);
    Stage s{"train-lfm", layout.lfm,
            {{"seed", c.require_seed()}, {"codec", section(c, "codec")}, {"lfm", section(c, "lfm")},
             {"holdout", c.corpus.holdout}},
            {{"corpus", hash_tree(layout.corpus)}}};
    if (auto done = resume(s, flags)) return *done;

    const auto part = partition_corpus(c, corpus);
    CodecKind kind{codec_variant_from_string(c.codec.variant), c.codec.factor, c.codec.image_channels};
    LatentCodec codec(CodecKind{CodecVariant::Patchify, kind.factor, kind.image_channels});
    json summary;
    if (kind.variant == CodecVariant::TinyAutoencoder) {
        std::vector<Image> images;
        for (const auto& p : part.train) {
            images.push_back(p.ir);
            images.push_back(p.vis);
        }
        auto stack = stack_images(images);
        AutoencoderTrainConfig ae{c.codec.autoencoder_steps, 16, 2e-3, c.require_seed() + 11};
        auto trained = train_autoencoder(stack, kind, ae);
        codec = trained.codec;
        summary["autoencoder_mae"] = reconstruction_mae(codec, stack);
    }

    prior::PriorTrainConfig cfg;
    cfg.steps = c.lfm.steps;
    cfg.batch_size = c.lfm.batch_size;
    cfg.learning_rate = c.lfm.learning_rate;
    cfg.sigma1 = c.lfm.sigma1;
    cfg.sigma2 = c.lfm.sigma2;
    cfg.seed = c.require_seed() + 1;
    cfg.model = {codec.kind().latent_channels(), c.lfm.width, c.lfm.blocks};
    auto result = prior::train_prior(part.train, codec, cfg);
    summary["initial_validation_loss"] = result.initial_validation_loss;
    summary["best_validation_loss"] = result.best_validation_loss;
    summary["reduction"] = result.initial_validation_loss / std::max(result.best_validation_loss, 1e-12);
    summary["converged"] = result.converged;

    fs::create_directories(layout.lfm);
    checkpoint::save_codec(layout.lfm / "codec.ckpt", codec);
    checkpoint::save_prior(layout.lfm / "prior.ckpt", result.model, summary);
    return finish(s, {layout.lfm / "codec.ckpt", layout.lfm / "prior.ckpt"}, summary);
}

StageResult train_paldm(const RunConfig& c, StageFlags flags) {
    c.validate();
    Layout layout(c);
    auto corpus = corpus_or_fail(layout);
    need(layout.lfm / "prior.ckpt", "train-lfm");
    Stage s{"train-paldm", layout.paldm,
            {{"seed", c.require_seed()}, {"schedule", section(c, "schedule")}, {"paldm", section(c, "paldm")},
             {"holdout", c.corpus.holdout}},
            {{"corpus", hash_tree(layout.corpus)},
             {"prior", sha256_file(layout.lfm / "prior.ckpt")},
             {"codec", sha256_file(layout.lfm / "codec.ckpt")}}};
    if (auto done = resume(s, flags)) return *done;

    auto codec = load_codec(layout);
    auto prior_net = checkpoint::load_prior(layout.lfm / "prior.ckpt");
    const auto part = partition_corpus(c, corpus);
    paldm::PaldmTrainConfig cfg;
    cfg.steps = c.paldm.steps;
    cfg.batch_size = c.paldm.batch_size;
    cfg.learning_rate = c.paldm.learning_rate;
    cfg.lambda = c.paldm.lambda;
    cfg.levels = c.paldm.levels;
    cfg.eval_every = c.paldm.eval_every;
    cfg.seed = c.require_seed() + 2;
    cfg.model.base_width = c.paldm.base_width;
    cfg.model.channel_mults = c.paldm.channel_mults;
    cfg.model.time_dim = c.paldm.time_dim;
    cfg.model.prompt_dim = c.paldm.prompt_dim;
    cfg.model.attention_dim = c.paldm.attention_dim;
    cfg.model.groups = c.paldm.groups;
    auto result = paldm::train_paldm(prior_net, codec, part.train, schedule(c), cfg);

    json summary{{"initial_validation_loss", result.initial_validation_loss},
                 {"best_validation_loss", result.best_validation_loss},
                 {"final_validation_loss", result.final_validation_loss},
                 {"best_step", result.best_step},
                 {"reduction", result.initial_validation_loss / std::max(result.best_validation_loss, 1e-12)},
                 {"converged", result.converged}};
    fs::create_directories(layout.paldm);
    checkpoint::save_denoiser(layout.paldm / "denoiser.ckpt", result.model, summary);
    return finish(s, {layout.paldm / "denoiser.ckpt"}, summary);
}

StageResult generate_candidates(const RunConfig& c, StageFlags flags) {
    c.validate();
    Layout layout(c);
    auto corpus = corpus_or_fail(layout);
    need(layout.paldm / "denoiser.ckpt", "train-paldm");
    Stage s{"generate-candidates", layout.candidates,
            {{"seed", c.require_seed()}, {"schedule", section(c, "schedule")}, {"levels", c.paldm.levels},
             {"holdout", c.corpus.holdout}},
            {{"corpus", hash_tree(layout.corpus)},
             {"denoiser", sha256_file(layout.paldm / "denoiser.ckpt")},
             {"codec", sha256_file(layout.lfm / "codec.ckpt")}}};
    if (auto done = resume(s, flags)) return *done;

    auto model = load_reference(layout);
    auto codec = load_codec(layout);
    const auto sched = schedule(c);
    const int64_t levels = model->options.num_prompts - 1;
    const auto prompts = paldm::default_prompt_set(levels);
    const auto part = partition_corpus(c, corpus);

    fs::create_directories(layout.candidates);
    CandidateIndex index;
    index.levels = levels;
    std::vector<fs::path> produced;
    for (const auto& pair : part.train) {
        const fs::path dir = layout.candidates / pair.id;
        fs::create_directories(dir);
        CandidateIndex::Entry entry{pair.id, pair.id + "/ir.png", pair.id + "/vis.png", std::nullopt, {}};
        write_image(dir / "ir.png", pair.ir, produced);
        write_image(dir / "vis.png", pair.vis, produced);
        if (pair.target) {
            entry.target_path = pair.id + "/target.png";
            write_image(dir / "target.png", *pair.target, produced);
        }
        auto images = paldm::generate_candidates(model, codec, pair, prompts, sched, c.schedule.sampling_steps,
                                                 pair_seed(c.require_seed(), pair.id));
        for (size_t i = 0; i < images.size(); ++i) {
            const std::string rel = pair.id + "/cand_" + prompts[i].label() + ".png";
            write_image(layout.candidates / rel, images[i], produced);
            entry.candidates.push_back({i, prompts[i].label(), prompts[i].token_id(), rel});
        }
        index.pairs.push_back(std::move(entry));
    }
    index.save(layout.candidates);
    produced.push_back(layout.candidates / kCandidateIndexFile);
    return finish(s, produced, {{"pairs", index.pairs.size()}, {"candidates_per_pair", prompts.size()}});
}

StageResult autopref(const RunConfig& c, const std::string& scorer_name, StageFlags) {
    c.validate();
    Layout layout(c);
    const auto index = CandidateIndex::load(layout.candidates);
    const auto scorer = preference::find_scorer(scorer_name);
    preference::PreferenceStore store(layout.manifest);
    std::set<std::string> present;
    for (const auto& r : store.load(false)) present.insert(r.pair_id);

    size_t added = 0, warnings = 0;
    for (const auto& e : index.pairs) {
        if (present.count(e.pair_id)) continue;
        preference::CandidateSet set{e.pair_id, layout.candidates / e.ir_path, layout.candidates / e.vis_path, {}};
        for (const auto& cand : e.candidates) set.candidates.push_back(layout.candidates / cand.path);
        auto collected = e.target_path
                             ? store.collect_in_region(set, scorer, binarize(read_png(layout.candidates / *e.target_path)))
                             : store.collect_global(set, scorer);
        warnings += collected.warnings.size();
        ++added;
    }
    Stage s{"autopref", layout.run_dir / "autopref", {{"scorer", scorer_name}},
            {{"index", sha256_file(layout.candidates / kCandidateIndexFile)}}};
    return finish(s, {}, {{"added", added}, {"already_present", present.size()}, {"warnings", warnings},
                          {"manifest", layout.manifest.string()}});
}

pcldm::PreferenceBatch preference_batch(const std::vector<preference::PreferenceRecord>& records,
                                        const fs::path& root, const LatentCodec& codec) {
    require(!records.empty(), ErrorCode::EmptyDataset, "no preference records");
    std::vector<torch::Tensor> zc, zw, zl, masks;
    for (const auto& r : records) {
        zc.push_back(concat_sources(codec.encode(read_png(root / r.ir_path)), codec.encode(read_png(root / r.vis_path))));
        zw.push_back(codec.encode(read_png(root / r.winner_path)));
        zl.push_back(codec.encode(read_png(root / r.loser_path)));
        masks.push_back(pcldm::downsample_mask(binarize(read_png(root / r.mask_path)), codec.kind().factor)
                            .values.unsqueeze(0));
    }
    return {torch::stack(zc), torch::stack(zw), torch::stack(zl), torch::stack(masks)};
}

StageResult finetune(const RunConfig& c, pcldm::LossKind loss, StageFlags flags) {
    c.validate();
    Layout layout(c);
    require(fs::exists(layout.manifest), ErrorCode::MissingDependency,
            "missing preference manifest " + layout.manifest.string() +
                " (manifest.jsonl); produce it with `autopref --scorer <name>` or `annotate-serve`");
    need(layout.paldm / "denoiser.ckpt", "train-paldm");
    const std::string name = pcldm::to_string(loss);
    Stage s{"finetune", layout.finetune(name),
            {{"seed", c.require_seed()}, {"loss", name}, {"schedule", section(c, "schedule")},
             {"finetune", section(c, "finetune")}},
            {{"manifest", sha256_file(layout.manifest)},
             {"denoiser", sha256_file(layout.paldm / "denoiser.ckpt")},
             {"codec", sha256_file(layout.lfm / "codec.ckpt")}}};
    if (auto done = resume(s, flags)) return *done;

    auto reference = load_reference(layout);
    auto codec = load_codec(layout);
    const auto records = preference::load_manifest(layout.manifest);
    auto batch = preference_batch(records, layout.manifest.parent_path(), codec);

    pcldm::FinetuneConfig cfg;
    cfg.loss = loss;
    cfg.epochs = c.finetune.epochs;
    cfg.batch_size = c.finetune.batch_size;
    cfg.learning_rate = c.finetune.learning_rate;
    cfg.beta = c.finetune.beta;
    cfg.mu = c.finetune.mu;
    cfg.margin = c.finetune.margin;
    cfg.divergence_factor = c.finetune.divergence_factor;
    cfg.divergence_patience = c.finetune.divergence_patience;
    cfg.seed = c.require_seed() + 3;
    auto result = pcldm::finetune(reference, batch, schedule(c), cfg);

    json summary{{"records", records.size()},
                 {"steps", result.steps},
                 {"step0_preference", result.step0_preference},
                 {"first_loss", result.losses.empty() ? 0.0 : result.losses.front()},
                 {"last_loss", result.losses.empty() ? 0.0 : result.losses.back()}};
    fs::create_directories(s.dir);
    checkpoint::save_coupled(s.dir / "coupled.ckpt", result.model, summary);
    return finish(s, {s.dir / "coupled.ckpt"}, summary);
}

StageResult fuse(const RunConfig& c, const std::string& model_name, StageFlags flags) {
    c.validate();
    Layout layout(c);
    auto corpus = corpus_or_fail(layout);
    need(layout.paldm / "denoiser.ckpt", "train-paldm");
    const bool reference_only = model_name == "reference";
    fs::path coupled_path;
    if (!reference_only) {
        coupled_path = layout.finetune(pcldm::to_string(pcldm::loss_kind_from_string(model_name))) / "coupled.ckpt";
        need(coupled_path, "finetune --loss " + model_name);
    }
    Stage s{"fuse", layout.fused(model_name),
            {{"seed", c.require_seed()}, {"model", model_name}, {"schedule", section(c, "schedule")},
             {"holdout", c.corpus.holdout}},
            {{"corpus", hash_tree(layout.corpus)},
             {"denoiser", sha256_file(layout.paldm / "denoiser.ckpt")},
             {"codec", sha256_file(layout.lfm / "codec.ckpt")}}};
    if (!reference_only) s.inputs["coupled"] = sha256_file(coupled_path);
    if (auto done = resume(s, flags)) return *done;

    auto reference = load_reference(layout);
    auto codec = load_codec(layout);
    const auto sched = schedule(c);
    auto part = partition_corpus(c, corpus);
    const auto& pairs = part.test.empty() ? part.train : part.test;
    std::optional<pcldm::CoupledModel> coupled;
    if (!reference_only) coupled = checkpoint::load_coupled(coupled_path, reference);
    const auto general = paldm::PropertyPrompt::general(reference->options.num_prompts - 1);

    fs::create_directories(s.dir);
    std::vector<fs::path> produced;
    for (const auto& pair : pairs) {
        const auto seed = pair_seed(c.require_seed(), pair.id);
        Image fused = coupled ? pcldm::fuse_with_preference(*coupled, codec, pair, sched, c.schedule.sampling_steps, seed)
                              : paldm::generate_candidates(reference, codec, pair, {general}, sched,
                                                           c.schedule.sampling_steps, seed)
                                    .front();
        write_image(s.dir / (pair.id + ".png"), fused, produced);
    }
    return finish(s, produced, {{"pairs", pairs.size()}});
}

StageResult eval(const RunConfig& c, const fs::path& input, const std::optional<fs::path>& reference,
                 StageFlags flags) {
    c.validate();
    Layout layout(c);
    require(fs::is_directory(input), ErrorCode::MissingFile, "eval input " + input.string() + " is not a directory");
    const std::string name = fs::absolute(input).lexically_normal().filename().string();
    Stage s{"eval", layout.eval() / name, {{"input", name}, {"reference", reference ? reference->string() : ""}},
            {{"input", hash_tree(input)}}};
    if (reference) s.inputs["reference"] = hash_tree(*reference);
    s.dir = layout.eval() / name;
    const fs::path csv = s.dir / "metrics.csv";
    if (auto done = resume(s, flags)) return *done;

    std::map<std::string, ImagePair> by_id;
    if (fs::exists(layout.corpus))
        for (auto& p : load_corpus(layout.corpus)) by_id.emplace(p.id, std::move(p));

    static const std::set<std::string> sources{"ir.png", "vis.png", "target.png"};
    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(input)) {
        if (!entry.is_regular_file() || entry.path().extension() != ".png") continue;
        const auto rel = fs::relative(entry.path(), input);
        if (sources.count(entry.path().filename().string()) || *rel.begin() == "masks") continue;
        files.push_back(rel);
    }
    std::sort(files.begin(), files.end());
    require(!files.empty(), ErrorCode::EmptyDataset, "no PNG images under " + input.string());

    metrics::MetricReport report;
    for (const auto& rel : files) {
        const auto fused = metrics::to_gray(read_png(input / rel));
        std::string id = rel.stem().string();
        if (!by_id.count(id) && rel.has_parent_path()) id = rel.parent_path().filename().string();
        const ImagePair* pair = by_id.count(id) ? &by_id.at(id) : nullptr;
        std::optional<metrics::GrayImage> ir, vis;
        if (pair) {
            ir = metrics::to_gray(pair->ir);
            vis = metrics::to_gray(pair->vis);
        }
        auto row = metrics::evaluate_image(fused, ir ? &*ir : nullptr, vis ? &*vis : nullptr);
        if (pair && pair->target) {
            std::optional<metrics::GrayImage> ref;
            if (reference && fs::exists(*reference / rel)) ref = metrics::to_gray(read_png(*reference / rel));
            const auto stats = metrics::masked_stats(fused, *pair->target, ref ? &*ref : nullptr);
            if (stats.in_mask.sd) row["target_sd"] = *stats.in_mask.sd;
            if (stats.out_mask.mad) row["off_target_mad"] = *stats.out_mask.mad;
        }
        report.add(rel.generic_string(), row);
    }
    fs::create_directories(s.dir);
    {
        std::ofstream out(csv);
        out << report.to_csv();
        require(static_cast<bool>(out), ErrorCode::Io, "cannot write " + csv.string());
    }
    auto summary = json(report.aggregate());
    summary["images"] = files.size();
    summary["csv"] = csv.string();
    return finish(s, {csv}, summary);
}

}  // namespace fusionpref::pipeline
