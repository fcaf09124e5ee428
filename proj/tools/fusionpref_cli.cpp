// Copyright (C) 2026 The fusionpref Authors
// SPDX-License-Identifier: Apache-2.0

#include <csignal>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fusionpref/error.hpp"
#include "fusionpref/log.hpp"
#include "fusionpref/pcldm.hpp"
#include "fusionpref/pipeline.hpp"
#include "fusionpref/run_config.hpp"
#include "fusionpref/service.hpp"

using namespace fusionpref;

namespace {

int exit_code(ErrorCode code) {
    switch (code) {
        case ErrorCode::InvalidArgument:
        case ErrorCode::InvalidRange: return 2;
        case ErrorCode::MissingDependency: return 3;
        case ErrorCode::MissingFile:
        case ErrorCode::NotFound: return 4;
        case ErrorCode::Diverged: return 5;
        default: return 1;
    }
}

void report(const pipeline::StageResult& r) {
    std::cout << (r.skipped ? "skipped " : "done ") << r.record.value("stage", "") << " -> " << r.dir.string() << '\n'
              << r.record.value("summary", nlohmann::json::object()).dump(2) << '\n';
}

std::pair<std::string, int> split_bind(const std::string& bind) {
    const auto colon = bind.rfind(':');
    require(colon != std::string::npos, ErrorCode::InvalidArgument, "--bind expects host:port, got " + bind);
    int port = 0;
    try {
        port = std::stoi(bind.substr(colon + 1));
    } catch (const std::exception&) {
        fail(ErrorCode::InvalidArgument, "--bind port is not a number: " + bind);
    }
    require(port >= 0 && port < 65536, ErrorCode::InvalidRange, "--bind port out of range");
    return {bind.substr(0, colon), port};
}

int serve(const RunConfig& config, const std::string& bind) {
    pipeline::Layout layout(config);
    auto [host, port] = split_bind(bind);
    // Block termination signals before threads start so only sigwait sees them.
    sigset_t signals;
    sigemptyset(&signals);
    sigaddset(&signals, SIGINT);
    sigaddset(&signals, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &signals, nullptr);

    service::AnnotationService svc(layout.candidates, layout.manifest);
    const int bound = svc.start(host, port);
    std::cout << "serving " << layout.candidates.string() << " on http://" << host << ":" << bound
              << " (manifest " << layout.manifest.string() << ")" << std::endl;
    int sig = 0;
    sigwait(&signals, &sig);
    svc.stop();
    std::cout << "stopped; " << svc.accepted() << " submissions accepted" << std::endl;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Preference-aligned infrared/visible image fusion pipeline"};
    app.fallthrough();
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::uint64_t> seed;
    bool force = false;
    std::vector<std::string> overrides;
    std::string log_level = "info";
    app.add_option("--config", config_path, "Run configuration (JSON)");
    app.add_option("--seed", seed, "Seed (overrides the config)");
    app.add_flag("--force", force, "Rerun stages that are already complete");
    app.add_option("--set", overrides, "Override a scalar field: section.field=value");
    app.add_option("--log-level", log_level, "debug, info, warn or error");

    auto* make_corpus = app.add_subcommand("make-corpus", "Write the synthetic IR/VIS corpus");
    auto* train_lfm = app.add_subcommand("train-lfm", "Train the prior latent fusion model");
    auto* train_paldm = app.add_subcommand("train-paldm", "Train the property-aligned denoiser");
    auto* generate = app.add_subcommand("generate-candidates", "Sample the candidate pool per training pair");
    auto* autopref = app.add_subcommand("autopref", "Collect preferences with a programmatic scorer");
    std::string scorer = "sd";
    autopref->add_option("--scorer", scorer, "en, sd, ag or composite")->capture_default_str();
    auto* annotate = app.add_subcommand("annotate-serve", "Serve the annotation HTTP API");
    std::string bind = "127.0.0.1:8080";
    annotate->add_option("--bind", bind, "host:port")->capture_default_str();
    auto* finetune = app.add_subcommand("finetune", "Preference fine-tuning of the coupled model");
    std::string loss = "idpo";
    finetune->add_option("--loss", loss, "idpo, dpo or contrast")
        ->check(CLI::IsMember({"idpo", "dpo", "contrast"}))
        ->capture_default_str();
    auto* fuse = app.add_subcommand("fuse", "Fuse the held-out pairs");
    std::string model = "idpo";
    fuse->add_option("--model", model, "reference, idpo, dpo or contrast")
        ->check(CLI::IsMember({"reference", "idpo", "dpo", "contrast"}))
        ->capture_default_str();
    auto* eval = app.add_subcommand("eval", "Metrics CSV for a directory of images");
    std::string input, reference;
    eval->add_option("--input", input, "Directory of PNG images")->required();
    eval->add_option("--reference", reference, "Directory with same-named images to compare against");
    auto* show = app.add_subcommand("show-config", "Print the effective configuration");

    CLI11_PARSE(app, argc, argv);

    try {
        log::set_level(log::level_from_string(log_level));
        RunConfig config = config_path.empty() ? RunConfig{} : RunConfig::load(config_path);
        for (const auto& o : overrides) config.set(o);
        if (seed) config.seed = seed;
        if (show->parsed()) {
            std::cout << config.to_json().dump(2) << '\n';
            return 0;
        }
        config.validate();
        const pipeline::StageFlags flags{force};

        if (make_corpus->parsed()) report(pipeline::make_corpus(config, flags));
        if (train_lfm->parsed()) report(pipeline::train_lfm(config, flags));
        if (train_paldm->parsed()) report(pipeline::train_paldm(config, flags));
        if (generate->parsed()) report(pipeline::generate_candidates(config, flags));
        if (autopref->parsed()) report(pipeline::autopref(config, scorer, flags));
        if (annotate->parsed()) return serve(config, bind);
        if (finetune->parsed()) report(pipeline::finetune(config, pcldm::loss_kind_from_string(loss), flags));
        if (fuse->parsed()) report(pipeline::fuse(config, model, flags));
        if (eval->parsed()) {
            std::optional<std::filesystem::path> ref;
            if (!reference.empty()) ref = reference;
            report(pipeline::eval(config, input, ref, flags));
        }
        return 0;
    } catch (const Error& e) {
        std::cerr << "error [" << error_code_name(e.code()) << "]: " << e.what() << '\n';
        return exit_code(e.code());
    } catch (const std::exception& e) {
        std::cerr << "error [internal]: " << e.what() << '\n';
        return 1;
    }
}
