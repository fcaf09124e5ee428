// Copyright (C) 2026 The fusionpref Authors
// SPDX-License-Identifier: Apache-2.0

#include "fusionpref/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "fusionpref/error.hpp"
#include "fusionpref/hashing.hpp"
#include "fusionpref/module_state.hpp"

namespace fusionpref::checkpoint {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'F', 'P', 'C', 'K', 'P', 'T', '0', '1'};

std::string dtype_name(torch::ScalarType t) {
    switch (t) {
        case torch::kFloat32: return "float32";
        case torch::kFloat64: return "float64";
        case torch::kInt64: return "int64";
        default: fail(ErrorCode::InvalidArgument, "checkpoint: unsupported dtype");
    }
}

torch::ScalarType dtype_from(const std::string& name) {
    if (name == "float32") return torch::kFloat32;
    if (name == "float64") return torch::kFloat64;
    if (name == "int64") return torch::kInt64;
    fail(ErrorCode::MalformedManifest, "checkpoint: unknown dtype " + name);
}

std::map<std::string, torch::Tensor> module_state(const torch::nn::Module& module, const std::string& prefix = "") {
    std::map<std::string, torch::Tensor> out;
    for (const auto& [name, t] : snapshot_state(module)) out[prefix + name] = t;
    return out;
}

std::map<std::string, torch::Tensor> strip(const std::map<std::string, torch::Tensor>& all, const std::string& prefix) {
    std::map<std::string, torch::Tensor> out;
    for (const auto& [name, t] : all)
        if (name.rfind(prefix, 0) == 0) out[name.substr(prefix.size())] = t;
    return out;
}

Checkpoint load_kind(const fs::path& path, const std::string& kind) {
    auto ckpt = load(path);
    require(ckpt.architecture.value("kind", "") == kind, ErrorCode::InvalidArgument,
            path.string() + " holds a '" + ckpt.architecture.value("kind", "") + "' checkpoint, expected " + kind);
    return ckpt;
}

torch::ScalarType state_dtype(const std::map<std::string, torch::Tensor>& state) {
    for (const auto& [name, t] : state)
        if (t.is_floating_point()) return t.scalar_type();
    return torch::kFloat32;
}

}  // namespace

void save(const fs::path& path, const Checkpoint& ckpt) {
    json table = json::array();
    std::vector<torch::Tensor> blobs;
    uint64_t offset = 0;
    for (const auto& [name, tensor] : ckpt.tensors) {
        auto t = tensor.detach().contiguous().cpu();
        const uint64_t nbytes = t.numel() * t.element_size();
        table.push_back({{"name", name},
                         {"dtype", dtype_name(t.scalar_type())},
                         {"shape", t.sizes().vec()},
                         {"offset", offset},
                         {"nbytes", nbytes}});
        blobs.push_back(t);
        offset += nbytes;
    }
    const std::string header =
        json{{"architecture", ckpt.architecture}, {"metadata", ckpt.metadata}, {"tensors", table}}.dump();
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        require(static_cast<bool>(out), ErrorCode::Io, "cannot write " + tmp.string());
        const uint64_t size = header.size();
        out.write(kMagic, sizeof kMagic);
        out.write(reinterpret_cast<const char*>(&size), sizeof size);
        out.write(header.data(), static_cast<std::streamsize>(header.size()));
        for (const auto& t : blobs)
            out.write(static_cast<const char*>(t.data_ptr()), static_cast<std::streamsize>(t.numel() * t.element_size()));
        require(static_cast<bool>(out), ErrorCode::Io, "short write to " + tmp.string());
    }
    fs::rename(tmp, path);
}

Checkpoint load(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorCode::MissingFile, "cannot open checkpoint " + path.string());
    char magic[8];
    uint64_t size = 0;
    in.read(magic, sizeof magic);
    in.read(reinterpret_cast<char*>(&size), sizeof size);
    require(in && std::memcmp(magic, kMagic, sizeof magic) == 0, ErrorCode::MalformedManifest,
            path.string() + " is not a checkpoint");
    std::string header(size, '\0');
    in.read(header.data(), static_cast<std::streamsize>(size));
    require(static_cast<bool>(in), ErrorCode::MalformedManifest, "truncated checkpoint header in " + path.string());
    json h;
    try {
        h = json::parse(header);
    } catch (const json::exception& e) {
        fail(ErrorCode::MalformedManifest, "bad checkpoint header in " + path.string() + ": " + e.what());
    }
    const auto data_start = in.tellg();
    Checkpoint ckpt;
    ckpt.architecture = h.at("architecture");
    ckpt.metadata = h.value("metadata", json::object());
    for (const auto& entry : h.at("tensors")) {
        auto shape = entry.at("shape").get<std::vector<int64_t>>();
        auto t = torch::empty(shape, torch::TensorOptions().dtype(dtype_from(entry.at("dtype"))));
        const auto nbytes = entry.at("nbytes").get<uint64_t>();
        require(nbytes == static_cast<uint64_t>(t.numel() * t.element_size()), ErrorCode::MalformedManifest,
                "checkpoint tensor size mismatch for " + entry.at("name").get<std::string>());
        in.seekg(data_start + static_cast<std::streamoff>(entry.at("offset").get<uint64_t>()));
        in.read(static_cast<char*>(t.data_ptr()), static_cast<std::streamsize>(nbytes));
        require(static_cast<bool>(in), ErrorCode::MalformedManifest, "truncated checkpoint data in " + path.string());
        ckpt.tensors[entry.at("name").get<std::string>()] = t;
    }
    return ckpt;
}

std::string state_hash(const std::map<std::string, torch::Tensor>& tensors) {
    std::string buffer;
    for (const auto& [name, tensor] : tensors) {
        auto t = tensor.detach().contiguous().cpu();
        buffer += name + ':' + dtype_name(t.scalar_type()) + ':';
        for (auto s : t.sizes()) buffer += std::to_string(s) + ',';
        buffer.append(static_cast<const char*>(t.data_ptr()), t.numel() * t.element_size());
    }
    return sha256_hex(buffer);
}

std::string state_hash(const torch::nn::Module& module) { return state_hash(snapshot_state(module)); }

json describe(const paldm::DenoiserOptions& o) {
    return {{"kind", "denoiser"},          {"latent_channels", o.latent_channels}, {"cond_channels", o.cond_channels},
            {"base_width", o.base_width},  {"channel_mults", o.channel_mults},     {"time_dim", o.time_dim},
            {"prompt_dim", o.prompt_dim},  {"num_prompts", o.num_prompts},         {"attention_dim", o.attention_dim},
            {"groups", o.groups}};
}

paldm::DenoiserOptions denoiser_options(const json& j) {
    paldm::DenoiserOptions o;
    o.latent_channels = j.at("latent_channels");
    o.cond_channels = j.at("cond_channels");
    o.base_width = j.at("base_width");
    o.channel_mults = j.at("channel_mults").get<std::vector<int64_t>>();
    o.time_dim = j.at("time_dim");
    o.prompt_dim = j.at("prompt_dim");
    o.num_prompts = j.at("num_prompts");
    o.attention_dim = j.at("attention_dim");
    o.groups = j.at("groups");
    return o;
}

void save_denoiser(const fs::path& path, const paldm::Denoiser& model, json metadata) {
    save(path, {describe(model->options), metadata.is_null() ? json::object() : metadata, module_state(*model)});
}

paldm::Denoiser load_denoiser(const fs::path& path) {
    auto ckpt = load_kind(path, "denoiser");
    paldm::Denoiser model(denoiser_options(ckpt.architecture));
    model->to(state_dtype(ckpt.tensors));
    restore_state(*model, ckpt.tensors);
    model->eval();
    return model;
}

void save_prior(const fs::path& path, const prior::PriorFusionNet& model, json metadata) {
    const auto& o = model->options;
    json arch{{"kind", "prior_fusion"}, {"latent_channels", o.latent_channels}, {"width", o.width}, {"blocks", o.blocks}};
    save(path, {arch, metadata.is_null() ? json::object() : metadata, module_state(*model)});
}

prior::PriorFusionNet load_prior(const fs::path& path) {
    auto ckpt = load_kind(path, "prior_fusion");
    prior::PriorFusionOptions o;
    o.latent_channels = ckpt.architecture.at("latent_channels");
    o.width = ckpt.architecture.at("width");
    o.blocks = ckpt.architecture.at("blocks");
    prior::PriorFusionNet model(o);
    model->to(state_dtype(ckpt.tensors));
    restore_state(*model, ckpt.tensors);
    model->eval();
    return model;
}

void save_codec(const fs::path& path, const LatentCodec& codec, json metadata) {
    const auto& k = codec.kind();
    json arch{{"kind", "codec"}, {"variant", to_string(k.variant)}, {"factor", k.factor}, {"image_channels", k.image_channels}};
    Checkpoint ckpt{arch, metadata.is_null() ? json::object() : metadata, {}};
    if (k.variant == CodecVariant::TinyAutoencoder) {
        ckpt.architecture["width"] = codec.autoencoder()->width;
        ckpt.tensors = module_state(*codec.autoencoder());
    }
    save(path, ckpt);
}

LatentCodec load_codec(const fs::path& path) {
    auto ckpt = load_kind(path, "codec");
    CodecKind kind{codec_variant_from_string(ckpt.architecture.at("variant")), ckpt.architecture.at("factor"),
                   ckpt.architecture.at("image_channels")};
    if (kind.variant == CodecVariant::Patchify) return LatentCodec(kind);
    TinyAutoencoder ae(kind, ckpt.architecture.at("width").get<int64_t>());
    restore_state(*ae, ckpt.tensors);
    ae->eval();
    set_requires_grad(*ae, false);
    return LatentCodec(kind, ae);
}

void save_coupled(const fs::path& path, const pcldm::CoupledModel& model, json metadata) {
    json arch = describe(model->trainable->options);
    arch["kind"] = "coupled";
    arch["reference_hash"] = state_hash(*model->reference);
    auto state = module_state(*model->trainable, "trainable.");
    for (auto& [name, t] : module_state(*model->zero_proj, "zero_proj.")) state[name] = t;
    save(path, {arch, metadata.is_null() ? json::object() : metadata, state});
}

pcldm::CoupledModel load_coupled(const fs::path& path, const paldm::Denoiser& reference) {
    auto ckpt = load_kind(path, "coupled");
    const std::string expected = ckpt.architecture.at("reference_hash");
    require(state_hash(*reference) == expected, ErrorCode::Conflict,
            path.string() + " was fine-tuned from a different reference denoiser");
    pcldm::CoupledModel model(reference);
    restore_state(*model->trainable, strip(ckpt.tensors, "trainable."));
    restore_state(*model->zero_proj, strip(ckpt.tensors, "zero_proj."));
    model->eval();
    return model;
}

}  // namespace fusionpref::checkpoint
