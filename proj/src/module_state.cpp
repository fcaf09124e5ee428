// Copyright (C) 2026 The fusionpref Authors
// SPDX-License-Identifier: Apache-2.0

#include "fusionpref/module_state.hpp"

#include "fusionpref/error.hpp"

namespace fusionpref {

std::map<std::string, torch::Tensor> snapshot_state(const torch::nn::Module& module) {
    torch::NoGradGuard no_grad;
    std::map<std::string, torch::Tensor> out;
    for (const auto& item : module.named_parameters(true)) out[item.key()] = item.value().detach().clone();
    for (const auto& item : module.named_buffers(true)) out[item.key()] = item.value().detach().clone();
    return out;
}

void restore_state(torch::nn::Module& module, const std::map<std::string, torch::Tensor>& state) {
    torch::NoGradGuard no_grad;
    auto assign = [&](const std::string& name, torch::Tensor& dst) {
        auto it = state.find(name);
        require(it != state.end(), ErrorCode::ShapeMismatch, "state is missing tensor '" + name + "'");
        require(it->second.sizes() == dst.sizes(), ErrorCode::ShapeMismatch, "shape mismatch for tensor '" + name + "'");
        dst.copy_(it->second);
    };
    for (auto& item : module.named_parameters(true)) assign(item.key(), item.value());
    for (auto& item : module.named_buffers(true)) assign(item.key(), item.value());
}

void copy_state(const torch::nn::Module& src, torch::nn::Module& dst) {
    restore_state(dst, snapshot_state(src));
}

void set_requires_grad(torch::nn::Module& module, bool flag) {
    for (auto& p : module.parameters(true)) p.set_requires_grad(flag);
}

int64_t parameter_count(const torch::nn::Module& module) {
    int64_t n = 0;
    for (const auto& p : module.parameters(true)) n += p.numel();
    return n;
}

}  // namespace fusionpref
