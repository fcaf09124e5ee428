// Copyright (C) 2026 The fusionpref Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <torch/torch.h>

#include <map>
#include <string>

namespace fusionpref {

/// Detached deep copy of every named parameter and buffer.
std::map<std::string, torch::Tensor> snapshot_state(const torch::nn::Module& module);

/// Copies tensors into the module by name; every module entry must be present.
void restore_state(torch::nn::Module& module, const std::map<std::string, torch::Tensor>& state);

/// Copies src's state into dst (identical architectures).
void copy_state(const torch::nn::Module& src, torch::nn::Module& dst);

void set_requires_grad(torch::nn::Module& module, bool flag);

int64_t parameter_count(const torch::nn::Module& module);

}  // namespace fusionpref
