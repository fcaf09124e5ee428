// Copyright (C) 2026 The fusionpref Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <span>
#include <vector>

#include "fusionpref/image.hpp"

namespace fusionpref {

/// Image (H×W×C interleaved) to a C×H×W float tensor.
torch::Tensor to_tensor(const Image& image, torch::Dtype dtype = torch::kFloat32);

/// C×H×W (or 1×C×H×W) tensor to an Image. Values are clamped to [0,1].
Image to_image(const torch::Tensor& chw);

/// Stacks images of identical shape into B×C×H×W.
torch::Tensor stack_images(std::span<const Image> images, torch::Dtype dtype = torch::kFloat32);

torch::Generator make_generator(std::uint64_t seed);

std::vector<int64_t> shape_of(const torch::Tensor& t);

}  // namespace fusionpref
