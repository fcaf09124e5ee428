// Copyright (C) 2026 The fusionpref Authors
// SPDX-License-Identifier: Apache-2.0

#include "fusionpref/tensor_bridge.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include "fusionpref/error.hpp"

namespace fusionpref {

torch::Tensor to_tensor(const Image& image, torch::Dtype dtype) {
    auto hwc = torch::from_blob(const_cast<float*>(image.data.data()),
                                {image.height, image.width, image.channels}, torch::kFloat32);
    return hwc.permute({2, 0, 1}).to(dtype, false, true).contiguous();
}

Image to_image(const torch::Tensor& chw) {
    auto t = chw.dim() == 4 ? chw.squeeze(0) : chw;
    require(t.dim() == 3, ErrorCode::ShapeMismatch, "expected a C×H×W tensor");
    auto hwc = t.detach().to(torch::kFloat32).clamp(0.0, 1.0).permute({1, 2, 0}).contiguous();
    Image out(static_cast<int>(hwc.size(1)), static_cast<int>(hwc.size(0)), static_cast<int>(hwc.size(2)));
    std::memcpy(out.data.data(), hwc.data_ptr<float>(), out.data.size() * sizeof(float));
    return out;
}

torch::Tensor stack_images(std::span<const Image> images, torch::Dtype dtype) {
    require(!images.empty(), ErrorCode::InvalidArgument, "no images to stack");
    std::vector<torch::Tensor> ts;
    ts.reserve(images.size());
    for (const auto& img : images) {
        require(img.same_shape(images.front()), ErrorCode::ShapeMismatch, "images differ in shape");
        ts.push_back(to_tensor(img, dtype));
    }
    return torch::stack(ts);
}

torch::Generator make_generator(std::uint64_t seed) {
    return at::make_generator<at::CPUGeneratorImpl>(seed);
}

std::vector<int64_t> shape_of(const torch::Tensor& t) {
    return t.sizes().vec();
}

}  // namespace fusionpref
