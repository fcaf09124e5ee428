// Copyright (C) 2026 The fusionpref Authors
// SPDX-License-Identifier: Apache-2.0

#include "fusionpref/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "fusionpref/error.hpp"

namespace fusionpref {

std::string_view error_code_name(ErrorCode code) {
    switch (code) {
        case ErrorCode::InvalidArgument: return "invalid_argument";
        case ErrorCode::InvalidRange: return "invalid_range";
        case ErrorCode::ShapeMismatch: return "shape_mismatch";
        case ErrorCode::DimensionNotDivisible: return "dimension_not_divisible";
        case ErrorCode::IndexCollision: return "index_collision";
        case ErrorCode::NonBinaryMask: return "non_binary_mask";
        case ErrorCode::MalformedManifest: return "malformed_manifest";
        case ErrorCode::MissingFile: return "missing_file";
        case ErrorCode::MissingDependency: return "missing_dependency";
        case ErrorCode::NotFound: return "not_found";
        case ErrorCode::Conflict: return "conflict";
        case ErrorCode::EmptyDataset: return "empty_dataset";
        case ErrorCode::Diverged: return "diverged";
        case ErrorCode::Io: return "io_error";
    }
    return "unknown";
}

bool is_binary(const Image& image) {
    return std::all_of(image.data.begin(), image.data.end(),
                       [](float v) { return v == 0.0f || v == 1.0f; });
}

Image binarize(const Image& mask) {
    require(mask.channels == 1, ErrorCode::InvalidArgument, "mask must be single-channel");
    Image out = mask;
    for (auto& v : out.data) v = v >= 0.5f ? 1.0f : 0.0f;
    return out;
}

Image rectangle_mask(int width, int height, int x, int y, int w, int h) {
    Image m(width, height, 1, 0.0f);
    for (int r = std::max(0, y); r < std::min(height, y + h); ++r)
        for (int c = std::max(0, x); c < std::min(width, x + w); ++c) m.at(r, c) = 1.0f;
    return m;
}

namespace {

png_uint_32 png_format(int channels) {
    switch (channels) {
        case 1: return PNG_FORMAT_GRAY;
        case 3: return PNG_FORMAT_RGB;
        case 4: return PNG_FORMAT_RGBA;
        default: fail(ErrorCode::InvalidArgument, "unsupported channel count " + std::to_string(channels));
    }
}

std::vector<std::uint8_t> to_bytes(const Image& image) {
    std::vector<std::uint8_t> px(image.data.size());
    for (size_t i = 0; i < px.size(); ++i) {
        float v = std::clamp(image.data[i], 0.0f, 1.0f);
        px[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
    }
    return px;
}

Image from_png_image(png_image& img, std::vector<std::uint8_t>& buffer) {
    // Grayscale stays grayscale; everything else becomes RGB.
    const bool gray = (img.format & PNG_FORMAT_FLAG_COLOR) == 0;
    img.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    buffer.resize(PNG_IMAGE_SIZE(img));
    return Image(static_cast<int>(img.width), static_cast<int>(img.height), gray ? 1 : 3);
}

}  // namespace

std::vector<std::uint8_t> encode_png(const Image& image) {
    require(!image.empty(), ErrorCode::InvalidArgument, "cannot encode an empty image");
    png_image img;
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(image.width);
    img.height = static_cast<png_uint_32>(image.height);
    img.format = png_format(image.channels);
    auto px = to_bytes(image);

    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&img, nullptr, &size, 0, px.data(), 0, nullptr))
        fail(ErrorCode::Io, std::string("png encode failed: ") + img.message);
    std::vector<std::uint8_t> out(size);
    if (!png_image_write_to_memory(&img, out.data(), &size, 0, px.data(), 0, nullptr))
        fail(ErrorCode::Io, std::string("png encode failed: ") + img.message);
    out.resize(size);
    return out;
}

Image decode_png(std::span<const std::uint8_t> bytes) {
    png_image img;
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size()))
        fail(ErrorCode::Io, std::string("png decode failed: ") + img.message);
    std::vector<std::uint8_t> buffer;
    Image out = from_png_image(img, buffer);
    if (!png_image_finish_read(&img, nullptr, buffer.data(), 0, nullptr)) {
        png_image_free(&img);
        fail(ErrorCode::Io, std::string("png decode failed: ") + img.message);
    }
    for (size_t i = 0; i < buffer.size(); ++i) out.data[i] = static_cast<float>(buffer[i]) / 255.0f;
    return out;
}

Image read_png(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::MissingFile, "cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return decode_png(bytes);
    } catch (const Error& e) {
        fail(e.code(), path.string() + ": " + e.what());
    }
}

void write_png(const std::filesystem::path& path, const Image& image) {
    auto bytes = encode_png(image);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::Io, "cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace fusionpref
