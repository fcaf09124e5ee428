// Copyright (C) 2026 The fusionpref Authors
// SPDX-License-Identifier: Apache-2.0

#include "fusionpref/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "fusionpref/error.hpp"
#include "fusionpref/hashing.hpp"

namespace fusionpref {

namespace fs = std::filesystem;

fs::path ir_path(const fs::path& dir, const std::string& id) { return dir / (id + "_ir.png"); }
fs::path vis_path(const fs::path& dir, const std::string& id) { return dir / (id + "_vis.png"); }
fs::path target_path(const fs::path& dir, const std::string& id) { return dir / "targets" / (id + ".png"); }

std::vector<ImagePair> load_corpus(const fs::path& dir) {
    require(fs::is_directory(dir), ErrorCode::MissingFile, "corpus directory not found: " + dir.string());
    std::vector<std::string> ids;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const auto name = entry.path().filename().string();
        const std::string suffix = "_ir.png";
        if (name.size() > suffix.size() && name.ends_with(suffix))
            ids.push_back(name.substr(0, name.size() - suffix.size()));
    }
    std::sort(ids.begin(), ids.end());
    std::vector<ImagePair> pairs;
    for (const auto& id : ids) {
        const auto vp = vis_path(dir, id);
        require(fs::exists(vp), ErrorCode::MissingFile, "missing visible image " + vp.string());
        ImagePair p{id, read_png(ir_path(dir, id)), read_png(vp), std::nullopt};
        require(p.ir.width == p.vis.width && p.ir.height == p.vis.height, ErrorCode::ShapeMismatch,
                "pair " + id + ": ir and vis differ in size");
        if (const auto tp = target_path(dir, id); fs::exists(tp)) p.target = binarize(read_png(tp));
        pairs.push_back(std::move(p));
    }
    return pairs;
}

CorpusSplit split_corpus(size_t n, double validation_fraction, std::uint64_t seed) {
    CorpusSplit split;
    if (n < 2) {
        for (size_t i = 0; i < n; ++i) {
            split.train.push_back(i);
            split.validation.push_back(i);
        }
        return split;
    }
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed ^ 0x5eedc0ffeeULL);
    std::shuffle(order.begin(), order.end(), rng);
    size_t n_val = static_cast<size_t>(std::llround(validation_fraction * static_cast<double>(n)));
    n_val = std::clamp<size_t>(n_val, 1, n - 1);
    split.train.assign(order.begin(), order.end() - static_cast<std::ptrdiff_t>(n_val));
    split.validation.assign(order.end() - static_cast<std::ptrdiff_t>(n_val), order.end());
    std::sort(split.train.begin(), split.train.end());
    std::sort(split.validation.begin(), split.validation.end());
    return split;
}

namespace {

// Separable box blur with clamped borders.
std::vector<float> box_blur(const std::vector<float>& src, int size, int radius) {
    std::vector<float> tmp(src.size()), out(src.size());
    const float norm = 1.0f / static_cast<float>(2 * radius + 1);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            float acc = 0.0f;
            for (int d = -radius; d <= radius; ++d) acc += src[y * size + std::clamp(x + d, 0, size - 1)];
            tmp[y * size + x] = acc * norm;
        }
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            float acc = 0.0f;
            for (int d = -radius; d <= radius; ++d) acc += tmp[std::clamp(y + d, 0, size - 1) * size + x];
            out[y * size + x] = acc * norm;
        }
    return out;
}

struct Blob {
    double cx, cy, radius, amplitude;
    double stripe_angle;
    int stripe_period;
};

}  // namespace

ImagePair synthesize_pair(const std::string& id, int size, std::uint64_t seed) {
    require(size >= 16, ErrorCode::InvalidArgument, "synthetic images must be at least 16 pixels wide");
    std::mt19937_64 rng(seed ^ fnv1a64(id));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
    std::normal_distribution<float> normal(0.0f, 1.0f);

    const double s = static_cast<double>(size);
    const int n_blobs = 1 + static_cast<int>(unit(rng) * 2.0);
    std::vector<Blob> blobs;
    for (int i = 0; i < n_blobs; ++i) {
        Blob b{};
        b.radius = uniform(0.08, 0.13) * s;
        // keep blobs apart so each target mask stays a single component
        for (int attempt = 0; attempt < 20; ++attempt) {
            b.cx = uniform(b.radius + 2, s - b.radius - 2);
            b.cy = uniform(b.radius + 2, s - b.radius - 2);
            bool ok = true;
            for (const auto& o : blobs) ok = ok && std::hypot(b.cx - o.cx, b.cy - o.cy) > b.radius + o.radius + 4;
            if (ok) break;
        }
        b.amplitude = uniform(0.75, 0.9);
        b.stripe_angle = uniform(0.0, 3.14159265358979);
        b.stripe_period = 8;
        blobs.push_back(b);
    }

    ImagePair pair{id, Image(size, size, 1), Image(size, size, 1), Image(size, size, 1)};

    // IR: dark, smooth background plus flat-topped thermal blobs.
    const double gx = uniform(-0.03, 0.03), gy = uniform(-0.03, 0.03);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            double v = 0.07 + gx * (x / s - 0.5) + gy * (y / s - 0.5);
            for (const auto& b : blobs) {
                const double d = std::hypot(x + 0.5 - b.cx, y + 0.5 - b.cy) / b.radius;
                v += b.amplitude / (1.0 + std::pow(d, 8.0));
                if (d <= 1.0) pair.target->at(y, x) = 1.0f;
            }
            pair.ir.at(y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }

    // VIS: filtered-noise texture with a few flat shapes.
    std::vector<float> noise(static_cast<size_t>(size) * size);
    for (auto& v : noise) v = normal(rng);
    noise = box_blur(box_blur(noise, size, 1), size, 1);
    const int n_shapes = 2 + static_cast<int>(unit(rng) * 2.0);
    struct Shape { bool circle; double cx, cy, a, b, value; };
    std::vector<Shape> shapes;
    for (int i = 0; i < n_shapes; ++i)
        shapes.push_back({unit(rng) < 0.5, uniform(0, s), uniform(0, s), uniform(0.08, 0.2) * s,
                          uniform(0.08, 0.2) * s, uniform(0.3, 0.85)});
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            double v = 0.55 + 0.25 * noise[y * size + x];
            for (const auto& sh : shapes) {
                const double dx = x + 0.5 - sh.cx, dy = y + 0.5 - sh.cy;
                const bool inside = sh.circle ? std::hypot(dx, dy) < sh.a
                                              : std::abs(dx) < sh.a && std::abs(dy) < sh.b;
                if (inside) v = sh.value + 0.1 * noise[y * size + x];
            }
            // targets: dim on average, with a high-contrast stripe pattern
            for (const auto& b : blobs) {
                const double dx = x + 0.5 - b.cx, dy = y + 0.5 - b.cy;
                if (std::hypot(dx, dy) <= b.radius * 1.1) {
                    const double u = dx * std::cos(b.stripe_angle) + dy * std::sin(b.stripe_angle);
                    const int band = static_cast<int>(std::floor(u / (b.stripe_period / 2.0)));
                    v = (band % 2 == 0) ? 0.05 : 0.5;
                }
            }
            pair.vis.at(y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
    // match what a PNG round trip yields
    for (auto* img : {&pair.ir, &pair.vis})
        for (auto& v : img->data) v = std::round(v * 255.0f) / 255.0f;
    return pair;
}

std::vector<ImagePair> make_synthetic_corpus(const fs::path& dir, const SyntheticCorpusOptions& opts) {
    require(opts.count >= 1, ErrorCode::InvalidArgument, "synthetic corpus needs at least one pair");
    fs::create_directories(dir / "targets");
    std::vector<ImagePair> pairs;
    const int digits = std::max(4, static_cast<int>(std::to_string(opts.count).size()));
    for (int i = 0; i < opts.count; ++i) {
        std::string id = std::to_string(i);
        id = "p" + std::string(static_cast<size_t>(digits) - id.size(), '0') + id;
        auto pair = synthesize_pair(id, opts.size, opts.seed);
        write_png(ir_path(dir, id), pair.ir);
        write_png(vis_path(dir, id), pair.vis);
        write_png(target_path(dir, id), *pair.target);
        pairs.push_back(std::move(pair));
    }
    return pairs;
}

}  // namespace fusionpref
