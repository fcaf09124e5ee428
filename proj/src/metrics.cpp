// Copyright (C) 2026 The fusionpref Authors
// SPDX-License-Identifier: Apache-2.0

#include "fusionpref/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <iomanip>
#include <set>
#include <sstream>

#include "fusionpref/error.hpp"

namespace fusionpref::metrics {

GrayImage to_gray(const Image& image) {
    require(image.channels == 1 || image.channels == 3, ErrorCode::InvalidArgument,
            "grayscale conversion expects 1 or 3 channels");
    GrayImage out(image.width, image.height);
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            double v = image.channels == 1
                           ? image.at(y, x)
                           : 0.299 * image.at(y, x, 0) + 0.587 * image.at(y, x, 1) + 0.114 * image.at(y, x, 2);
            out.at(y, x) = std::round(std::clamp(v, 0.0, 1.0) * 255.0);
        }
    }
    return out;
}

namespace {

template <typename Pred>
double entropy_of(const GrayImage& image, Pred keep) {
    std::array<size_t, 256> hist{};
    size_t n = 0;
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            if (!keep(y, x)) continue;
            const int bin = static_cast<int>(std::clamp(std::lround(image.at(y, x)), 0L, 255L));
            ++hist[bin];
            ++n;
        }
    }
    double h = 0.0;
    for (size_t count : hist) {
        if (count == 0) continue;
        const double p = static_cast<double>(count) / static_cast<double>(n);
        h -= p * std::log2(p);
    }
    return h;
}

template <typename Pred>
double sd_of(const GrayImage& image, Pred keep) {
    double sum = 0.0;
    size_t n = 0;
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x)
            if (keep(y, x)) {
                sum += image.at(y, x);
                ++n;
            }
    if (n == 0) return 0.0;
    const double mean = sum / static_cast<double>(n);
    double ss = 0.0;
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x)
            if (keep(y, x)) ss += (image.at(y, x) - mean) * (image.at(y, x) - mean);
    return std::sqrt(ss / static_cast<double>(n));
}

template <typename Pred>
std::pair<double, size_t> ag_of(const GrayImage& image, Pred keep) {
    double sum = 0.0;
    size_t n = 0;
    for (int y = 0; y + 1 < image.height; ++y) {
        for (int x = 0; x + 1 < image.width; ++x) {
            if (!keep(y, x)) continue;
            const double dx = image.at(y, x + 1) - image.at(y, x);
            const double dy = image.at(y + 1, x) - image.at(y, x);
            sum += std::sqrt((dx * dx + dy * dy) / 2.0);
            ++n;
        }
    }
    return {n == 0 ? 0.0 : sum / static_cast<double>(n), n};
}

const auto all = [](int, int) { return true; };

}  // namespace

double entropy_en(const GrayImage& image) { return image.size() == 0 ? 0.0 : entropy_of(image, all); }

double standard_deviation_sd(const GrayImage& image) { return sd_of(image, all); }

double average_gradient_ag(const GrayImage& image) { return ag_of(image, all).first; }

double spatial_frequency_sf(const GrayImage& image) {
    double rf = 0.0, cf = 0.0;
    size_t nr = 0, nc = 0;
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            if (x + 1 < image.width) {
                const double d = image.at(y, x + 1) - image.at(y, x);
                rf += d * d;
                ++nr;
            }
            if (y + 1 < image.height) {
                const double d = image.at(y + 1, x) - image.at(y, x);
                cf += d * d;
                ++nc;
            }
        }
    }
    rf = nr ? rf / static_cast<double>(nr) : 0.0;
    cf = nc ? cf / static_cast<double>(nc) : 0.0;
    return std::sqrt(rf + cf);
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    require(a.size() == b.size(), ErrorCode::ShapeMismatch, "pearson: length mismatch");
    const size_t n = a.size();
    if (n == 0) return 0.0;
    double ma = 0.0, mb = 0.0;
    for (size_t i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= static_cast<double>(n);
    mb /= static_cast<double>(n);
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (size_t i = 0; i < n; ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa <= 0.0 || sbb <= 0.0) return 0.0;
    return sab / std::sqrt(saa * sbb);
}

double scd(const GrayImage& fused, const GrayImage& ir, const GrayImage& vis) {
    require(fused.width == ir.width && fused.height == ir.height && fused.width == vis.width &&
                fused.height == vis.height,
            ErrorCode::ShapeMismatch, "scd: image shapes differ");
    std::vector<double> fa(fused.size()), fb(fused.size());
    for (size_t i = 0; i < fused.size(); ++i) {
        fa[i] = fused.values[i] - ir.values[i];
        fb[i] = fused.values[i] - vis.values[i];
    }
    return pearson(fa, vis.values) + pearson(fb, ir.values);
}

MaskedStats masked_stats(const GrayImage& image, const Image& mask, const GrayImage* reference) {
    require(mask.channels == 1 && mask.width == image.width && mask.height == image.height, ErrorCode::ShapeMismatch,
            "masked_stats: mask must be single-channel with the image's dims");
    require(is_binary(mask), ErrorCode::NonBinaryMask, "masked_stats: mask must be binary");
    if (reference) {
        require(reference->width == image.width && reference->height == image.height, ErrorCode::ShapeMismatch,
                "masked_stats: reference dims differ");
    }
    auto region = [&](bool inside) {
        auto keep = [&](int y, int x) { return (mask.at(y, x) > 0.5f) == inside; };
        RegionStats r;
        double mad = 0.0;
        for (int y = 0; y < image.height; ++y)
            for (int x = 0; x < image.width; ++x)
                if (keep(y, x)) {
                    ++r.pixel_count;
                    if (reference) mad += std::abs(image.at(y, x) - reference->at(y, x)) / 255.0;
                }
        if (r.pixel_count == 0) return r;
        r.sd = sd_of(image, keep);
        r.en = entropy_of(image, keep);
        auto [ag, cells] = ag_of(image, keep);
        if (cells > 0) r.ag = ag;
        if (reference) r.mad = mad / static_cast<double>(r.pixel_count);
        return r;
    };
    return {region(true), region(false)};
}

void MetricReport::add(const std::string& name, std::map<std::string, double> row) {
    for (const auto& [key, value] : row) {
        require(std::isfinite(value), ErrorCode::InvalidRange, "metric " + key + " is not finite for " + name);
    }
    names.push_back(name);
    rows.push_back(std::move(row));
}

std::map<std::string, double> MetricReport::aggregate() const {
    std::map<std::string, double> sums;
    std::map<std::string, size_t> counts;
    for (const auto& row : rows)
        for (const auto& [key, value] : row) {
            sums[key] += value;
            ++counts[key];
        }
    for (auto& [key, value] : sums) value /= static_cast<double>(counts[key]);
    return sums;
}

std::string MetricReport::to_csv() const {
    std::set<std::string> columns;
    for (const auto& row : rows)
        for (const auto& item : row) columns.insert(item.first);
    std::ostringstream out;
    out << "image";
    for (const auto& c : columns) out << ',' << c;
    out << '\n' << std::setprecision(10);
    auto emit = [&](const std::string& label, const std::map<std::string, double>& row) {
        out << label;
        for (const auto& c : columns) {
            out << ',';
            if (auto it = row.find(c); it != row.end()) out << it->second;
        }
        out << '\n';
    };
    for (size_t i = 0; i < rows.size(); ++i) emit(names[i], rows[i]);
    emit("mean", aggregate());
    return out.str();
}

std::map<std::string, double> evaluate_image(const GrayImage& fused, const GrayImage* ir, const GrayImage* vis) {
    std::map<std::string, double> row{{"en", entropy_en(fused)},
                                      {"sd", standard_deviation_sd(fused)},
                                      {"ag", average_gradient_ag(fused)},
                                      {"sf", spatial_frequency_sf(fused)}};
    if (ir && vis) row["scd"] = scd(fused, *ir, *vis);
    return row;
}

}  // namespace fusionpref::metrics
