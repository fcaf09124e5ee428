// Copyright (C) 2026 The fusionpref Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fusionpref/image.hpp"

namespace fusionpref::metrics {

/// Row-major grayscale image on the 0-255 scale.
struct GrayImage {
    int width = 0;
    int height = 0;
    std::vector<double> values;

    GrayImage() = default;
    GrayImage(int w, int h, double fill = 0.0) : width(w), height(h), values(static_cast<size_t>(w) * h, fill) {}

    double& at(int y, int x) { return values[static_cast<size_t>(y) * width + x]; }
    double at(int y, int x) const { return values[static_cast<size_t>(y) * width + x]; }
    size_t size() const { return values.size(); }
};

/// 8-bit grayscale: BT.601 luma for RGB, rounded to integers in [0, 255].
GrayImage to_gray(const Image& image);

double entropy_en(const GrayImage& image);
double standard_deviation_sd(const GrayImage& image);
/// Mean of sqrt((dx² + dy²)/2) over pixels with both forward differences;
/// the last row and column are excluded.
double average_gradient_ag(const GrayImage& image);
double spatial_frequency_sf(const GrayImage& image);
/// corr(F − A, B) + corr(F − B, A); a zero-variance operand gives 0.
double scd(const GrayImage& fused, const GrayImage& ir, const GrayImage& vis);

double pearson(const std::vector<double>& a, const std::vector<double>& b);

/// Metrics over one side of a mask. Fields are absent for an empty region.
struct RegionStats {
    size_t pixel_count = 0;
    std::optional<double> sd, ag, en, mad;
};

struct MaskedStats {
    RegionStats in_mask, out_mask;
};

/// AG inside a region averages only the gradient cells whose anchor pixel
/// lies in the region. `mad` is the mean absolute difference against
/// `reference` on the [0,1] scale.
MaskedStats masked_stats(const GrayImage& image, const Image& mask, const GrayImage* reference = nullptr);

struct MetricReport {
    std::vector<std::string> names;  // row labels
    std::vector<std::map<std::string, double>> rows;

    void add(const std::string& name, std::map<std::string, double> row);
    std::map<std::string, double> aggregate() const;
    std::string to_csv() const;
};

/// EN, SD, AG, SF and, when sources are given, SCD.
std::map<std::string, double> evaluate_image(const GrayImage& fused, const GrayImage* ir = nullptr,
                                             const GrayImage* vis = nullptr);

}  // namespace fusionpref::metrics
