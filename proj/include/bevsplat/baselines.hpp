// Copyright Contributors to the bevsplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Comparison BEV synthesizers: flat-ground inverse perspective mapping and
// direct top-down point projection with a z-buffer.

#include "bevsplat/error.hpp"
#include "bevsplat/geometry.hpp"
#include "bevsplat/parallel.hpp"
#include "bevsplat/primitives.hpp"
#include "bevsplat/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <tuple>
#include <vector>

namespace bevsplat {

inline constexpr double kDefaultCameraHeight = 1.65;

struct BevMap {
    FeatureMap features;
    ScalarMap mask; // validity (IPM) or occupancy (direct)
};

namespace detail {

/// Bilinear sample at continuous (col, row); columns wrap when `wrap_cols`.
inline void bilinear_sample(const FeatureMap &img, double col, double row, bool wrap_cols, double *out) {
    const int r0 = static_cast<int>(std::floor(row));
    const int c0 = static_cast<int>(std::floor(col));
    const double fr = row - r0;
    const double fc = col - c0;
    for (int ch = 0; ch < img.channels; ++ch) {
        out[ch] = 0.0;
    }
    for (int dr = 0; dr <= 1; ++dr) {
        const double wr = dr ? fr : 1.0 - fr;
        if (wr == 0.0) {
            continue;
        }
        const int rr = std::clamp(r0 + dr, 0, img.rows - 1);
        for (int dc = 0; dc <= 1; ++dc) {
            const double wc = dc ? fc : 1.0 - fc;
            if (wc == 0.0) {
                continue;
            }
            int cc = c0 + dc;
            cc = wrap_cols ? ((cc % img.cols) + img.cols) % img.cols : std::clamp(cc, 0, img.cols - 1);
            for (int ch = 0; ch < img.channels; ++ch) {
                out[ch] += wr * wc * img.at(ch, rr, cc);
            }
        }
    }
}

} // namespace detail

/// Inverse perspective mapping: every BEV cell center is placed on the plane
/// Y = +cam_height and looked up in the ground image with bilinear sampling.
inline BevMap ipm_project(const FeatureMap &features, const Camera &camera, double cam_height,
                          const BevGridSpec &grid, int threads = 0) {
    grid.validate();
    if (!(cam_height > 0.0)) {
        throw DomainError("camera height must be positive");
    }
    std::visit([](const auto &c) { c.validate(); }, camera);
    const int size = grid.size;
    BevMap out{FeatureMap(features.channels, size, size), ScalarMap(size, size)};
    const auto *pinhole = std::get_if<PinholeIntrinsics>(&camera);
    const auto *pano = std::get_if<PanoramaGeometry>(&camera);
    if (pano && (pano->width != features.cols || pano->height != features.rows)) {
        throw DomainError("panorama geometry must match the feature map size");
    }

    parallel_for(static_cast<std::size_t>(size), threads, [&](std::size_t row) {
        std::vector<double> sample(features.channels);
        const int r = static_cast<int>(row);
        for (int c = 0; c < size; ++c) {
            const Vec3 p(grid.cell_x(c), cam_height, grid.cell_z(r));
            double u = 0.0, v = 0.0;
            bool wrap = false;
            if (pinhole) {
                const auto px = project_pinhole(p, *pinhole);
                if (!px) {
                    continue;
                }
                std::tie(u, v) = *px;
                if (u < 0.0 || u > features.cols - 1 || v < 0.0 || v > features.rows - 1) {
                    continue;
                }
            } else {
                std::tie(u, v) = panorama_direction_to_pixel(p, *pano);
                if (v < -0.5 || v > features.rows - 0.5) {
                    continue;
                }
                v = std::clamp(v, 0.0, static_cast<double>(features.rows - 1));
                wrap = true;
            }
            detail::bilinear_sample(features, u, v, wrap, sample.data());
            for (int ch = 0; ch < features.channels; ++ch) {
                out.features.at(ch, r, c) = sample[ch];
            }
            out.mask.at(r, c) = 1.0;
        }
    });
    return out;
}

/// Each primitive mean lands in its nearest cell; per cell the highest point (smallest Y,
/// then lowest index) wins and writes confidence * feature.
inline BevMap direct_project(const PrimitiveSet &points, const BevGridSpec &grid) {
    grid.validate();
    const int size = grid.size;
    BevMap out{FeatureMap(points.feature_dim, size, size), ScalarMap(size, size)};
    std::vector<std::size_t> winner(static_cast<std::size_t>(size) * size, std::numeric_limits<std::size_t>::max());
    for (std::size_t i = 0; i < points.size(); ++i) {
        const auto &p = points.items[i];
        const CellCoord cell = world_to_bev_cell(p.mean, grid);
        const double rr = std::round(cell.row);
        const double cc = std::round(cell.col);
        if (!(rr >= 0.0 && rr < size && cc >= 0.0 && cc < size)) {
            continue;
        }
        auto &w = winner[static_cast<std::size_t>(rr) * size + static_cast<std::size_t>(cc)];
        if (w == std::numeric_limits<std::size_t>::max() || p.mean.y() < points.items[w].mean.y()) {
            w = i;
        }
    }
    for (int r = 0; r < size; ++r) {
        for (int c = 0; c < size; ++c) {
            const std::size_t w = winner[static_cast<std::size_t>(r) * size + c];
            if (w == std::numeric_limits<std::size_t>::max()) {
                continue;
            }
            const auto &p = points.items[w];
            for (int ch = 0; ch < points.feature_dim; ++ch) {
                out.features.at(ch, r, c) = p.confidence * p.feature[ch];
            }
            out.mask.at(r, c) = 1.0;
        }
    }
    return out;
}

} // namespace bevsplat
