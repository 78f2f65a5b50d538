// Copyright Contributors to the bevsplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

// World frame (OpenCV style): +X right of the ground camera, +Y down, +Z forward.
// The BEV camera sits above the scene (smaller Y) and looks along +Y, so the BEV
// image plane is the XZ plane: cell rows follow world z, cell columns follow world x.

#include "bevsplat/error.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <variant>

namespace bevsplat {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;

struct PinholeIntrinsics {
    double fx = 1.0;
    double fy = 1.0;
    double cx = 0.0;
    double cy = 0.0;

    void validate() const {
        if (!(fx > 0.0) || !(fy > 0.0)) {
            throw DomainError("pinhole focal lengths must be positive");
        }
    }
};

/// Equirectangular panorama: columns span azimuth [0, 2pi), rows span polar angle [0, pi].
struct PanoramaGeometry {
    int width = 2;
    int height = 2;

    void validate() const {
        if (width < 2 || height < 2) {
            throw DomainError("panorama must be at least 2x2 pixels");
        }
    }
};

using Camera = std::variant<PinholeIntrinsics, PanoramaGeometry>;

/// Metric BEV grid. Cell (row, col) has its center at world (x, z) =
/// (origin_x + col * beta, origin_z + row * beta).
struct BevGridSpec {
    int size = 128;
    double beta = 1.0;
    double origin_x = 0.0;
    double origin_z = 0.0;

    void validate() const {
        if (size < 1) {
            throw DomainError("grid size must be >= 1");
        }
        if (!(beta > 0.0)) {
            throw DomainError("grid beta must be positive");
        }
    }

    /// Grid with the camera (world origin) at cell (size/2, size/2).
    static BevGridSpec centered(int size, double beta) {
        BevGridSpec g{size, beta, 0.0, 0.0};
        g.origin_x = -static_cast<double>(size / 2) * beta;
        g.origin_z = g.origin_x;
        g.validate();
        return g;
    }

    double cell_x(double col) const { return origin_x + col * beta; }
    double cell_z(double row) const { return origin_z + row * beta; }
};

struct CellCoord {
    double row = 0.0;
    double col = 0.0;
};

inline Vec3 backproject_pinhole(double u, double v, double depth, const PinholeIntrinsics &k) {
    return {(u - k.cx) / k.fx * depth, (v - k.cy) / k.fy * depth, depth};
}

/// Unit viewing direction for azimuth `u_ang` and polar angle `v_ang` (0 = straight up, -Y).
inline Vec3 panorama_direction(double u_ang, double v_ang) {
    const double sv = std::sin(v_ang);
    return {-sv * std::cos(u_ang), -std::cos(v_ang), -sv * std::sin(u_ang)};
}

inline Vec3 backproject_panorama(double u_ang, double v_ang, double depth) {
    if (!(v_ang >= 0.0 && v_ang <= std::numbers::pi)) {
        throw DomainError("panorama polar angle must lie in [0, pi]");
    }
    return depth * panorama_direction(u_ang, v_ang);
}

/// Pixel-center convention: column u maps to 2*pi*(u + 0.5)/width.
inline std::pair<double, double> panorama_pixel_to_angles(double u_px, double v_px, const PanoramaGeometry &g) {
    if (!(u_px >= 0.0 && u_px < g.width) || !(v_px >= 0.0 && v_px < g.height)) {
        throw DomainError("panorama pixel out of range");
    }
    return {2.0 * std::numbers::pi * (u_px + 0.5) / g.width, std::numbers::pi * (v_px + 0.5) / g.height};
}

/// Inverse of the panorama mapping: continuous pixel coordinates (column, row) of a
/// direction, using the same pixel-center convention. Row may fall in [-0.5, height-0.5].
inline std::pair<double, double> panorama_direction_to_pixel(const Vec3 &dir, const PanoramaGeometry &g) {
    const Vec3 d = dir.normalized();
    const double v_ang = std::acos(std::clamp(-d.y(), -1.0, 1.0));
    double u_ang = std::atan2(-d.z(), -d.x());
    if (u_ang < 0.0) {
        u_ang += 2.0 * std::numbers::pi;
    }
    return {u_ang * g.width / (2.0 * std::numbers::pi) - 0.5, v_ang * g.height / std::numbers::pi - 0.5};
}

/// Continuous pinhole pixel of a camera-frame point, or nullopt when it is not in front.
inline std::optional<std::pair<double, double>> project_pinhole(const Vec3 &p, const PinholeIntrinsics &k) {
    if (!(p.z() > 0.0)) {
        return std::nullopt;
    }
    return std::pair{k.fx * p.x() / p.z() + k.cx, k.fy * p.y() / p.z() + k.cy};
}

inline CellCoord world_to_bev_cell(const Vec3 &p, const BevGridSpec &grid) {
    return {(p.z() - grid.origin_z) / grid.beta, (p.x() - grid.origin_x) / grid.beta};
}

/// Back-projects pixel (col, row) of an image with the given depth.
/// Pinhole pixels use integer coordinates directly; panorama pixels use their centers.
inline Vec3 backproject_pixel(const Camera &camera, int col, int row, double depth) {
    if (const auto *k = std::get_if<PinholeIntrinsics>(&camera)) {
        return backproject_pinhole(col, row, depth, *k);
    }
    const auto &g = std::get<PanoramaGeometry>(camera);
    const auto [u_ang, v_ang] = panorama_pixel_to_angles(col, row, g);
    return backproject_panorama(u_ang, v_ang, depth);
}

/// Ray direction (not normalized for pinhole: z component 1) through pixel (col, row).
inline Vec3 pixel_ray(const Camera &camera, int col, int row) { return backproject_pixel(camera, col, row, 1.0); }

} // namespace bevsplat
