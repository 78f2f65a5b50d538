// Copyright Contributors to the bevsplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "bevsplat/error.hpp"
#include "bevsplat/geometry.hpp"
#include "bevsplat/tensor.hpp"

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

namespace bevsplat {

using Vec4 = Eigen::Vector4d;

/// Quaternion stored as (w, x, y, z).
using Quat = Eigen::Vector4d;

inline constexpr double kDefaultMaxOffset = 0.5;
inline constexpr double kDefaultMaxScale = 0.5;
inline constexpr int kDefaultPrimitivesPerPixel = 3;
inline constexpr int kRawChannels = 11; // 3 offset, 3 scale, 4 quat, 1 opacity

/// Unconstrained per-slot parameters, as produced by an attribute head or held as free variables.
struct RawPrimitive {
    Vec3 offset = Vec3::Zero();
    Vec3 scale = Vec3::Zero();
    Quat quat = Quat::Zero();
    double opacity = 0.0;
};

/// Raw attribute maps laid out [N_p, 11, H, W].
class RawAttributes {
  public:
    RawAttributes() = default;
    RawAttributes(int slots, int rows, int cols)
        : slots_(slots), rows_(rows), cols_(cols),
          data_(static_cast<std::size_t>(slots) * kRawChannels * rows * cols, 0.0) {
        if (slots < 1 || rows < 1 || cols < 1) {
            throw DomainError("raw attribute maps need positive dimensions");
        }
    }

    int slots() const noexcept { return slots_; }
    int rows() const noexcept { return rows_; }
    int cols() const noexcept { return cols_; }
    std::vector<double> &data() noexcept { return data_; }
    const std::vector<double> &data() const noexcept { return data_; }

    std::size_t index(int slot, int channel, int row, int col) const {
        return ((static_cast<std::size_t>(slot) * kRawChannels + channel) * rows_ + row) * cols_ + col;
    }
    double &at(int slot, int channel, int row, int col) { return data_[index(slot, channel, row, col)]; }
    double at(int slot, int channel, int row, int col) const { return data_[index(slot, channel, row, col)]; }

    RawPrimitive slot(int k, int row, int col) const {
        RawPrimitive r;
        for (int i = 0; i < 3; ++i) {
            r.offset[i] = at(k, i, row, col);
            r.scale[i] = at(k, 3 + i, row, col);
        }
        for (int i = 0; i < 4; ++i) {
            r.quat[i] = at(k, 6 + i, row, col);
        }
        r.opacity = at(k, 10, row, col);
        return r;
    }

    void set_slot(int k, int row, int col, const RawPrimitive &r) {
        for (int i = 0; i < 3; ++i) {
            at(k, i, row, col) = r.offset[i];
            at(k, 3 + i, row, col) = r.scale[i];
        }
        for (int i = 0; i < 4; ++i) {
            at(k, 6 + i, row, col) = r.quat[i];
        }
        at(k, 10, row, col) = r.opacity;
    }

    Tensor to_tensor(DType dtype = DType::f64) const {
        Tensor t(dtype, {static_cast<std::uint64_t>(slots_), kRawChannels, static_cast<std::uint64_t>(rows_),
                         static_cast<std::uint64_t>(cols_)});
        for (std::size_t i = 0; i < data_.size(); ++i) {
            t.set(i, data_[i]);
        }
        return t;
    }

    static RawAttributes from_tensor(const Tensor &t) {
        const auto &s = t.shape();
        if (s.size() != 4 || s[1] != kRawChannels) {
            throw DomainError("raw attribute tensor must be [N_p, 11, H, W]");
        }
        RawAttributes r(static_cast<int>(s[0]), static_cast<int>(s[2]), static_cast<int>(s[3]));
        r.data_ = t.to_doubles();
        return r;
    }

  private:
    int slots_ = 0;
    int rows_ = 0;
    int cols_ = 0;
    std::vector<double> data_;
};

struct ActivatedAttributes {
    Vec3 offset;
    Vec3 scale;
    Quat rotation;
    double opacity;
};

inline double sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline constexpr double kMinQuaternionNorm = 1e-12;

/// Bounded activations: offset = max_offset*tanh, scale = max_scale*sigmoid,
/// opacity = sigmoid, rotation = normalized quaternion (identity when degenerate).
inline ActivatedAttributes activate_attributes(const RawPrimitive &raw, double max_offset = kDefaultMaxOffset,
                                               double max_scale = kDefaultMaxScale) {
    if (!(max_offset > 0.0) || !(max_scale > 0.0)) {
        throw DomainError("max_offset and max_scale must be positive");
    }
    if (!raw.offset.allFinite() || !raw.scale.allFinite() || !raw.quat.allFinite() || !std::isfinite(raw.opacity)) {
        throw DomainError("raw attributes must be finite");
    }
    ActivatedAttributes a;
    for (int i = 0; i < 3; ++i) {
        a.offset[i] = max_offset * std::tanh(raw.offset[i]);
        a.scale[i] = max_scale * sigmoid(raw.scale[i]);
    }
    a.opacity = sigmoid(raw.opacity);
    const double n = raw.quat.norm();
    a.rotation = n < kMinQuaternionNorm ? Quat(1.0, 0.0, 0.0, 0.0) : Quat(raw.quat / n);
    return a;
}

inline Mat3 rotation_from_quaternion(const Quat &q) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Mat3 r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

/// Sigma = R diag(scale^2) R^T.
inline Mat3 build_covariance(const Vec3 &scale, const Quat &rotation) {
    const Mat3 m = rotation_from_quaternion(rotation) * scale.asDiagonal();
    return m * m.transpose();
}

/// Pulls a gradient on Sigma (treated as a symmetric matrix of independent entries)
/// back onto the scale vector and the (unit) quaternion components.
inline std::pair<Vec3, Quat> covariance_backward(const Vec3 &scale, const Quat &q, const Mat3 &d_sigma) {
    const Mat3 r = rotation_from_quaternion(q);
    const Mat3 m = r * scale.asDiagonal();
    const Mat3 d_m = (d_sigma + d_sigma.transpose()) * m;

    Vec3 d_scale;
    Mat3 d_r;
    for (int j = 0; j < 3; ++j) {
        d_scale[j] = d_m.col(j).dot(r.col(j));
        d_r.col(j) = d_m.col(j) * scale[j];
    }

    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Mat3 dw, dx, dy, dz;
    dw << 0, -2 * z, 2 * y, 2 * z, 0, -2 * x, -2 * y, 2 * x, 0;
    dx << 0, 2 * y, 2 * z, 2 * y, -4 * x, -2 * w, 2 * z, 2 * w, -4 * x;
    dy << -4 * y, 2 * x, 2 * w, 2 * x, 0, 2 * z, -2 * w, 2 * z, -4 * y;
    dz << -4 * z, -2 * w, 2 * x, 2 * w, -4 * z, 2 * y, 2 * x, 2 * y, 0;
    const Quat d_q(d_r.cwiseProduct(dw).sum(), d_r.cwiseProduct(dx).sum(), d_r.cwiseProduct(dy).sum(),
                   d_r.cwiseProduct(dz).sum());
    return {d_scale, d_q};
}

/// Backward of the activations: maps gradients on activated values to raw values.
inline RawPrimitive activate_backward(const RawPrimitive &raw, const Vec3 &d_offset, const Vec3 &d_scale,
                                      const Quat &d_rotation, double d_opacity, double max_offset = kDefaultMaxOffset,
                                      double max_scale = kDefaultMaxScale) {
    RawPrimitive g;
    for (int i = 0; i < 3; ++i) {
        const double t = std::tanh(raw.offset[i]);
        g.offset[i] = d_offset[i] * max_offset * (1.0 - t * t);
        const double s = sigmoid(raw.scale[i]);
        g.scale[i] = d_scale[i] * max_scale * s * (1.0 - s);
    }
    const double o = sigmoid(raw.opacity);
    g.opacity = d_opacity * o * (1.0 - o);
    const double n = raw.quat.norm();
    if (n < kMinQuaternionNorm) {
        g.quat = Quat::Zero();
    } else {
        const Quat q = raw.quat / n;
        g.quat = (d_rotation - q * q.dot(d_rotation)) / n;
    }
    return g;
}

struct PrimitiveSource {
    int row = 0;
    int col = 0;
    int slot = 0;
};

struct GaussianPrimitive {
    Vec3 mean = Vec3::Zero();
    Vec3 scale = Vec3::Constant(0.25);
    Quat rotation = Quat(1.0, 0.0, 0.0, 0.0);
    double opacity = 0.5;
    double confidence = 1.0;
    std::vector<double> feature;
    PrimitiveSource source;
};

struct PrimitiveSet {
    int feature_dim = 0;
    std::vector<GaussianPrimitive> items;

    std::size_t size() const noexcept { return items.size(); }
};

struct PrimitiveOptions {
    int primitives_per_pixel = kDefaultPrimitivesPerPixel;
    double max_offset = kDefaultMaxOffset;
    double max_scale = kDefaultMaxScale;
};

/// Lifts every pixel into `primitives_per_pixel` Gaussians. Order: pixel-major
/// (row-major over the image), slot-minor. Primitive index = (row*W + col)*N_p + slot.
/// Offsets are applied along world axes.
inline PrimitiveSet generate_primitives(const ScalarMap &depth, const FeatureMap &features,
                                        const ScalarMap &confidence, const RawAttributes &raw, const Camera &camera,
                                        const PrimitiveOptions &options = {}) {
    const int h = depth.rows;
    const int w = depth.cols;
    if (features.rows != h || features.cols != w || confidence.rows != h || confidence.cols != w) {
        throw DomainError("depth, features and confidence maps must share H x W");
    }
    if (raw.rows() != h || raw.cols() != w || raw.slots() != options.primitives_per_pixel) {
        throw DomainError("raw attribute maps must be [N_p, 11, H, W] matching the image");
    }
    std::visit([](const auto &c) { c.validate(); }, camera);
    if (const auto *pano = std::get_if<PanoramaGeometry>(&camera)) {
        if (pano->width != w || pano->height != h) {
            throw DomainError("panorama geometry must match the image size");
        }
    }

    PrimitiveSet set;
    set.feature_dim = features.channels;
    set.items.reserve(static_cast<std::size_t>(h) * w * options.primitives_per_pixel);
    std::vector<double> pixel_feature(features.channels);
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            const double d = depth.at(r, c);
            if (!(d >= 0.0)) {
                throw DomainError("depth must be non-negative");
            }
            const Vec3 mu = backproject_pixel(camera, c, r, d);
            for (int ch = 0; ch < features.channels; ++ch) {
                pixel_feature[ch] = features.at(ch, r, c);
            }
            for (int k = 0; k < options.primitives_per_pixel; ++k) {
                const auto act = activate_attributes(raw.slot(k, r, c), options.max_offset, options.max_scale);
                GaussianPrimitive p;
                p.mean = mu + act.offset;
                p.scale = act.scale;
                p.rotation = act.rotation;
                p.opacity = act.opacity;
                p.confidence = confidence.at(r, c);
                p.feature = pixel_feature;
                p.source = {r, c, k};
                set.items.push_back(std::move(p));
            }
        }
    }
    return set;
}

} // namespace bevsplat
