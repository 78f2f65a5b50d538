// Copyright Contributors to the bevsplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "bevsplat/error.hpp"

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace bevsplat {

enum class DType : std::uint32_t { f32 = 0, f64 = 1 };

inline std::size_t dtype_width(DType d) { return d == DType::f32 ? 4 : 8; }

/// Dense row-major array of f32 or f64 scalars with 1 to 4 dimensions.
/// Storage keeps the native scalar type so that file round-trips are bitwise.
class Tensor {
  public:
    Tensor() : Tensor(DType::f64, {1}) {}

    Tensor(DType dtype, std::vector<std::uint64_t> shape) : dtype_(dtype), shape_(std::move(shape)) {
        validate_shape(shape_);
        const std::size_t n = element_count(shape_);
        if (dtype_ == DType::f32) {
            storage_ = std::vector<float>(n, 0.0f);
        } else {
            storage_ = std::vector<double>(n, 0.0);
        }
    }

    Tensor(std::vector<std::uint64_t> shape, std::vector<float> values)
        : dtype_(DType::f32), shape_(std::move(shape)), storage_(std::move(values)) {
        validate_shape(shape_);
        check_payload();
    }

    Tensor(std::vector<std::uint64_t> shape, std::vector<double> values)
        : dtype_(DType::f64), shape_(std::move(shape)), storage_(std::move(values)) {
        validate_shape(shape_);
        check_payload();
    }

    DType dtype() const noexcept { return dtype_; }
    const std::vector<std::uint64_t> &shape() const noexcept { return shape_; }
    std::size_t ndim() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return element_count(shape_); }

    double value(std::size_t i) const {
        if (dtype_ == DType::f32) {
            return std::get<std::vector<float>>(storage_)[i];
        }
        return std::get<std::vector<double>>(storage_)[i];
    }

    void set(std::size_t i, double v) {
        if (dtype_ == DType::f32) {
            std::get<std::vector<float>>(storage_)[i] = static_cast<float>(v);
        } else {
            std::get<std::vector<double>>(storage_)[i] = v;
        }
    }

    std::vector<double> to_doubles() const {
        std::vector<double> out(size());
        for (std::size_t i = 0; i < out.size(); ++i) {
            out[i] = value(i);
        }
        return out;
    }

    std::span<const float> f32() const { return std::get<std::vector<float>>(storage_); }
    std::span<const double> f64() const { return std::get<std::vector<double>>(storage_); }

    bool operator==(const Tensor &other) const = default;

    static std::size_t element_count(const std::vector<std::uint64_t> &shape) {
        std::size_t n = 1;
        for (auto d : shape) {
            n *= static_cast<std::size_t>(d);
        }
        return n;
    }

    static void validate_shape(const std::vector<std::uint64_t> &shape) {
        if (shape.empty() || shape.size() > 4) {
            throw DomainError("tensor must have 1 to 4 dimensions, got " + std::to_string(shape.size()));
        }
        for (auto d : shape) {
            if (d < 1) {
                throw DomainError("tensor dimensions must be >= 1");
            }
        }
    }

  private:
    void check_payload() const {
        const std::size_t have = dtype_ == DType::f32 ? std::get<std::vector<float>>(storage_).size()
                                                      : std::get<std::vector<double>>(storage_).size();
        if (have != element_count(shape_)) {
            throw DomainError("payload length does not match shape");
        }
    }

    DType dtype_;
    std::vector<std::uint64_t> shape_;
    std::variant<std::vector<float>, std::vector<double>> storage_;
};

/// C x H x W grid of feature vectors, channel-major like the `.bvt` layout.
struct FeatureMap {
    int channels = 0;
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    FeatureMap() = default;
    FeatureMap(int c, int h, int w, double fill = 0.0)
        : channels(c), rows(h), cols(w), data(static_cast<std::size_t>(c) * h * w, fill) {
        if (c < 0 || h < 0 || w < 0) {
            throw DomainError("negative feature map dimension");
        }
    }

    std::size_t plane() const noexcept { return static_cast<std::size_t>(rows) * cols; }
    double &at(int c, int r, int w) { return data[c * plane() + static_cast<std::size_t>(r) * cols + w]; }
    double at(int c, int r, int w) const { return data[c * plane() + static_cast<std::size_t>(r) * cols + w]; }
    bool same_shape(const FeatureMap &o) const { return channels == o.channels && rows == o.rows && cols == o.cols; }
    bool operator==(const FeatureMap &) const = default;
};

/// H x W grid of scalars (depth, confidence, transmittance, masks).
struct ScalarMap {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    ScalarMap() = default;
    ScalarMap(int h, int w, double fill = 0.0) : rows(h), cols(w), data(static_cast<std::size_t>(h) * w, fill) {
        if (h < 0 || w < 0) {
            throw DomainError("negative scalar map dimension");
        }
    }

    double &at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
    double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
    bool operator==(const ScalarMap &) const = default;
};

inline Tensor to_tensor(const FeatureMap &m, DType dtype = DType::f64) {
    Tensor t(dtype, {static_cast<std::uint64_t>(m.channels), static_cast<std::uint64_t>(m.rows),
                     static_cast<std::uint64_t>(m.cols)});
    for (std::size_t i = 0; i < m.data.size(); ++i) {
        t.set(i, m.data[i]);
    }
    return t;
}

inline Tensor to_tensor(const ScalarMap &m, DType dtype = DType::f64) {
    Tensor t(dtype, {static_cast<std::uint64_t>(m.rows), static_cast<std::uint64_t>(m.cols)});
    for (std::size_t i = 0; i < m.data.size(); ++i) {
        t.set(i, m.data[i]);
    }
    return t;
}

/// Accepts [C,H,W], or [H,W] as a single channel.
inline FeatureMap feature_map_from(const Tensor &t) {
    const auto &s = t.shape();
    if (s.size() == 2) {
        FeatureMap m(1, static_cast<int>(s[0]), static_cast<int>(s[1]));
        m.data = t.to_doubles();
        return m;
    }
    if (s.size() != 3) {
        throw DomainError("feature map tensor must be [C,H,W]");
    }
    FeatureMap m(static_cast<int>(s[0]), static_cast<int>(s[1]), static_cast<int>(s[2]));
    m.data = t.to_doubles();
    return m;
}

inline ScalarMap scalar_map_from(const Tensor &t) {
    const auto &s = t.shape();
    if (s.size() == 3 && s[0] == 1) {
        ScalarMap m(static_cast<int>(s[1]), static_cast<int>(s[2]));
        m.data = t.to_doubles();
        return m;
    }
    if (s.size() != 2) {
        throw DomainError("scalar map tensor must be [H,W]");
    }
    ScalarMap m(static_cast<int>(s[0]), static_cast<int>(s[1]));
    m.data = t.to_doubles();
    return m;
}

} // namespace bevsplat
