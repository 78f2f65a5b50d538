// Copyright Contributors to the bevsplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Weakly supervised metric loss over similarity peaks, the noisy-label window loss,
// and their combination. Peaks are treated as selections: gradients flow only into the
// argmax cells picked in the forward pass.

#include "bevsplat/error.hpp"
#include "bevsplat/matching.hpp"
#include "bevsplat/primitives.hpp"

#include <cmath>
#include <span>
#include <vector>

namespace bevsplat {

struct LossConfig {
    double alpha = 10.0;
    double d = 5.0;    // window radius (m)
    int lambda1 = 0;   // 1 when noisy location labels are used
    int negatives = 4; // M
};

/// log(1 + e^x) without overflow.
inline double softplus(double x) {
    if (x > 0.0) {
        return x + std::log1p(std::exp(-x));
    }
    return std::log1p(std::exp(x));
}

inline double weakly_loss(double peak_pos, std::span<const double> peaks_neg, double alpha = 10.0) {
    if (peaks_neg.empty()) {
        throw DomainError("weakly loss needs at least one negative");
    }
    double sum = 0.0;
    for (const double n : peaks_neg) {
        sum += softplus(alpha * (n - peak_pos));
    }
    return sum / static_cast<double>(peaks_neg.size());
}

struct WeaklyGradient {
    double d_pos = 0.0;
    std::vector<double> d_neg;
};

inline WeaklyGradient weakly_loss_backward(double peak_pos, std::span<const double> peaks_neg, double alpha = 10.0) {
    if (peaks_neg.empty()) {
        throw DomainError("weakly loss needs at least one negative");
    }
    WeaklyGradient g;
    const double m = static_cast<double>(peaks_neg.size());
    for (const double n : peaks_neg) {
        const double s = sigmoid(alpha * (n - peak_pos)) * alpha / m;
        g.d_neg.push_back(s);
        g.d_pos -= s;
    }
    return g;
}

struct GpsLossResult {
    double loss = 0.0;
    PeakResult global;
    PeakResult window;
    int half_width = 0;
};

/// |Peak(P) - Peak(P restricted to label +- ceil(d/beta))|, window clipped to the map.
/// The label is given in offset cells (d_row, d_col).
inline GpsLossResult gps_loss(const SimilarityMap &p_pos, int label_row, int label_col, double d, double beta) {
    if (!(d > 0.0) || !(beta > 0.0)) {
        throw DomainError("gps window radius and beta must be positive");
    }
    const int r = p_pos.radius;
    if (std::abs(label_row) > r || std::abs(label_col) > r) {
        throw DomainError("label lies outside the similarity map");
    }
    GpsLossResult out;
    out.half_width = static_cast<int>(std::ceil(d / beta - 1e-12));
    const int r0 = std::max(-r, label_row - out.half_width);
    const int r1 = std::min(r, label_row + out.half_width);
    const int c0 = std::max(-r, label_col - out.half_width);
    const int c1 = std::min(r, label_col + out.half_width);
    if (r0 > r1 || c0 > c1) {
        throw DomainError("gps window is empty after clipping");
    }
    out.global = peak(p_pos);
    out.window = peak_in(p_pos, r0, r1, c0, c1);
    out.loss = std::abs(out.global.value - out.window.value);
    return out;
}

/// Subgradient of |global - window|: +-1 on the two selected cells, zero when they agree.
struct GpsGradient {
    double d_global = 0.0;
    double d_window = 0.0;
};

inline GpsGradient gps_loss_backward(const GpsLossResult &r) {
    const double diff = r.global.value - r.window.value;
    if (diff == 0.0) {
        return {};
    }
    const double s = diff > 0.0 ? 1.0 : -1.0;
    return {s, -s};
}

inline double total_loss(double l_weakly, double l_gps, int lambda1) {
    if (lambda1 != 0 && lambda1 != 1) {
        throw DomainError("lambda1 must be 0 or 1");
    }
    return l_weakly + lambda1 * l_gps;
}

struct LossReport {
    double l_weakly = 0.0;
    double l_gps = 0.0;
    double l_total = 0.0;
    int lambda1 = 0;
    double alpha = 10.0;
    double d = 5.0;
};

} // namespace bevsplat
