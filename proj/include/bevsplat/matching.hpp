// Copyright Contributors to the bevsplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "bevsplat/error.hpp"
#include "bevsplat/parallel.hpp"
#include "bevsplat/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

namespace bevsplat {

inline constexpr double kMinNorm = 1e-12;

/// Cosine similarity indexed by integer cell offsets (d_row, d_col) in [-R, R]^2.
struct SimilarityMap {
    int radius = 0;
    double beta = 1.0;
    std::vector<double> values;

    SimilarityMap() = default;
    SimilarityMap(int r, double b) : radius(r), beta(b), values(static_cast<std::size_t>(2 * r + 1) * (2 * r + 1)) {}

    int side() const noexcept { return 2 * radius + 1; }
    double &at(int d_row, int d_col) {
        return values[static_cast<std::size_t>(d_row + radius) * side() + (d_col + radius)];
    }
    double at(int d_row, int d_col) const {
        return values[static_cast<std::size_t>(d_row + radius) * side() + (d_col + radius)];
    }
};

struct PeakResult {
    int d_row = 0;
    int d_col = 0;
    double value = 0.0;
    double dz_m = 0.0;
    double dx_m = 0.0;
};

/// C_BEV * F_BEV, channel by channel.
inline FeatureMap weight_features(const FeatureMap &f_bev, const ScalarMap &c_bev) {
    if (f_bev.rows != c_bev.rows || f_bev.cols != c_bev.cols) {
        throw DomainError("feature and confidence maps must share H x W");
    }
    FeatureMap out = f_bev;
    const std::size_t plane = f_bev.plane();
    for (int ch = 0; ch < f_bev.channels; ++ch) {
        for (std::size_t i = 0; i < plane; ++i) {
            out.data[ch * plane + i] *= c_bev.data[i];
        }
    }
    return out;
}

/// Gradients of weight_features with respect to both inputs.
inline std::pair<FeatureMap, ScalarMap> weight_features_backward(const FeatureMap &f_bev, const ScalarMap &c_bev,
                                                                 const FeatureMap &d_weighted) {
    FeatureMap d_f(f_bev.channels, f_bev.rows, f_bev.cols);
    ScalarMap d_c(c_bev.rows, c_bev.cols);
    const std::size_t plane = f_bev.plane();
    for (int ch = 0; ch < f_bev.channels; ++ch) {
        for (std::size_t i = 0; i < plane; ++i) {
            const std::size_t k = ch * plane + i;
            d_f.data[k] = d_weighted.data[k] * c_bev.data[i];
            d_c.data[i] += d_weighted.data[k] * f_bev.data[k];
        }
    }
    return {d_f, d_c};
}

namespace detail {

/// Summed-area table of per-cell squared norms, (H+1) x (W+1).
inline std::vector<double> squared_norm_table(const FeatureMap &m) {
    const int h = m.rows, w = m.cols;
    std::vector<double> sq(static_cast<std::size_t>(h) * w, 0.0);
    for (int ch = 0; ch < m.channels; ++ch) {
        for (std::size_t i = 0; i < sq.size(); ++i) {
            const double v = m.data[ch * m.plane() + i];
            sq[i] += v * v;
        }
    }
    std::vector<double> table(static_cast<std::size_t>(h + 1) * (w + 1), 0.0);
    for (int r = 0; r < h; ++r) {
        double row_sum = 0.0;
        for (int c = 0; c < w; ++c) {
            row_sum += sq[static_cast<std::size_t>(r) * w + c];
            table[static_cast<std::size_t>(r + 1) * (w + 1) + c + 1] =
                table[static_cast<std::size_t>(r) * (w + 1) + c + 1] + row_sum;
        }
    }
    return table;
}

inline double table_sum(const std::vector<double> &table, int w, int r0, int r1, int c0, int c1) {
    const auto at = [&](int r, int c) { return table[static_cast<std::size_t>(r) * (w + 1) + c]; };
    return std::max(0.0, at(r1, c1) - at(r0, c1) - at(r1, c0) + at(r0, c0));
}

/// BEV cells (u, v) that overlap the satellite map when shifted by (d_row, d_col).
struct Overlap {
    int r0, r1, c0, c1; // BEV rows [r0, r1), cols [c0, c1)
};

inline Overlap overlap_for(int rows, int cols, int d_row, int d_col) {
    return {std::max(0, -d_row), std::min(rows, rows - d_row), std::max(0, -d_col), std::min(cols, cols - d_col)};
}

} // namespace detail

/// Overlap-normalized cosine similarity. For offset (dr, dc):
///   P = sum_{u,v} <sat(u+dr, v+dc), bev(u,v)> / (|sat|_overlap * |bev|_overlap)
/// where both norms run over the overlapping rectangle. Zero when either norm vanishes.
class SimilarityEngine {
  public:
    SimilarityEngine(const FeatureMap &sat, const FeatureMap &bev) : sat_(sat), bev_(bev) {
        if (!sat.same_shape(bev)) {
            throw DomainError("satellite and BEV feature maps must have the same shape");
        }
        sat_table_ = detail::squared_norm_table(sat);
        bev_table_ = detail::squared_norm_table(bev);
        const std::size_t plane = bev.plane();
        for (std::size_t i = 0; i < plane; ++i) {
            for (int ch = 0; ch < bev.channels; ++ch) {
                if (bev.data[ch * plane + i] != 0.0) {
                    nonzero_.push_back({static_cast<int>(i) / bev.cols, static_cast<int>(i) % bev.cols});
                    break;
                }
            }
        }
        dense_ = 2 * nonzero_.size() > plane;
    }

    double norm_sat(const detail::Overlap &o, int d_row, int d_col) const {
        return std::sqrt(detail::table_sum(sat_table_, sat_.cols, o.r0 + d_row, o.r1 + d_row, o.c0 + d_col,
                                           o.c1 + d_col));
    }
    double norm_bev(const detail::Overlap &o) const {
        return std::sqrt(detail::table_sum(bev_table_, bev_.cols, o.r0, o.r1, o.c0, o.c1));
    }

    double numerator(const detail::Overlap &o, int d_row, int d_col) const {
        const std::size_t plane = bev_.plane();
        const int w = bev_.cols;
        double acc = 0.0;
        if (dense_) {
            // Four fixed lanes break the add dependency chain; order stays deterministic.
            double lane[4] = {0.0, 0.0, 0.0, 0.0};
            for (int ch = 0; ch < bev_.channels; ++ch) {
                for (int u = o.r0; u < o.r1; ++u) {
                    const double *b = bev_.data.data() + ch * plane + static_cast<std::size_t>(u) * w;
                    const double *a = sat_.data.data() + ch * plane + static_cast<std::size_t>(u + d_row) * w + d_col;
                    int v = o.c0;
                    for (; v + 4 <= o.c1; v += 4) {
                        lane[0] += a[v] * b[v];
                        lane[1] += a[v + 1] * b[v + 1];
                        lane[2] += a[v + 2] * b[v + 2];
                        lane[3] += a[v + 3] * b[v + 3];
                    }
                    for (; v < o.c1; ++v) {
                        lane[0] += a[v] * b[v];
                    }
                }
            }
            return (lane[0] + lane[1]) + (lane[2] + lane[3]);
        }
        for (const auto &[u, v] : nonzero_) {
            if (u < o.r0 || u >= o.r1 || v < o.c0 || v >= o.c1) {
                continue;
            }
            const std::size_t bev_idx = static_cast<std::size_t>(u) * w + v;
            const std::size_t sat_idx = static_cast<std::size_t>(u + d_row) * w + (v + d_col);
            for (int ch = 0; ch < bev_.channels; ++ch) {
                acc += sat_.data[ch * plane + sat_idx] * bev_.data[ch * plane + bev_idx];
            }
        }
        return acc;
    }

    double value(int d_row, int d_col) const {
        const auto o = detail::overlap_for(bev_.rows, bev_.cols, d_row, d_col);
        if (o.r0 >= o.r1 || o.c0 >= o.c1) {
            return 0.0;
        }
        const double ns = norm_sat(o, d_row, d_col);
        const double nb = norm_bev(o);
        if (ns < kMinNorm || nb < kMinNorm) {
            return 0.0;
        }
        return numerator(o, d_row, d_col) / (ns * nb);
    }

    /// Adds d(value)/d(bev) * upstream into `d_bev`.
    void accumulate_gradient(int d_row, int d_col, double upstream, FeatureMap &d_bev) const {
        if (upstream == 0.0) {
            return;
        }
        const auto o = detail::overlap_for(bev_.rows, bev_.cols, d_row, d_col);
        if (o.r0 >= o.r1 || o.c0 >= o.c1) {
            return;
        }
        const double ns = norm_sat(o, d_row, d_col);
        const double nb = norm_bev(o);
        if (ns < kMinNorm || nb < kMinNorm) {
            return;
        }
        const double val = numerator(o, d_row, d_col) / (ns * nb);
        const double a = upstream / (ns * nb);
        const double b = upstream * val / (nb * nb);
        const std::size_t plane = bev_.plane();
        const int w = bev_.cols;
        for (int ch = 0; ch < bev_.channels; ++ch) {
            for (int u = o.r0; u < o.r1; ++u) {
                for (int v = o.c0; v < o.c1; ++v) {
                    const std::size_t bi = ch * plane + static_cast<std::size_t>(u) * w + v;
                    const std::size_t si = ch * plane + static_cast<std::size_t>(u + d_row) * w + (v + d_col);
                    d_bev.data[bi] += a * sat_.data[si] - b * bev_.data[bi];
                }
            }
        }
    }

  private:
    const FeatureMap &sat_;
    const FeatureMap &bev_;
    std::vector<double> sat_table_;
    std::vector<double> bev_table_;
    std::vector<std::pair<int, int>> nonzero_; // (row, col) of cells with any nonzero channel
    bool dense_ = false;
};

inline void check_radius(const FeatureMap &m, int radius) {
    if (radius < 0 || radius > std::min(m.rows, m.cols) - 1) {
        throw DomainError("search radius must lie in [0, S-1]");
    }
}

inline SimilarityMap similarity_map(const FeatureMap &f_sat, const FeatureMap &f_bev_w, int radius, double beta,
                                    int threads = 0) {
    check_radius(f_bev_w, radius);
    const SimilarityEngine engine(f_sat, f_bev_w);
    SimilarityMap map(radius, beta);
    const int side = map.side();
    parallel_for(static_cast<std::size_t>(side), threads, [&](std::size_t i) {
        const int d_row = static_cast<int>(i) - radius;
        for (int d_col = -radius; d_col <= radius; ++d_col) {
            map.at(d_row, d_col) = engine.value(d_row, d_col);
        }
    });
    return map;
}

/// Maximum over [row_lo, row_hi] x [col_lo, col_hi] (offset coordinates, inclusive);
/// ties go to the first cell in row-major order.
inline PeakResult peak_in(const SimilarityMap &m, int row_lo, int row_hi, int col_lo, int col_hi) {
    if (row_lo > row_hi || col_lo > col_hi) {
        throw DomainError("empty peak window");
    }
    PeakResult best;
    bool have = false;
    for (int r = row_lo; r <= row_hi; ++r) {
        for (int c = col_lo; c <= col_hi; ++c) {
            const double v = m.at(r, c);
            if (!have || v > best.value) {
                best.d_row = r;
                best.d_col = c;
                best.value = v;
                have = true;
            }
        }
    }
    best.dz_m = best.d_row * m.beta;
    best.dx_m = best.d_col * m.beta;
    return best;
}

inline PeakResult peak(const SimilarityMap &m) {
    if (m.values.empty()) {
        throw DomainError("empty similarity map");
    }
    return peak_in(m, -m.radius, m.radius, -m.radius, m.radius);
}

/// Bilinear rotation of every channel about the map center; samples outside become zero.
inline FeatureMap rotate_feature_map(const FeatureMap &m, double angle_rad) {
    FeatureMap out(m.channels, m.rows, m.cols);
    const double cr = 0.5 * (m.rows - 1);
    const double cc = 0.5 * (m.cols - 1);
    const double ca = std::cos(angle_rad);
    const double sa = std::sin(angle_rad);
    for (int r = 0; r < m.rows; ++r) {
        for (int c = 0; c < m.cols; ++c) {
            // Inverse mapping: source = R(-angle) * (dest - center) + center.
            const double y = r - cr;
            const double x = c - cc;
            const double sr = ca * y + sa * x + cr;
            const double sc = -sa * y + ca * x + cc;
            const int r0 = static_cast<int>(std::floor(sr));
            const int c0 = static_cast<int>(std::floor(sc));
            const double fr = sr - r0;
            const double fc = sc - c0;
            for (int ch = 0; ch < m.channels; ++ch) {
                double acc = 0.0;
                for (int dr = 0; dr <= 1; ++dr) {
                    for (int dc = 0; dc <= 1; ++dc) {
                        const int rr = r0 + dr;
                        const int cc2 = c0 + dc;
                        if (rr < 0 || rr >= m.rows || cc2 < 0 || cc2 >= m.cols) {
                            continue;
                        }
                        acc += (dr ? fr : 1.0 - fr) * (dc ? fc : 1.0 - fc) * m.at(ch, rr, cc2);
                    }
                }
                out.at(ch, r, c) = acc;
            }
        }
    }
    return out;
}

struct RotationSearchResult {
    double angle_rad = 0.0;
    PeakResult peak;
};

/// Exhaustive orientation grid: rotates the BEV map by k * 2pi / steps and keeps the best peak.
inline RotationSearchResult search_rotations(const FeatureMap &f_sat, const FeatureMap &f_bev_w, int radius,
                                             double beta, int steps, int threads = 0) {
    if (steps < 1) {
        throw DomainError("rotation steps must be >= 1");
    }
    RotationSearchResult best;
    for (int k = 0; k < steps; ++k) {
        const double angle = 2.0 * std::numbers::pi * k / steps;
        const FeatureMap rotated = k == 0 ? f_bev_w : rotate_feature_map(f_bev_w, angle);
        const PeakResult p = peak(similarity_map(f_sat, rotated, radius, beta, threads));
        if (k == 0 || p.value > best.peak.value) {
            best = {angle, p};
        }
    }
    return best;
}

} // namespace bevsplat
