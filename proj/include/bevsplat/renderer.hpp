// Copyright Contributors to the bevsplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Orthographic BEV splatting. Splats are composited front to back in ascending
// world Y (top first):
//
//   F_BEV(p) = sum_b f_b a_b T_b,   C_BEV(p) = sum_b c_b a_b T_b,   T_b = prod_{j<b} (1 - a_j)
//   a_b = min(alpha_max, O_b * exp(-0.5 d^T A_b d)),   d = p - mean2_b
//
// The tiled renderer bins splats into square tiles and runs tiles in parallel. Each cell
// reads the globally sorted list, so outputs do not depend on the worker count.

#include "bevsplat/error.hpp"
#include "bevsplat/geometry.hpp"
#include "bevsplat/parallel.hpp"
#include "bevsplat/primitives.hpp"
#include "bevsplat/tensor.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

namespace bevsplat {

struct RenderSettings {
    double dilation = 0.3;            // cell^2 added to the projected covariance
    double alpha_max = 0.99;
    double alpha_min = 1.0 / 255.0;   // contributions below are skipped
    double transmittance_min = 1e-4;  // per-cell early termination
    double footprint_sigmas = 3.0;
    bool use_footprint = true;
    int tile_size = 16;

    /// No alpha floor, no early termination, no footprint bound; only the alpha clamp remains.
    /// The result is a smooth function of the splat parameters away from the clamp.
    static RenderSettings exact() {
        RenderSettings s;
        s.alpha_min = 0.0;
        s.transmittance_min = 0.0;
        s.use_footprint = false;
        return s;
    }
};

struct Splat2D {
    Vec2 mean2 = Vec2::Zero(); // (row, col) in cells
    Mat2 inv_cov2 = Mat2::Identity();
    double base_opacity = 0.0;
    std::vector<double> feature;
    double confidence = 0.0;
    double sort_key = 0.0; // world Y of the mean
    double radius = 0.0;   // cells
    std::size_t id = 0;
};

/// Projected 2D covariance (row/col = z/x) in cell units, including dilation.
inline Mat2 projected_covariance(const Mat3 &sigma3, double beta, double dilation) {
    Mat2 s;
    s << sigma3(2, 2), sigma3(2, 0), sigma3(0, 2), sigma3(0, 0);
    return s / (beta * beta) + dilation * Mat2::Identity();
}

inline Splat2D project_to_bev(const GaussianPrimitive &p, std::size_t id, const BevGridSpec &grid,
                              const RenderSettings &settings = {}) {
    const Mat3 sigma3 = build_covariance(p.scale, p.rotation);
    const Mat2 sigma2 = projected_covariance(sigma3, grid.beta, settings.dilation);
    const double det = sigma2.determinant();
    if (!(det > 0.0) || !std::isfinite(det)) {
        throw std::logic_error("projected covariance is singular");
    }
    Splat2D s;
    const CellCoord cell = world_to_bev_cell(p.mean, grid);
    s.mean2 = {cell.row, cell.col};
    s.inv_cov2 = sigma2.inverse();
    s.base_opacity = p.opacity;
    s.feature = p.feature;
    s.confidence = p.confidence;
    s.sort_key = p.mean.y();
    const double lambda_max = Eigen::SelfAdjointEigenSolver<Mat2>(sigma2, Eigen::EigenvaluesOnly).eigenvalues()[1];
    s.radius = settings.footprint_sigmas * std::sqrt(lambda_max);
    s.id = id;
    return s;
}

inline std::vector<Splat2D> project_all(const PrimitiveSet &set, const BevGridSpec &grid,
                                        const RenderSettings &settings = {}) {
    grid.validate();
    std::vector<Splat2D> out;
    out.reserve(set.size());
    for (std::size_t i = 0; i < set.size(); ++i) {
        out.push_back(project_to_bev(set.items[i], i, grid, settings));
    }
    return out;
}

struct BevOutput {
    FeatureMap f_bev;
    ScalarMap c_bev;
    ScalarMap final_t;
};

struct SplatGradient {
    std::vector<double> d_feature;
    double d_confidence = 0.0;
    double d_opacity = 0.0;
    Vec2 d_mean2 = Vec2::Zero();
    Mat2 d_inv_cov2 = Mat2::Zero(); // symmetric; entries treated as independent
};

/// Indexed like the input splat list.
struct GradientBundle {
    std::vector<SplatGradient> splats;
};

namespace detail {

/// Positions into `splats`, ascending by (sort_key, id, position).
inline std::vector<std::uint32_t> depth_order(const std::vector<Splat2D> &splats) {
    std::vector<std::uint32_t> order(splats.size());
    std::iota(order.begin(), order.end(), 0u);
    std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
        const auto &sa = splats[a];
        const auto &sb = splats[b];
        if (sa.sort_key != sb.sort_key) {
            return sa.sort_key < sb.sort_key;
        }
        if (sa.id != sb.id) {
            return sa.id < sb.id;
        }
        return a < b;
    });
    return order;
}

inline void check_splats(const std::vector<Splat2D> &splats, int channels) {
    for (const auto &s : splats) {
        if (static_cast<int>(s.feature.size()) != channels) {
            throw DomainError("splat feature length does not match the requested channel count");
        }
        if (!s.mean2.allFinite() || !s.inv_cov2.allFinite() || !std::isfinite(s.base_opacity) ||
            !std::isfinite(s.sort_key)) {
            throw DomainError("splats must be finite");
        }
    }
}

struct TileLayout {
    int tile = 16;
    int per_side = 1;
    std::vector<std::vector<std::uint32_t>> lists; // positions into the splat list, depth-ordered

    int tile_count() const { return per_side * per_side; }
};

inline TileLayout bin_splats(const std::vector<Splat2D> &splats, const std::vector<std::uint32_t> &order,
                             int size, const RenderSettings &settings) {
    TileLayout layout;
    layout.tile = std::max(1, settings.tile_size);
    layout.per_side = (size + layout.tile - 1) / layout.tile;
    layout.lists.resize(static_cast<std::size_t>(layout.tile_count()));
    for (const auto pos : order) {
        const auto &s = splats[pos];
        int t_r0 = 0, t_r1 = layout.per_side - 1, t_c0 = 0, t_c1 = layout.per_side - 1;
        if (settings.use_footprint) {
            const double r0 = std::ceil(s.mean2[0] - s.radius);
            const double r1 = std::floor(s.mean2[0] + s.radius);
            const double c0 = std::ceil(s.mean2[1] - s.radius);
            const double c1 = std::floor(s.mean2[1] + s.radius);
            if (r1 < 0.0 || c1 < 0.0 || r0 > size - 1 || c0 > size - 1 || r0 > r1 || c0 > c1) {
                continue;
            }
            t_r0 = static_cast<int>(std::max(0.0, r0)) / layout.tile;
            t_r1 = static_cast<int>(std::min<double>(size - 1, r1)) / layout.tile;
            t_c0 = static_cast<int>(std::max(0.0, c0)) / layout.tile;
            t_c1 = static_cast<int>(std::min<double>(size - 1, c1)) / layout.tile;
        }
        for (int tr = t_r0; tr <= t_r1; ++tr) {
            for (int tc = t_c0; tc <= t_c1; ++tc) {
                layout.lists[static_cast<std::size_t>(tr) * layout.per_side + tc].push_back(pos);
            }
        }
    }
    return layout;
}

inline bool outside_footprint(const Splat2D &s, double row, double col) {
    return std::abs(row - s.mean2[0]) > s.radius || std::abs(col - s.mean2[1]) > s.radius;
}

// Weights and transmittances below the smallest normal double are flushed to zero in
// every pass. What is dropped is below 1e-307 per term; subnormal arithmetic would
// otherwise dominate dense full-scan renders.
inline constexpr double kFlush = std::numeric_limits<double>::min();

inline double gaussian_weight(const Splat2D &s, double dr, double dc) {
    const double q = s.inv_cov2(0, 0) * dr * dr + 2.0 * s.inv_cov2(0, 1) * dr * dc + s.inv_cov2(1, 1) * dc * dc;
    if (0.5 * q > 709.0) { // exp(-709) < kFlush: same result without the call
        return 0.0;
    }
    const double g = std::exp(-0.5 * q);
    return g < kFlush ? 0.0 : g;
}

} // namespace detail

/// Tiled, parallel forward pass. Within a tile the loop is splat-major with per-cell
/// state, so each cell still sees its splats front to back with the same arithmetic.
inline BevOutput render_forward(const std::vector<Splat2D> &splats, const BevGridSpec &grid, int channels,
                                const RenderSettings &settings = {}, int threads = 0) {
    grid.validate();
    detail::check_splats(splats, channels);
    const int size = grid.size;
    BevOutput out{FeatureMap(channels, size, size), ScalarMap(size, size), ScalarMap(size, size, 1.0)};
    const auto order = detail::depth_order(splats);
    const auto layout = detail::bin_splats(splats, order, size, settings);

    parallel_for(static_cast<std::size_t>(layout.tile_count()), threads, [&](std::size_t t) {
        const auto &list = layout.lists[t];
        const int r_begin = static_cast<int>(t / layout.per_side) * layout.tile;
        const int c_begin = static_cast<int>(t % layout.per_side) * layout.tile;
        const int r_end = std::min(size, r_begin + layout.tile);
        const int c_end = std::min(size, c_begin + layout.tile);
        const int tw = c_end - c_begin;
        const std::size_t cells = static_cast<std::size_t>(r_end - r_begin) * tw;
        std::vector<double> acc(cells * channels, 0.0), acc_conf(cells, 0.0), trans(cells, 1.0);
        std::vector<char> done(cells, 0);
        std::size_t active = cells;

        for (const auto pos : list) {
            if (active == 0) {
                break;
            }
            const auto &s = splats[pos];
            int r0 = r_begin, r1 = r_end - 1, c0 = c_begin, c1 = c_end - 1;
            if (settings.use_footprint) {
                // Loose integer bounds; the exact test below decides.
                r0 = std::max(r0, static_cast<int>(std::floor(s.mean2[0] - s.radius)) - 1);
                r1 = std::min(r1, static_cast<int>(std::ceil(s.mean2[0] + s.radius)) + 1);
                c0 = std::max(c0, static_cast<int>(std::floor(s.mean2[1] - s.radius)) - 1);
                c1 = std::min(c1, static_cast<int>(std::ceil(s.mean2[1] + s.radius)) + 1);
            }
            for (int r = r0; r <= r1; ++r) {
                for (int c = c0; c <= c1; ++c) {
                    const std::size_t k = static_cast<std::size_t>(r - r_begin) * tw + (c - c_begin);
                    if (done[k] || (settings.use_footprint && detail::outside_footprint(s, r, c))) {
                        continue;
                    }
                    const double g = detail::gaussian_weight(s, r - s.mean2[0], c - s.mean2[1]);
                    const double alpha = std::min(settings.alpha_max, s.base_opacity * g);
                    if (alpha < settings.alpha_min || alpha < detail::kFlush) {
                        continue;
                    }
                    const double w = alpha * trans[k];
                    double *a = &acc[k * channels];
                    for (int ch = 0; ch < channels; ++ch) {
                        a[ch] += s.feature[ch] * w;
                    }
                    acc_conf[k] += s.confidence * w;
                    trans[k] *= 1.0 - alpha;
                    if (trans[k] < detail::kFlush) {
                        trans[k] = 0.0;
                        done[k] = 1;
                        --active;
                    } else if (trans[k] < settings.transmittance_min) {
                        done[k] = 1;
                        --active;
                    }
                }
            }
        }
        for (int r = r_begin; r < r_end; ++r) {
            for (int c = c_begin; c < c_end; ++c) {
                const std::size_t k = static_cast<std::size_t>(r - r_begin) * tw + (c - c_begin);
                for (int ch = 0; ch < channels; ++ch) {
                    out.f_bev.at(ch, r, c) = acc[k * channels + ch];
                }
                out.c_bev.at(r, c) = acc_conf[k];
                out.final_t.at(r, c) = trans[k];
            }
        }
    });
    return out;
}

/// Oracle renderer: every cell scans every splat in depth order; no tiling, footprint,
/// alpha floor or early termination (beyond the subnormal flush). Single-threaded.
inline BevOutput render_reference(const std::vector<Splat2D> &splats, const BevGridSpec &grid, int channels,
                                  double alpha_max = 0.99) {
    grid.validate();
    detail::check_splats(splats, channels);
    std::vector<const Splat2D *> sorted;
    sorted.reserve(splats.size());
    for (const auto &s : splats) {
        sorted.push_back(&s);
    }
    std::stable_sort(sorted.begin(), sorted.end(), [](const Splat2D *a, const Splat2D *b) {
        return a->sort_key < b->sort_key || (a->sort_key == b->sort_key && a->id < b->id);
    });

    const int size = grid.size;
    BevOutput out{FeatureMap(channels, size, size), ScalarMap(size, size), ScalarMap(size, size, 1.0)};
    // Splat-major sweep over the whole grid; per cell the order of operations is the
    // plain front-to-back scan.
    for (const Splat2D *s : sorted) {
        for (int r = 0; r < size; ++r) {
            for (int c = 0; c < size; ++c) {
                double &trans = out.final_t.at(r, c);
                if (trans == 0.0) {
                    continue;
                }
                const double g = detail::gaussian_weight(*s, r - s->mean2[0], c - s->mean2[1]);
                const double alpha = std::min(alpha_max, s->base_opacity * g);
                if (alpha < detail::kFlush) {
                    continue;
                }
                const double w = alpha * trans;
                for (int ch = 0; ch < channels; ++ch) {
                    out.f_bev.at(ch, r, c) += s->feature[ch] * w;
                }
                out.c_bev.at(r, c) += s->confidence * w;
                trans *= 1.0 - alpha;
                if (trans < detail::kFlush) {
                    trans = 0.0;
                }
            }
        }
    }
    return out;
}

/// Analytic backward pass of render_forward under the same settings.
///
/// Per contributing splat b at a cell, with S_b the composited sum of everything behind b:
///   dL/df_b = dL/dF * a_b T_b
///   dL/da_b = dL/dF . (f_b T_b - S_b / (1 - a_b))  =  dL/dF . T_b (f_b - accum_b)
/// and the same with confidences. Alpha gradients reach opacity, mean2 and inv_cov2
/// through a = O g, except at cells where the clamp is active.
inline GradientBundle render_backward(const std::vector<Splat2D> &splats, const BevGridSpec &grid,
                                      const FeatureMap &dl_df, const ScalarMap &dl_dc,
                                      const RenderSettings &settings = {}, int threads = 0) {
    grid.validate();
    const int channels = dl_df.channels;
    detail::check_splats(splats, channels);
    const int size = grid.size;
    if (dl_df.rows != size || dl_df.cols != size || dl_dc.rows != size || dl_dc.cols != size) {
        throw DomainError("upstream gradient maps must match the grid");
    }
    const auto order = detail::depth_order(splats);
    const auto layout = detail::bin_splats(splats, order, size, settings);

    // Per-tile partial gradients, reduced afterwards in tile order so the sum does not
    // depend on scheduling. Layout per entry: [feature(C), conf, opacity, mean2(2), A00, A01, A11].
    const std::size_t stride = static_cast<std::size_t>(channels) + 7;
    std::vector<std::vector<double>> partial(layout.lists.size());

    parallel_for(static_cast<std::size_t>(layout.tile_count()), threads, [&](std::size_t t) {
        const auto &list = layout.lists[t];
        if (list.empty()) {
            return;
        }
        auto &local = partial[t];
        local.assign(list.size() * stride, 0.0);
        const int r_begin = static_cast<int>(t / layout.per_side) * layout.tile;
        const int c_begin = static_cast<int>(t % layout.per_side) * layout.tile;

        struct Contribution {
            std::size_t slot; // index into `list`
            double alpha;
            double g;
            double trans;
            bool clamped;
        };
        std::vector<Contribution> contribs;
        std::vector<double> upstream(channels), behind(channels);

        for (int r = r_begin; r < std::min(size, r_begin + layout.tile); ++r) {
            for (int c = c_begin; c < std::min(size, c_begin + layout.tile); ++c) {
                bool any = dl_dc.at(r, c) != 0.0;
                for (int ch = 0; ch < channels; ++ch) {
                    upstream[ch] = dl_df.at(ch, r, c);
                    any = any || upstream[ch] != 0.0;
                }
                if (!any) {
                    continue;
                }
                const double up_conf = dl_dc.at(r, c);

                contribs.clear();
                double trans = 1.0;
                for (std::size_t i = 0; i < list.size(); ++i) {
                    const auto &s = splats[list[i]];
                    if (settings.use_footprint && detail::outside_footprint(s, r, c)) {
                        continue;
                    }
                    const double g = detail::gaussian_weight(s, r - s.mean2[0], c - s.mean2[1]);
                    const double raw_alpha = s.base_opacity * g;
                    const bool clamped = raw_alpha > settings.alpha_max;
                    const double alpha = clamped ? settings.alpha_max : raw_alpha;
                    if (alpha < settings.alpha_min || alpha < detail::kFlush) {
                        continue;
                    }
                    contribs.push_back({i, alpha, g, trans, clamped});
                    trans *= 1.0 - alpha;
                    if (trans < detail::kFlush || trans < settings.transmittance_min) {
                        break;
                    }
                }

                std::fill(behind.begin(), behind.end(), 0.0);
                double behind_conf = 0.0;
                for (auto it = contribs.rbegin(); it != contribs.rend(); ++it) {
                    const auto &s = splats[list[it->slot]];
                    double *g_out = &local[it->slot * stride];
                    const double w = it->alpha * it->trans;
                    const double inv_one_minus = 1.0 / (1.0 - it->alpha);
                    double dl_dalpha = 0.0;
                    for (int ch = 0; ch < channels; ++ch) {
                        g_out[ch] += upstream[ch] * w;
                        dl_dalpha += upstream[ch] * (s.feature[ch] * it->trans - behind[ch] * inv_one_minus);
                        behind[ch] += s.feature[ch] * w;
                    }
                    g_out[channels] += up_conf * w;
                    dl_dalpha += up_conf * (s.confidence * it->trans - behind_conf * inv_one_minus);
                    behind_conf += s.confidence * w;

                    if (it->clamped) {
                        continue;
                    }
                    g_out[channels + 1] += dl_dalpha * it->g;
                    const double dl_dg = dl_dalpha * s.base_opacity;
                    const double dr = r - s.mean2[0];
                    const double dc = c - s.mean2[1];
                    const Vec2 ad = s.inv_cov2 * Vec2(dr, dc);
                    g_out[channels + 2] += dl_dg * it->g * ad[0];
                    g_out[channels + 3] += dl_dg * it->g * ad[1];
                    const double k = -0.5 * dl_dg * it->g;
                    g_out[channels + 4] += k * dr * dr;
                    g_out[channels + 5] += k * dr * dc;
                    g_out[channels + 6] += k * dc * dc;
                }
            }
        }
    });

    GradientBundle bundle;
    bundle.splats.resize(splats.size());
    for (auto &g : bundle.splats) {
        g.d_feature.assign(channels, 0.0);
    }
    for (std::size_t t = 0; t < layout.lists.size(); ++t) {
        const auto &local = partial[t];
        if (local.empty()) {
            continue;
        }
        const auto &list = layout.lists[t];
        for (std::size_t i = 0; i < list.size(); ++i) {
            const double *v = &local[i * stride];
            auto &g = bundle.splats[list[i]];
            for (int ch = 0; ch < channels; ++ch) {
                g.d_feature[ch] += v[ch];
            }
            g.d_confidence += v[channels];
            g.d_opacity += v[channels + 1];
            g.d_mean2[0] += v[channels + 2];
            g.d_mean2[1] += v[channels + 3];
            g.d_inv_cov2(0, 0) += v[channels + 4];
            g.d_inv_cov2(0, 1) += v[channels + 5];
            g.d_inv_cov2(1, 0) += v[channels + 5];
            g.d_inv_cov2(1, 1) += v[channels + 6];
        }
    }
    return bundle;
}

} // namespace bevsplat
