// Copyright Contributors to the bevsplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Central finite-difference check of the end-to-end objective (splat -> match -> loss)
// against the analytic gradient, on small random scenes seen by a pinhole camera.

#include "bevsplat/error.hpp"
#include "bevsplat/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

namespace bevsplat {

struct GradcheckOptions {
    int splats = 32;
    int dim = 4;
    int grid = 32;
    double beta = 0.25;
    int radius = 4;
    int negatives = 2;
    int lambda1 = 1;
    double gps_d = 0.5; // small enough that the label window is a strict subset of the map
    double h = 1e-3;
    double abs_floor = 1e-6;
    // Sort keys are kept apart so a step of h cannot reorder splats, and argmax
    // selections must win by a margin so a step cannot flip them.
    double min_key_gap = 5e-3;
    double min_peak_margin = 2e-3;
    int max_attempts = 64;
};

struct GradcheckCase {
    TrainingSample sample;
    PipelineConfig cfg;
    LossConfig loss;
    std::uint64_t seed = 0;
    int attempt = 0;
};

struct GradcheckGroup {
    std::string name;
    std::size_t count = 0;
    double max_rel = 0.0;
    double max_abs = 0.0;
    double max_gradient = 0.0; // largest |analytic| seen, guards against a vacuous check
};

struct GradcheckReport {
    std::vector<GradcheckGroup> groups;
    std::size_t parameters = 0;
    double max_rel = 0.0;
    bool selections_stable = true;
};

namespace detail {

/// Gap between the best and second best value of a similarity map, optionally
/// restricted to a window.
inline double peak_margin(const SimilarityMap &m, int r0, int r1, int c0, int c1) {
    double best = -std::numeric_limits<double>::infinity();
    double second = best;
    for (int dr = r0; dr <= r1; ++dr) {
        for (int dc = c0; dc <= c1; ++dc) {
            const double v = m.at(dr, dc);
            if (v > best) {
                second = best;
                best = v;
            } else if (v > second) {
                second = v;
            }
        }
    }
    return best - second;
}

inline bool same_cell(const PeakResult &a, const PeakResult &b) { return a.d_row == b.d_row && a.d_col == b.d_col; }

inline bool same_selections(const ObjectiveResult &a, const ObjectiveResult &b) {
    if (!same_cell(a.positive_peak, b.positive_peak) || !same_cell(a.gps.global, b.gps.global) ||
        !same_cell(a.gps.window, b.gps.window)) {
        return false;
    }
    for (std::size_t i = 0; i < a.negative_peaks.size(); ++i) {
        if (!same_cell(a.negative_peaks[i], b.negative_peaks[i])) {
            return false;
        }
    }
    return true;
}

inline void shift_add(const FeatureMap &src, int dr, int dc, FeatureMap &dst) {
    for (int ch = 0; ch < src.channels; ++ch) {
        for (int r = 0; r < src.rows; ++r) {
            for (int c = 0; c < src.cols; ++c) {
                const int rr = r + dr;
                const int cc = c + dc;
                if (rr >= 0 && rr < dst.rows && cc >= 0 && cc < dst.cols) {
                    dst.at(ch, rr, cc) += src.at(ch, r, c);
                }
            }
        }
    }
}

inline GradcheckCase draw_gradcheck_case(std::uint64_t seed, int attempt, const GradcheckOptions &o) {
    SceneRng rng(seed * 1000003ull + static_cast<std::uint64_t>(attempt));
    const int slots = o.splats % 2 == 0 ? 2 : 1;
    const int pixels = o.splats / slots;
    int h = 1;
    for (int d = 1; d * d <= pixels; ++d) {
        if (pixels % d == 0) {
            h = d;
        }
    }
    const int w = pixels / h;

    GradcheckCase gc;
    gc.seed = seed;
    gc.attempt = attempt;
    PinholeIntrinsics k{static_cast<double>(std::max(w, h)), static_cast<double>(std::max(w, h)), 0.5 * (w - 1),
                        0.5 * (h - 1)};
    gc.cfg.camera = k;
    gc.cfg.grid = BevGridSpec::centered(o.grid, o.beta);
    gc.cfg.primitives.primitives_per_pixel = slots;
    gc.cfg.render = RenderSettings::exact();
    gc.cfg.search_radius = o.radius;
    gc.cfg.threads = 1;
    gc.loss.lambda1 = o.lambda1;
    gc.loss.negatives = o.negatives;
    gc.loss.d = o.gps_d;

    auto &in = gc.sample.ground;
    in.depth = ScalarMap(h, w);
    in.features = FeatureMap(o.dim, h, w);
    in.confidence = ScalarMap(h, w);
    in.raw = RawAttributes(slots, h, w);
    for (auto &d : in.depth.data) {
        d = rng.uniform(1.5, 3.5);
    }
    for (auto &f : in.features.data) {
        f = rng.normal();
    }
    for (auto &c : in.confidence.data) {
        c = rng.uniform(0.2, 1.0);
    }

    // Raw attributes, with offset y chosen so that world-Y sort keys stay separated.
    std::vector<double> keys;
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            const double base_y = backproject_pinhole(c, r, in.depth.at(r, c), k).y();
            for (int s = 0; s < slots; ++s) {
                RawPrimitive p;
                p.offset = Vec3(0.5 * rng.normal(), 0.0, 0.5 * rng.normal());
                p.scale = Vec3(0.5 * rng.normal(), 0.5 * rng.normal(), 0.5 * rng.normal());
                do {
                    p.quat = Quat(rng.normal(), rng.normal(), rng.normal(), rng.normal());
                } while (p.quat.norm() < 0.3);
                p.opacity = rng.uniform(-1.5, 1.5);
                bool placed = false;
                for (int tries = 0; tries < 200 && !placed; ++tries) {
                    const double oy = rng.uniform(-0.4, 0.4);
                    const double key = base_y + oy;
                    placed = std::none_of(keys.begin(), keys.end(),
                                          [&](double other) { return std::abs(other - key) < o.min_key_gap; });
                    if (placed) {
                        keys.push_back(key);
                        p.offset.y() = std::atanh(oy / kDefaultMaxOffset);
                    }
                }
                if (!placed) {
                    throw NumericError("could not separate sort keys");
                }
                in.raw.set_slot(s, r, c, p);
            }
        }
    }

    // Positive: the rendered BEV shifted by a random offset plus noise. Negatives: noise.
    const BevOutput bev = render_ground(in, gc.cfg);
    const FeatureMap weighted = weight_features(bev.f_bev, bev.c_bev);
    const int dr = static_cast<int>(std::floor(rng.uniform(-o.radius, o.radius + 1.0)));
    const int dc = static_cast<int>(std::floor(rng.uniform(-o.radius, o.radius + 1.0)));
    gc.sample.positive = FeatureMap(o.dim, o.grid, o.grid);
    for (auto &v : gc.sample.positive.data) {
        v = 0.3 * rng.normal();
    }
    shift_add(weighted, dr, dc, gc.sample.positive);
    for (int m = 0; m < o.negatives; ++m) {
        FeatureMap neg(o.dim, o.grid, o.grid);
        for (auto &v : neg.data) {
            v = rng.normal();
        }
        gc.sample.negatives.push_back(std::move(neg));
    }
    gc.sample.label_row = static_cast<int>(std::floor(rng.uniform(-o.radius, o.radius + 1.0)));
    gc.sample.label_col = static_cast<int>(std::floor(rng.uniform(-o.radius, o.radius + 1.0)));
    gc.sample.label_row = std::clamp(gc.sample.label_row, -o.radius, o.radius);
    gc.sample.label_col = std::clamp(gc.sample.label_col, -o.radius, o.radius);
    gc.sample.seed = seed;
    return gc;
}

inline bool margins_ok(const GradcheckCase &gc, const GradcheckOptions &o) {
    const auto &cfg = gc.cfg;
    const auto &in = gc.sample.ground;
    const FeatureMap bev = synthesize_bev(in, PipelineKind::bevsplat, cfg);
    const int r = cfg.search_radius;
    const auto ok = [&](const FeatureMap &sat, bool with_window) {
        const SimilarityMap m = similarity_map(sat, bev, r, cfg.grid.beta, 1);
        if (peak_margin(m, -r, r, -r, r) < o.min_peak_margin) {
            return false;
        }
        if (!with_window) {
            return true;
        }
        const int hw = static_cast<int>(std::ceil(gc.loss.d / cfg.grid.beta - 1e-12));
        return peak_margin(m, std::max(-r, gc.sample.label_row - hw), std::min(r, gc.sample.label_row + hw),
                           std::max(-r, gc.sample.label_col - hw), std::min(r, gc.sample.label_col + hw)) >=
               o.min_peak_margin;
    };
    if (!ok(gc.sample.positive, true)) {
        return false;
    }
    return std::all_of(gc.sample.negatives.begin(), gc.sample.negatives.end(),
                       [&](const FeatureMap &n) { return ok(n, false); });
}

} // namespace detail

/// First attempt for `seed` whose argmax selections all win by the configured margin.
inline GradcheckCase make_gradcheck_case(std::uint64_t seed, const GradcheckOptions &o = {}) {
    if (o.splats < 1 || o.dim < 1 || o.grid < 2 || o.radius < 0 || o.radius >= o.grid || o.negatives < 1) {
        throw DomainError("invalid gradcheck options");
    }
    for (int attempt = 0; attempt < o.max_attempts; ++attempt) {
        GradcheckCase gc = detail::draw_gradcheck_case(seed, attempt, o);
        if (detail::margins_ok(gc, o)) {
            return gc;
        }
    }
    throw NumericError("no gradcheck scene with stable selections for seed " + std::to_string(seed));
}

/// Compares every raw attribute, per-pixel feature and confidence against central
/// differences. Errors: |a-n| / max(|a|,|n|), or 0 when |a-n| <= abs_floor.
inline GradcheckReport run_gradcheck(GradcheckCase gc, const GradcheckOptions &o = {}) {
    const ObjectiveResult base = evaluate_objective(gc.sample, gc.cfg, gc.loss, true);
    GradcheckReport report;
    const char *names[] = {"feature", "confidence", "opacity", "offset", "scale", "rotation"};
    for (const char *n : names) {
        report.groups.push_back({n});
    }
    const auto record = [&](std::size_t group, double analytic, double numeric) {
        auto &g = report.groups[group];
        const double diff = std::abs(analytic - numeric);
        const double rel = diff <= o.abs_floor ? 0.0 : diff / std::max(std::abs(analytic), std::abs(numeric));
        g.count++;
        g.max_rel = std::max(g.max_rel, rel);
        g.max_abs = std::max(g.max_abs, diff);
        g.max_gradient = std::max(g.max_gradient, std::abs(analytic));
        report.max_rel = std::max(report.max_rel, rel);
        report.parameters++;
    };
    const auto central = [&](double &param) {
        const double saved = param;
        param = saved + o.h;
        const ObjectiveResult plus = evaluate_objective(gc.sample, gc.cfg, gc.loss, false);
        param = saved - o.h;
        const ObjectiveResult minus = evaluate_objective(gc.sample, gc.cfg, gc.loss, false);
        param = saved;
        if (!detail::same_selections(base, plus) || !detail::same_selections(base, minus)) {
            report.selections_stable = false;
        }
        return (plus.report.l_total - minus.report.l_total) / (2.0 * o.h);
    };

    auto &in = gc.sample.ground;
    for (std::size_t i = 0; i < in.features.data.size(); ++i) {
        const double n = central(in.features.data[i]);
        record(0, base.d_features.data[i], n);
    }
    for (std::size_t i = 0; i < in.confidence.data.size(); ++i) {
        const double n = central(in.confidence.data[i]);
        record(1, base.d_confidence.data[i], n);
    }
    for (int s = 0; s < in.raw.slots(); ++s) {
        for (int ch = 0; ch < kRawChannels; ++ch) {
            // 0-2 offset, 3-5 scale, 6-9 quaternion, 10 opacity
            const std::size_t group = ch < 3 ? 3 : ch < 6 ? 4 : ch < 10 ? 5 : 2;
            for (int r = 0; r < in.raw.rows(); ++r) {
                for (int c = 0; c < in.raw.cols(); ++c) {
                    const double n = central(in.raw.at(s, ch, r, c));
                    record(group, base.d_raw.at(s, ch, r, c), n);
                }
            }
        }
    }
    return report;
}

} // namespace bevsplat
