// Copyright Contributors to the bevsplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Random splat workloads and the reference-vs-tiled throughput benchmark.

#include "bevsplat/renderer.hpp"
#include "bevsplat/synth.hpp"

#include <chrono>
#include <cmath>
#include <cstdint>
#include <vector>

namespace bevsplat {

/// `count` primitives with means spread over the grid, footprints of a fraction of a
/// meter to a few meters, and world-Y in [-3, 1.65].
inline std::vector<Splat2D> random_splats(std::uint64_t seed, std::size_t count, const BevGridSpec &grid,
                                          int channels, const RenderSettings &settings = {}) {
    detail::SceneRng rng(seed);
    const double extent = grid.size * grid.beta;
    PrimitiveSet set;
    set.feature_dim = channels;
    set.items.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        GaussianPrimitive p;
        p.mean = Vec3(grid.origin_x + rng.uniform(0.0, extent), rng.uniform(-3.0, 1.65),
                      grid.origin_z + rng.uniform(0.0, extent));
        p.scale = Vec3(rng.uniform(0.05, 0.5), rng.uniform(0.05, 0.5), rng.uniform(0.05, 0.5));
        Quat q;
        do {
            q = Quat(rng.normal(), rng.normal(), rng.normal(), rng.normal());
        } while (q.norm() < 1e-3);
        p.rotation = q.normalized();
        p.opacity = rng.uniform(0.05, 0.95);
        p.confidence = rng.uniform(0.0, 1.0);
        p.feature.resize(channels);
        for (auto &f : p.feature) {
            f = rng.normal();
        }
        set.items.push_back(std::move(p));
    }
    return project_all(set, grid, settings);
}

struct BenchReport {
    std::size_t splats = 0;
    int size = 0;
    int threads = 1;
    double reference_seconds = 0.0;
    double tiled_seconds = 0.0;
    double reference_cells_per_sec = 0.0;
    double tiled_cells_per_sec = 0.0;
    double speedup = 0.0;
    double max_abs_diff_exact = 0.0;  // exact-mode tiled vs reference
    double max_abs_diff_culled = 0.0; // default culling vs reference, informational
    bool thread_invariant = true;     // exact-mode output bitwise equal at 1 and `threads`
};

namespace detail {

inline double max_abs_diff(const BevOutput &a, const BevOutput &b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.f_bev.data.size(); ++i) {
        m = std::max(m, std::abs(a.f_bev.data[i] - b.f_bev.data[i]));
    }
    for (std::size_t i = 0; i < a.c_bev.data.size(); ++i) {
        m = std::max(m, std::abs(a.c_bev.data[i] - b.c_bev.data[i]));
        m = std::max(m, std::abs(a.final_t.data[i] - b.final_t.data[i]));
    }
    return m;
}

inline bool bitwise_equal(const BevOutput &a, const BevOutput &b) {
    return a.f_bev.data == b.f_bev.data && a.c_bev.data == b.c_bev.data && a.final_t.data == b.final_t.data;
}

template <class Fn>
double best_seconds(int repeats, Fn &&fn) {
    double best = 0.0;
    for (int i = 0; i < repeats; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        best = i == 0 ? dt : std::min(best, dt);
    }
    return best;
}

} // namespace detail

/// Times the reference renderer and the tiled renderer (default culling) on one random
/// workload, then checks exact-mode tiled output against the reference.
inline BenchReport run_bench(std::uint64_t seed, std::size_t splats, int size, int threads, int channels = 8,
                             int repeats = 1) {
    const BevGridSpec grid = BevGridSpec::centered(size, 70.0 / 128.0);
    const RenderSettings culled;
    const auto list = random_splats(seed, splats, grid, channels, culled);
    BenchReport rep;
    rep.splats = splats;
    rep.size = size;
    rep.threads = resolve_threads(threads);

    BevOutput reference;
    rep.reference_seconds = detail::best_seconds(1, [&] { reference = render_reference(list, grid, channels); });
    BevOutput tiled;
    rep.tiled_seconds =
        detail::best_seconds(repeats, [&] { tiled = render_forward(list, grid, channels, culled, rep.threads); });
    const double cells = static_cast<double>(size) * size;
    rep.reference_cells_per_sec = cells / rep.reference_seconds;
    rep.tiled_cells_per_sec = cells / rep.tiled_seconds;
    rep.speedup = rep.reference_seconds / rep.tiled_seconds;
    rep.max_abs_diff_culled = detail::max_abs_diff(tiled, reference);

    const RenderSettings exact = RenderSettings::exact();
    const BevOutput exact_n = render_forward(list, grid, channels, exact, rep.threads);
    const BevOutput exact_1 = render_forward(list, grid, channels, exact, 1);
    rep.max_abs_diff_exact = detail::max_abs_diff(exact_n, reference);
    rep.thread_invariant = detail::bitwise_equal(exact_n, exact_1);
    return rep;
}

} // namespace bevsplat
