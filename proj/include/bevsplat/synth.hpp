// Copyright Contributors to the bevsplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Box-and-plane synthetic world. The ground plane sits at Y = +cam_height and is
// textured with square tiles, each carrying a random unit feature vector; boxes stand on
// the plane and carry one feature per box. The ground camera sits at the world origin.
// The satellite map is the top-down view of the static surfaces, shifted by a planted
// offset so that sat(u + dr, v + dc) shows what BEV cell (u, v) shows.

#include "bevsplat/error.hpp"
#include "bevsplat/geometry.hpp"
#include "bevsplat/primitives.hpp"
#include "bevsplat/tensor.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <vector>

namespace bevsplat {

/// Raw opacity assigned to pixels that see nothing, so their primitives vanish.
inline constexpr double kEmptyPixelOpacityRaw = -20.0;

struct CameraSpec {
    bool panorama = true;
    int width = 256;
    int height = 64;
    // Pinhole only; non-positive focal lengths default to width / 2 (90 degree HFOV),
    // negative principal point defaults to the image center.
    double fx = 0.0;
    double fy = 0.0;
    double cx = -1.0;
    double cy = -1.0;

    Camera camera() const {
        if (panorama) {
            PanoramaGeometry g{width, height};
            g.validate();
            return g;
        }
        PinholeIntrinsics k;
        k.fx = fx > 0.0 ? fx : 0.5 * width;
        k.fy = fy > 0.0 ? fy : k.fx;
        k.cx = cx >= 0.0 ? cx : 0.5 * (width - 1);
        k.cy = cy >= 0.0 ? cy : 0.5 * (height - 1);
        k.validate();
        return k;
    }
};

struct SceneSpec {
    std::uint64_t seed = 0;
    double extent = 70.0; // meters per side of the BEV / satellite map
    int grid_size = 128;
    int feature_dim = 8;
    double tile_size = 2.0;
    int n_boxes = 6;
    double box_size_min = 2.0;
    double box_size_max = 6.0;
    double box_height_min = 0.5;
    double box_height_max = 3.0;
    double box_distance_min = 5.0;
    double box_distance_max = 25.0;
    double dynamic_fraction = 0.0;
    double cam_height = 1.65;
    CameraSpec camera;
    double search_m = 20.0; // planted offsets are drawn from [-search_m, search_m]^2
    std::optional<std::array<double, 2>> planted_offset_m; // (dz, dx) override
    double max_range = 100.0;
    // Tall occluders, added to a share of the scenes of a batch.
    int occluders = 0;
    double occluder_share = 1.0;
    double occluder_size_min = 3.0;
    double occluder_size_max = 8.0;
    double occluder_height_min = 6.0;
    double occluder_height_max = 15.0;

    double beta() const { return extent / grid_size; }

    void validate() const {
        if (!(extent > 0.0) || grid_size < 1) {
            throw DomainError("scene extent and grid size must be positive");
        }
        if (feature_dim < 2) {
            throw DomainError("feature_dim must be >= 2");
        }
        if (!(dynamic_fraction >= 0.0 && dynamic_fraction <= 1.0)) {
            throw DomainError("dynamic_fraction must lie in [0, 1]");
        }
        if (!(tile_size > 0.0) || !(cam_height > 0.0) || n_boxes < 0 || occluders < 0) {
            throw DomainError("degenerate scene spec");
        }
        if (box_size_min <= 0.0 || box_size_max < box_size_min || box_height_max < box_height_min ||
            box_height_min <= 0.0 || box_distance_max < box_distance_min || box_distance_min < 0.0) {
            throw DomainError("degenerate box ranges");
        }
        if (occluder_size_min <= 0.0 || occluder_size_max < occluder_size_min ||
            occluder_height_max < occluder_height_min || occluder_height_min <= 0.0) {
            throw DomainError("degenerate occluder ranges");
        }
        if (!(occluder_share >= 0.0 && occluder_share <= 1.0) || search_m < 0.0 || !(max_range > 0.0)) {
            throw DomainError("degenerate scene spec");
        }
        (void)camera.camera();
    }
};

/// Spec of scene `index` in a batch: seed advanced by index, occluders kept on an evenly
/// spread `occluder_share` of the indices.
inline SceneSpec scene_spec_for(const SceneSpec &base, int index) {
    SceneSpec s = base;
    s.seed = base.seed + static_cast<std::uint64_t>(index);
    const bool occluded = std::floor((index + 1) * base.occluder_share) > std::floor(index * base.occluder_share);
    if (!occluded) {
        s.occluders = 0;
    }
    return s;
}

struct Box {
    double x0, x1, z0, z1; // footprint
    double top_y;          // smaller Y = higher
    bool dynamic = false;
    std::vector<double> feature;
};

struct Scene {
    SceneSpec spec;
    BevGridSpec grid;
    Camera camera;
    ScalarMap depth;
    FeatureMap features;
    ScalarMap confidence;
    ScalarMap hit; // 1 where the pixel ray hit a surface
    FeatureMap satellite;
    double planted_dz = 0.0; // meters
    double planted_dx = 0.0;
    std::vector<Box> boxes;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

/// Portable uniform/normal draws from mt19937_64 (std distributions are implementation defined).
class SceneRng {
  public:
    explicit SceneRng(std::uint64_t seed) : engine_(splitmix64(seed)) {}

    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double normal() {
        if (spare_) {
            const double v = *spare_;
            spare_.reset();
            return v;
        }
        double u1 = uniform();
        while (u1 <= 0.0) {
            u1 = uniform();
        }
        const double u2 = uniform();
        const double rad = std::sqrt(-2.0 * std::log(u1));
        spare_ = rad * std::sin(2.0 * std::numbers::pi * u2);
        return rad * std::cos(2.0 * std::numbers::pi * u2);
    }

    std::vector<double> unit_vector(int dim) {
        std::vector<double> v(dim);
        double n2 = 0.0;
        while (n2 < 1e-12) {
            n2 = 0.0;
            for (auto &x : v) {
                x = normal();
                n2 += x * x;
            }
        }
        const double inv = 1.0 / std::sqrt(n2);
        for (auto &x : v) {
            x *= inv;
        }
        return v;
    }

  private:
    std::mt19937_64 engine_;
    std::optional<double> spare_;
};

inline std::vector<double> tile_feature(std::uint64_t seed, double x, double z, double tile, int dim) {
    const auto ix = static_cast<std::int64_t>(std::floor(x / tile));
    const auto iz = static_cast<std::int64_t>(std::floor(z / tile));
    const std::uint64_t h = splitmix64(splitmix64(seed ^ 0x5EEDF00Dull) ^ static_cast<std::uint64_t>(ix) * 0x9E37ull) ^
                            splitmix64(static_cast<std::uint64_t>(iz) + 0x1234567ull);
    SceneRng rng(h);
    return rng.unit_vector(dim);
}

/// Ray-box slab test; returns entry distance along `dir` if positive.
inline std::optional<double> intersect_box(const Vec3 &dir, const Box &b, double ground_y) {
    double t0 = 0.0;
    double t1 = std::numeric_limits<double>::infinity();
    const double lo[3] = {b.x0, b.top_y, b.z0};
    const double hi[3] = {b.x1, ground_y, b.z1};
    for (int a = 0; a < 3; ++a) {
        if (std::abs(dir[a]) < 1e-15) {
            if (0.0 < lo[a] || 0.0 > hi[a]) {
                return std::nullopt;
            }
            continue;
        }
        double ta = lo[a] / dir[a];
        double tb = hi[a] / dir[a];
        if (ta > tb) {
            std::swap(ta, tb);
        }
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
        if (t0 > t1) {
            return std::nullopt;
        }
    }
    if (!(t0 > 0.0)) {
        return std::nullopt;
    }
    return t0;
}

inline void place_boxes(SceneRng &rng, const SceneSpec &spec, int count, double size_min, double size_max,
                        double height_min, double height_max, std::vector<Box> &boxes) {
    for (int i = 0; i < count; ++i) {
        Box b;
        for (int attempt = 0; attempt < 100; ++attempt) {
            const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
            const double dist = rng.uniform(spec.box_distance_min, spec.box_distance_max);
            const double sx = rng.uniform(size_min, size_max);
            const double sz = rng.uniform(size_min, size_max);
            const double cx = dist * std::cos(angle);
            const double cz = dist * std::sin(angle);
            b.x0 = cx - 0.5 * sx;
            b.x1 = cx + 0.5 * sx;
            b.z0 = cz - 0.5 * sz;
            b.z1 = cz + 0.5 * sz;
            const bool covers_camera = b.x0 < 1.0 && b.x1 > -1.0 && b.z0 < 1.0 && b.z1 > -1.0;
            if (!covers_camera) {
                break;
            }
        }
        b.top_y = spec.cam_height - rng.uniform(height_min, height_max);
        b.feature = rng.unit_vector(spec.feature_dim);
        boxes.push_back(std::move(b));
    }
}

} // namespace detail

/// Builds the ground-view maps and the offset satellite map of a scene.
inline Scene make_scene(const SceneSpec &spec) {
    spec.validate();
    Scene scene;
    scene.spec = spec;
    scene.grid = BevGridSpec::centered(spec.grid_size, spec.beta());
    scene.camera = spec.camera.camera();

    detail::SceneRng rng(spec.seed);
    detail::place_boxes(rng, spec, spec.n_boxes, spec.box_size_min, spec.box_size_max, spec.box_height_min,
                        spec.box_height_max, scene.boxes);
    const int n_dynamic = static_cast<int>(std::floor(spec.dynamic_fraction * spec.n_boxes + 1e-9));
    for (int i = 0; i < n_dynamic; ++i) {
        scene.boxes[static_cast<std::size_t>(i)].dynamic = true;
    }
    detail::place_boxes(rng, spec, spec.occluders, spec.occluder_size_min, spec.occluder_size_max,
                        spec.occluder_height_min, spec.occluder_height_max, scene.boxes);

    if (spec.planted_offset_m) {
        scene.planted_dz = (*spec.planted_offset_m)[0];
        scene.planted_dx = (*spec.planted_offset_m)[1];
    } else {
        scene.planted_dz = rng.uniform(-spec.search_m, spec.search_m);
        scene.planted_dx = rng.uniform(-spec.search_m, spec.search_m);
    }

    const int w = spec.camera.width;
    const int h = spec.camera.height;
    const int dim = spec.feature_dim;
    scene.depth = ScalarMap(h, w);
    scene.features = FeatureMap(dim, h, w);
    scene.confidence = ScalarMap(h, w);
    scene.hit = ScalarMap(h, w);

    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            const Vec3 dir = pixel_ray(scene.camera, c, r);
            const double dir_len = dir.norm();
            double best_t = std::numeric_limits<double>::infinity();
            const Box *best_box = nullptr;
            if (dir.y() > 0.0) {
                best_t = spec.cam_height / dir.y();
            }
            for (const auto &b : scene.boxes) {
                if (auto t = detail::intersect_box(dir, b, spec.cam_height); t && *t < best_t) {
                    best_t = *t;
                    best_box = &b;
                }
            }
            if (!std::isfinite(best_t) || best_t * dir_len > spec.max_range) {
                continue;
            }
            const Vec3 p = best_t * dir;
            const std::vector<double> f =
                best_box ? best_box->feature : detail::tile_feature(spec.seed, p.x(), p.z(), spec.tile_size, dim);
            // Depth along the pinhole optical axis or along the unit panorama ray.
            scene.depth.at(r, c) = best_t;
            for (int ch = 0; ch < dim; ++ch) {
                scene.features.at(ch, r, c) = f[ch];
            }
            scene.confidence.at(r, c) = (best_box && best_box->dynamic) ? 0.0 : 1.0;
            scene.hit.at(r, c) = 1.0;
        }
    }

    const int s = spec.grid_size;
    const double beta = spec.beta();
    const double shift_r = scene.planted_dz / beta;
    const double shift_c = scene.planted_dx / beta;
    scene.satellite = FeatureMap(dim, s, s);
    for (int r = 0; r < s; ++r) {
        for (int c = 0; c < s; ++c) {
            const double x = scene.grid.cell_x(c - shift_c);
            const double z = scene.grid.cell_z(r - shift_r);
            const Box *top = nullptr;
            for (const auto &b : scene.boxes) {
                if (b.dynamic || x < b.x0 || x > b.x1 || z < b.z0 || z > b.z1) {
                    continue;
                }
                if (!top || b.top_y < top->top_y) {
                    top = &b;
                }
            }
            const std::vector<double> f = top ? top->feature : detail::tile_feature(spec.seed, x, z, spec.tile_size, dim);
            for (int ch = 0; ch < dim; ++ch) {
                scene.satellite.at(ch, r, c) = f[ch];
            }
        }
    }
    return scene;
}

/// Free raw attributes for a scene: zeros, except pixels that saw nothing get a large
/// negative opacity.
inline RawAttributes initial_raw_attributes(const Scene &scene, int primitives_per_pixel) {
    RawAttributes raw(primitives_per_pixel, scene.depth.rows, scene.depth.cols);
    for (int k = 0; k < primitives_per_pixel; ++k) {
        for (int r = 0; r < scene.depth.rows; ++r) {
            for (int c = 0; c < scene.depth.cols; ++c) {
                if (scene.hit.at(r, c) == 0.0) {
                    raw.at(k, 10, r, c) = kEmptyPixelOpacityRaw;
                }
            }
        }
    }
    return raw;
}

} // namespace bevsplat
