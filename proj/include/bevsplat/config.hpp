// Copyright Contributors to the bevsplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

// JSON configuration documents: camera, grid, losses, primitive and render options,
// scene specs, and result serialization.

#include "bevsplat/error.hpp"
#include "bevsplat/geometry.hpp"
#include "bevsplat/losses.hpp"
#include "bevsplat/pipeline.hpp"
#include "bevsplat/primitives.hpp"
#include "bevsplat/renderer.hpp"
#include "bevsplat/synth.hpp"

#include <json.hpp>

#include <fstream>
#include <string>

namespace bevsplat {

using Json = nlohmann::json;

namespace detail {

template <class T>
void read_opt(const Json &j, const char *key, T &out, const std::string &scope) {
    if (!j.contains(key)) {
        return;
    }
    try {
        out = j.at(key).get<T>();
    } catch (const Json::exception &e) {
        throw ParseError(scope + "." + key, e.what());
    }
}

template <class T>
T read_req(const Json &j, const char *key, const std::string &scope) {
    if (!j.contains(key)) {
        throw ParseError(scope + "." + key, "missing");
    }
    T out{};
    read_opt(j, key, out, scope);
    return out;
}

inline const Json &section(const Json &j, const char *key) {
    if (!j.is_object() || !j.contains(key) || !j.at(key).is_object()) {
        throw ParseError(key, "missing section");
    }
    return j.at(key);
}

} // namespace detail

inline Json load_json(const std::string &path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError(0, "cannot open " + path);
    }
    try {
        return Json::parse(in);
    } catch (const Json::exception &e) {
        throw ParseError(path, e.what());
    }
}

inline void save_json(const Json &j, const std::string &path) {
    std::ofstream out(path);
    if (!out) {
        throw IoError(0, "cannot open " + path + " for writing");
    }
    out << j.dump(2) << '\n';
    if (!out) {
        throw IoError(0, "write failed: " + path);
    }
}

inline Camera camera_from_json(const Json &root) {
    const Json &j = detail::section(root, "camera");
    const auto kind = detail::read_req<std::string>(j, "kind", "camera");
    if (kind == "panorama") {
        PanoramaGeometry g{detail::read_req<int>(j, "width", "camera"), detail::read_req<int>(j, "height", "camera")};
        g.validate();
        return g;
    }
    if (kind == "pinhole") {
        PinholeIntrinsics k;
        k.fx = detail::read_req<double>(j, "fx", "camera");
        k.fy = detail::read_req<double>(j, "fy", "camera");
        k.cx = detail::read_req<double>(j, "cx", "camera");
        k.cy = detail::read_req<double>(j, "cy", "camera");
        k.validate();
        return k;
    }
    throw ParseError("camera.kind", "expected \"pinhole\" or \"panorama\", got \"" + kind + "\"");
}

/// Origin keys are optional; missing ones center the camera on the grid.
inline BevGridSpec grid_from_json(const Json &root) {
    const Json &j = detail::section(root, "grid");
    BevGridSpec g = BevGridSpec::centered(detail::read_req<int>(j, "size", "grid"),
                                          detail::read_req<double>(j, "beta", "grid"));
    detail::read_opt(j, "origin_x", g.origin_x, "grid");
    detail::read_opt(j, "origin_z", g.origin_z, "grid");
    g.validate();
    return g;
}

inline LossConfig loss_from_json(const Json &root) {
    LossConfig c;
    if (!root.contains("loss")) {
        return c;
    }
    const Json &j = detail::section(root, "loss");
    detail::read_opt(j, "alpha", c.alpha, "loss");
    detail::read_opt(j, "d", c.d, "loss");
    detail::read_opt(j, "lambda1", c.lambda1, "loss");
    detail::read_opt(j, "negatives", c.negatives, "loss");
    if (c.lambda1 != 0 && c.lambda1 != 1) {
        throw ParseError("loss.lambda1", "must be 0 or 1");
    }
    if (c.negatives < 1 || !(c.d > 0.0) || !(c.alpha > 0.0)) {
        throw ParseError("loss", "alpha and d must be positive, negatives >= 1");
    }
    return c;
}

inline PrimitiveOptions primitives_from_json(const Json &root) {
    PrimitiveOptions o;
    if (!root.contains("primitives")) {
        return o;
    }
    const Json &j = detail::section(root, "primitives");
    detail::read_opt(j, "per_pixel", o.primitives_per_pixel, "primitives");
    detail::read_opt(j, "max_offset", o.max_offset, "primitives");
    detail::read_opt(j, "max_scale", o.max_scale, "primitives");
    if (o.primitives_per_pixel < 1 || !(o.max_offset > 0.0) || !(o.max_scale > 0.0)) {
        throw ParseError("primitives", "per_pixel >= 1 and positive bounds required");
    }
    return o;
}

inline RenderSettings render_from_json(const Json &root) {
    RenderSettings s;
    if (!root.contains("render")) {
        return s;
    }
    const Json &j = detail::section(root, "render");
    bool exact = false;
    detail::read_opt(j, "exact", exact, "render");
    if (exact) {
        s = RenderSettings::exact();
    }
    detail::read_opt(j, "dilation", s.dilation, "render");
    detail::read_opt(j, "alpha_max", s.alpha_max, "render");
    detail::read_opt(j, "alpha_min", s.alpha_min, "render");
    detail::read_opt(j, "transmittance_min", s.transmittance_min, "render");
    detail::read_opt(j, "footprint_sigmas", s.footprint_sigmas, "render");
    detail::read_opt(j, "use_footprint", s.use_footprint, "render");
    detail::read_opt(j, "tile_size", s.tile_size, "render");
    if (s.tile_size < 1 || !(s.alpha_max > 0.0 && s.alpha_max < 1.0) || s.dilation < 0.0) {
        throw ParseError("render", "tile_size >= 1, alpha_max in (0,1), dilation >= 0");
    }
    return s;
}

/// Full pipeline configuration: camera and grid sections are required.
inline PipelineConfig pipeline_from_json(const Json &root) {
    PipelineConfig cfg;
    cfg.camera = camera_from_json(root);
    cfg.grid = grid_from_json(root);
    cfg.primitives = primitives_from_json(root);
    cfg.render = render_from_json(root);
    double search_m = 20.0;
    detail::read_opt(root, "search_m", search_m, "root");
    cfg.search_radius = search_radius_cells(search_m, cfg.grid.beta, cfg.grid.size);
    detail::read_opt(root, "search_radius", cfg.search_radius, "root");
    detail::read_opt(root, "cam_height", cfg.cam_height, "root");
    if (!(cfg.cam_height > 0.0) || cfg.search_radius < 0 || cfg.search_radius >= cfg.grid.size) {
        throw ParseError("root", "cam_height must be positive and search_radius inside the grid");
    }
    return cfg;
}

inline SceneSpec scene_spec_from_json(const Json &j) {
    if (!j.is_object()) {
        throw ParseError("spec", "expected an object");
    }
    SceneSpec s;
    const std::string scope = "spec";
    detail::read_opt(j, "seed", s.seed, scope);
    detail::read_opt(j, "extent", s.extent, scope);
    detail::read_opt(j, "grid_size", s.grid_size, scope);
    detail::read_opt(j, "feature_dim", s.feature_dim, scope);
    detail::read_opt(j, "tile_size", s.tile_size, scope);
    detail::read_opt(j, "n_boxes", s.n_boxes, scope);
    detail::read_opt(j, "box_size_min", s.box_size_min, scope);
    detail::read_opt(j, "box_size_max", s.box_size_max, scope);
    detail::read_opt(j, "box_height_min", s.box_height_min, scope);
    detail::read_opt(j, "box_height_max", s.box_height_max, scope);
    detail::read_opt(j, "box_distance_min", s.box_distance_min, scope);
    detail::read_opt(j, "box_distance_max", s.box_distance_max, scope);
    detail::read_opt(j, "dynamic_fraction", s.dynamic_fraction, scope);
    detail::read_opt(j, "cam_height", s.cam_height, scope);
    detail::read_opt(j, "search_m", s.search_m, scope);
    detail::read_opt(j, "max_range", s.max_range, scope);
    detail::read_opt(j, "occluders", s.occluders, scope);
    detail::read_opt(j, "occluder_share", s.occluder_share, scope);
    detail::read_opt(j, "occluder_size_min", s.occluder_size_min, scope);
    detail::read_opt(j, "occluder_size_max", s.occluder_size_max, scope);
    detail::read_opt(j, "occluder_height_min", s.occluder_height_min, scope);
    detail::read_opt(j, "occluder_height_max", s.occluder_height_max, scope);
    if (j.contains("planted_offset_m")) {
        s.planted_offset_m = detail::read_req<std::array<double, 2>>(j, "planted_offset_m", scope);
    }
    if (j.contains("camera")) {
        const Json &c = j.at("camera");
        std::string kind = "panorama";
        detail::read_opt(c, "kind", kind, "spec.camera");
        if (kind != "panorama" && kind != "pinhole") {
            throw ParseError("spec.camera.kind", "expected \"pinhole\" or \"panorama\"");
        }
        s.camera.panorama = kind == "panorama";
        detail::read_opt(c, "width", s.camera.width, "spec.camera");
        detail::read_opt(c, "height", s.camera.height, "spec.camera");
        detail::read_opt(c, "fx", s.camera.fx, "spec.camera");
        detail::read_opt(c, "fy", s.camera.fy, "spec.camera");
        detail::read_opt(c, "cx", s.camera.cx, "spec.camera");
        detail::read_opt(c, "cy", s.camera.cy, "spec.camera");
    }
    try {
        s.validate();
    } catch (const DomainError &e) {
        throw ParseError("spec", e.what());
    }
    return s;
}

inline Json to_json(const SceneSpec &s) {
    Json j{{"seed", s.seed},
           {"extent", s.extent},
           {"grid_size", s.grid_size},
           {"feature_dim", s.feature_dim},
           {"tile_size", s.tile_size},
           {"n_boxes", s.n_boxes},
           {"box_size_min", s.box_size_min},
           {"box_size_max", s.box_size_max},
           {"box_height_min", s.box_height_min},
           {"box_height_max", s.box_height_max},
           {"box_distance_min", s.box_distance_min},
           {"box_distance_max", s.box_distance_max},
           {"dynamic_fraction", s.dynamic_fraction},
           {"cam_height", s.cam_height},
           {"search_m", s.search_m},
           {"max_range", s.max_range},
           {"occluders", s.occluders},
           {"occluder_share", s.occluder_share},
           {"occluder_size_min", s.occluder_size_min},
           {"occluder_size_max", s.occluder_size_max},
           {"occluder_height_min", s.occluder_height_min},
           {"occluder_height_max", s.occluder_height_max}};
    j["camera"] = {{"kind", s.camera.panorama ? "panorama" : "pinhole"},
                   {"width", s.camera.width},
                   {"height", s.camera.height},
                   {"fx", s.camera.fx},
                   {"fy", s.camera.fy},
                   {"cx", s.camera.cx},
                   {"cy", s.camera.cy}};
    if (s.planted_offset_m) {
        j["planted_offset_m"] = *s.planted_offset_m;
    }
    return j;
}

inline Json to_json(const LocalizationRecord &r) {
    return {{"seed", r.seed},
            {"planted_m", {r.planted_dz, r.planted_dx}},
            {"estimated_m", {r.estimated_dz, r.estimated_dx}},
            {"error_m", r.error},
            {"peak", r.peak}};
}

inline Json to_json(const LocalizationSummary &s) {
    return {{"n", s.records.size()},
            {"mean_error_m", s.mean_error},
            {"median_error_m", s.median_error},
            {"recall_1m", s.recall_1m},
            {"recall_3m", s.recall_3m}};
}

inline Json to_json(const LossReport &r) {
    return {{"l_weakly", r.l_weakly}, {"l_gps", r.l_gps}, {"l_total", r.l_total},
            {"lambda1", r.lambda1},   {"alpha", r.alpha},   {"d", r.d}};
}

} // namespace bevsplat
