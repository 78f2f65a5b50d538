// Copyright Contributors to the bevsplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

// End-to-end flows: ground inputs -> BEV (splatting or a baseline) -> similarity ->
// peak, the training objective with its analytic gradient down to raw primitive
// attributes, plain gradient descent, and the batch localization harness.

#include "bevsplat/baselines.hpp"
#include "bevsplat/error.hpp"
#include "bevsplat/losses.hpp"
#include "bevsplat/matching.hpp"
#include "bevsplat/parallel.hpp"
#include "bevsplat/primitives.hpp"
#include "bevsplat/renderer.hpp"
#include "bevsplat/synth.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace bevsplat {

enum class PipelineKind { bevsplat, ipm, direct };

inline PipelineKind parse_pipeline(const std::string &name) {
    if (name == "bevsplat") {
        return PipelineKind::bevsplat;
    }
    if (name == "ipm") {
        return PipelineKind::ipm;
    }
    if (name == "direct") {
        return PipelineKind::direct;
    }
    throw DomainError("unknown pipeline '" + name + "'");
}

inline const char *pipeline_name(PipelineKind k) {
    switch (k) {
    case PipelineKind::bevsplat:
        return "bevsplat";
    case PipelineKind::ipm:
        return "ipm";
    case PipelineKind::direct:
        return "direct";
    }
    return "?";
}

struct PipelineConfig {
    BevGridSpec grid = BevGridSpec::centered(128, 70.0 / 128);
    Camera camera = PanoramaGeometry{256, 64};
    PrimitiveOptions primitives;
    RenderSettings render;
    int search_radius = 37;
    double cam_height = kDefaultCameraHeight;
    int threads = 0;
};

/// Search radius covering +-search_m, clipped to the map.
inline int search_radius_cells(double search_m, double beta, int size) {
    return std::clamp(static_cast<int>(std::ceil(search_m / beta - 1e-9)), 0, size - 1);
}

inline PipelineConfig pipeline_config_for(const Scene &scene) {
    PipelineConfig cfg;
    cfg.grid = scene.grid;
    cfg.camera = scene.camera;
    cfg.search_radius = search_radius_cells(scene.spec.search_m, scene.grid.beta, scene.grid.size);
    cfg.cam_height = scene.spec.cam_height;
    return cfg;
}

struct GroundInputs {
    ScalarMap depth;
    FeatureMap features;
    ScalarMap confidence;
    RawAttributes raw;
};

inline GroundInputs ground_inputs_for(const Scene &scene, int primitives_per_pixel) {
    return {scene.depth, scene.features, scene.confidence, initial_raw_attributes(scene, primitives_per_pixel)};
}

/// Splatting BEV (unweighted feature and confidence maps).
inline BevOutput render_ground(const GroundInputs &in, const PipelineConfig &cfg) {
    const PrimitiveSet set = generate_primitives(in.depth, in.features, in.confidence, in.raw, cfg.camera,
                                                 cfg.primitives);
    return render_forward(project_all(set, cfg.grid, cfg.render), cfg.grid, set.feature_dim, cfg.render,
                          cfg.threads);
}

/// Confidence-weighted BEV feature map produced by the chosen method.
inline FeatureMap synthesize_bev(const GroundInputs &in, PipelineKind kind, const PipelineConfig &cfg) {
    switch (kind) {
    case PipelineKind::bevsplat: {
        const BevOutput out = render_ground(in, cfg);
        return weight_features(out.f_bev, out.c_bev);
    }
    case PipelineKind::ipm: {
        const BevMap f = ipm_project(in.features, cfg.camera, cfg.cam_height, cfg.grid, cfg.threads);
        FeatureMap conf_img(1, in.confidence.rows, in.confidence.cols);
        conf_img.data = in.confidence.data;
        const BevMap c = ipm_project(conf_img, cfg.camera, cfg.cam_height, cfg.grid, cfg.threads);
        ScalarMap conf(cfg.grid.size, cfg.grid.size);
        conf.data = c.features.data;
        return weight_features(f.features, conf);
    }
    case PipelineKind::direct: {
        const PrimitiveSet set = generate_primitives(in.depth, in.features, in.confidence, in.raw, cfg.camera,
                                                     cfg.primitives);
        return direct_project(set, cfg.grid).features;
    }
    }
    throw DomainError("unknown pipeline");
}

struct LocalizationResult {
    PeakResult peak;
    SimilarityMap map;
};

inline LocalizationResult localize(const GroundInputs &in, const FeatureMap &satellite, PipelineKind kind,
                                   const PipelineConfig &cfg) {
    const FeatureMap bev = synthesize_bev(in, kind, cfg);
    SimilarityMap map = similarity_map(satellite, bev, cfg.search_radius, cfg.grid.beta, cfg.threads);
    const PeakResult p = peak(map);
    return {p, std::move(map)};
}

struct LocalizationRecord {
    std::uint64_t seed = 0;
    double planted_dz = 0.0;
    double planted_dx = 0.0;
    double estimated_dz = 0.0;
    double estimated_dx = 0.0;
    double error = 0.0;
    double peak = 0.0;
};

inline LocalizationRecord make_record(std::uint64_t seed, double planted_dz, double planted_dx, const PeakResult &p) {
    LocalizationRecord rec{seed, planted_dz, planted_dx, p.dz_m, p.dx_m, 0.0, p.value};
    rec.error = std::hypot(rec.estimated_dz - planted_dz, rec.estimated_dx - planted_dx);
    return rec;
}

struct LocalizationSummary {
    std::vector<LocalizationRecord> records;
    double mean_error = 0.0;
    double median_error = 0.0;
    double recall_1m = 0.0;
    double recall_3m = 0.0;
};

inline LocalizationSummary summarize(std::vector<LocalizationRecord> records) {
    LocalizationSummary s;
    s.records = std::move(records);
    if (s.records.empty()) {
        return s;
    }
    std::vector<double> errors;
    for (const auto &r : s.records) {
        errors.push_back(r.error);
        s.mean_error += r.error;
        s.recall_1m += r.error <= 1.0 ? 1.0 : 0.0;
        s.recall_3m += r.error <= 3.0 ? 1.0 : 0.0;
    }
    const double n = static_cast<double>(errors.size());
    s.mean_error /= n;
    s.recall_1m /= n;
    s.recall_3m /= n;
    std::sort(errors.begin(), errors.end());
    const std::size_t mid = errors.size() / 2;
    s.median_error = errors.size() % 2 ? errors[mid] : 0.5 * (errors[mid - 1] + errors[mid]);
    return s;
}

/// Runs `n_scenes` scenes (seeds base.seed + i) through one pipeline. Scenes are spread
/// over workers; each scene runs single-threaded, so results do not depend on the count.
inline LocalizationSummary evaluate_localization(const SceneSpec &base, int n_scenes, PipelineKind kind,
                                                 const PrimitiveOptions &primitives = {},
                                                 const RenderSettings &render = {}, int threads = 0) {
    if (n_scenes < 1) {
        throw DomainError("n_scenes must be >= 1");
    }
    std::vector<LocalizationRecord> records(static_cast<std::size_t>(n_scenes));
    parallel_for(static_cast<std::size_t>(n_scenes), threads, [&](std::size_t i) {
        const Scene scene = make_scene(scene_spec_for(base, static_cast<int>(i)));
        PipelineConfig cfg = pipeline_config_for(scene);
        cfg.primitives = primitives;
        cfg.render = render;
        cfg.threads = 1;
        const auto result = localize(ground_inputs_for(scene, primitives.primitives_per_pixel), scene.satellite,
                                     kind, cfg);
        records[i] = make_record(scene.spec.seed, scene.planted_dz, scene.planted_dx, result.peak);
    });
    return summarize(std::move(records));
}

// ---------------------------------------------------------------------------------------
// Training objective

struct TrainingSample {
    GroundInputs ground;
    FeatureMap positive;
    std::vector<FeatureMap> negatives;
    int label_row = 0; // noisy location label, offset cells
    int label_col = 0;
    double planted_dz = 0.0;
    double planted_dx = 0.0;
    std::uint64_t seed = 0;
};

struct ObjectiveResult {
    LossReport report;
    PeakResult positive_peak;
    std::vector<PeakResult> negative_peaks;
    GpsLossResult gps;
    RawAttributes d_raw;
    FeatureMap d_features;
    ScalarMap d_confidence;
};

/// Splats through the sample's raw attributes, computes the weakly and GPS losses and,
/// when requested, gradients of l_total with respect to raw attributes, features and
/// confidences.
inline ObjectiveResult evaluate_objective(const TrainingSample &sample, const PipelineConfig &cfg,
                                          const LossConfig &loss, bool with_gradient) {
    if (sample.negatives.empty()) {
        throw DomainError("training sample needs at least one negative");
    }
    const auto &in = sample.ground;
    const PrimitiveSet set = generate_primitives(in.depth, in.features, in.confidence, in.raw, cfg.camera,
                                                 cfg.primitives);
    const std::vector<Splat2D> splats = project_all(set, cfg.grid, cfg.render);
    const int channels = set.feature_dim;
    const BevOutput bev = render_forward(splats, cfg.grid, channels, cfg.render, cfg.threads);
    const FeatureMap weighted = weight_features(bev.f_bev, bev.c_bev);

    const double beta = cfg.grid.beta;
    const SimilarityMap p_pos = similarity_map(sample.positive, weighted, cfg.search_radius, beta, cfg.threads);
    const PeakResult pk_pos = peak(p_pos);
    std::vector<PeakResult> pk_neg;
    std::vector<double> neg_values;
    for (const auto &neg : sample.negatives) {
        pk_neg.push_back(peak(similarity_map(neg, weighted, cfg.search_radius, beta, cfg.threads)));
        neg_values.push_back(pk_neg.back().value);
    }
    const GpsLossResult gps = gps_loss(p_pos, sample.label_row, sample.label_col, loss.d, beta);

    ObjectiveResult out;
    out.positive_peak = pk_pos;
    out.negative_peaks = pk_neg;
    out.gps = gps;
    out.report.l_weakly = weakly_loss(pk_pos.value, neg_values, loss.alpha);
    out.report.l_gps = gps.loss;
    out.report.lambda1 = loss.lambda1;
    out.report.alpha = loss.alpha;
    out.report.d = loss.d;
    out.report.l_total = total_loss(out.report.l_weakly, out.report.l_gps, loss.lambda1);
    if (!with_gradient) {
        return out;
    }

    // Peaks -> weighted BEV.
    FeatureMap d_weighted(channels, cfg.grid.size, cfg.grid.size);
    const WeaklyGradient gw = weakly_loss_backward(pk_pos.value, neg_values, loss.alpha);
    const GpsGradient gg = gps_loss_backward(gps);
    {
        const SimilarityEngine pos(sample.positive, weighted);
        pos.accumulate_gradient(pk_pos.d_row, pk_pos.d_col, gw.d_pos, d_weighted);
        pos.accumulate_gradient(gps.global.d_row, gps.global.d_col, loss.lambda1 * gg.d_global, d_weighted);
        pos.accumulate_gradient(gps.window.d_row, gps.window.d_col, loss.lambda1 * gg.d_window, d_weighted);
    }
    for (std::size_t i = 0; i < sample.negatives.size(); ++i) {
        const SimilarityEngine neg(sample.negatives[i], weighted);
        neg.accumulate_gradient(pk_neg[i].d_row, pk_neg[i].d_col, gw.d_neg[i], d_weighted);
    }

    // Weighted BEV -> rendered maps -> splats.
    const auto [d_f, d_c] = weight_features_backward(bev.f_bev, bev.c_bev, d_weighted);
    const GradientBundle grads = render_backward(splats, cfg.grid, d_f, d_c, cfg.render, cfg.threads);

    // Splats -> primitives -> raw attributes and per-pixel inputs.
    out.d_raw = RawAttributes(in.raw.slots(), in.raw.rows(), in.raw.cols());
    out.d_features = FeatureMap(channels, in.features.rows, in.features.cols);
    out.d_confidence = ScalarMap(in.confidence.rows, in.confidence.cols);
    const double inv_beta = 1.0 / beta;
    for (std::size_t i = 0; i < set.size(); ++i) {
        const auto &prim = set.items[i];
        const auto &g = grads.splats[i];
        const auto &src = prim.source;
        for (int ch = 0; ch < channels; ++ch) {
            out.d_features.at(ch, src.row, src.col) += g.d_feature[ch];
        }
        out.d_confidence.at(src.row, src.col) += g.d_confidence;

        const Vec3 d_mean(g.d_mean2[1] * inv_beta, 0.0, g.d_mean2[0] * inv_beta);
        const Mat2 &a = splats[i].inv_cov2;
        const Mat2 d_sigma2 = -a.transpose() * g.d_inv_cov2 * a.transpose();
        Mat3 d_sigma3 = Mat3::Zero();
        d_sigma3(2, 2) = d_sigma2(0, 0) * inv_beta * inv_beta;
        d_sigma3(2, 0) = d_sigma2(0, 1) * inv_beta * inv_beta;
        d_sigma3(0, 2) = d_sigma2(1, 0) * inv_beta * inv_beta;
        d_sigma3(0, 0) = d_sigma2(1, 1) * inv_beta * inv_beta;
        const auto [d_scale, d_rot] = covariance_backward(prim.scale, prim.rotation, d_sigma3);

        const RawPrimitive raw_slot = in.raw.slot(src.slot, src.row, src.col);
        const RawPrimitive d = activate_backward(raw_slot, d_mean, d_scale, d_rot, g.d_opacity,
                                                 cfg.primitives.max_offset, cfg.primitives.max_scale);
        RawPrimitive acc = out.d_raw.slot(src.slot, src.row, src.col);
        acc.offset += d.offset;
        acc.scale += d.scale;
        acc.quat += d.quat;
        acc.opacity += d.opacity;
        out.d_raw.set_slot(src.slot, src.row, src.col, acc);
    }
    return out;
}

/// Builds a training sample from a scene spec: the scene's own satellite map as positive,
/// satellites of `negatives` other scenes as negatives, and a label within +-label_noise_m
/// of the planted offset.
inline TrainingSample make_training_sample(const SceneSpec &spec, int negatives, int primitives_per_pixel,
                                           double label_noise_m = 1.0) {
    if (negatives < 1) {
        throw DomainError("need at least one negative");
    }
    const Scene scene = make_scene(spec);
    TrainingSample sample;
    sample.ground = ground_inputs_for(scene, primitives_per_pixel);
    sample.positive = scene.satellite;
    sample.planted_dz = scene.planted_dz;
    sample.planted_dx = scene.planted_dx;
    sample.seed = spec.seed;
    for (int k = 0; k < negatives; ++k) {
        SceneSpec other = spec;
        other.seed = spec.seed + 7919ull * static_cast<std::uint64_t>(k + 1);
        sample.negatives.push_back(make_scene(other).satellite);
    }
    detail::SceneRng rng(spec.seed ^ 0xABCDEF12345ull);
    const double beta = spec.beta();
    const int radius = search_radius_cells(spec.search_m, beta, spec.grid_size);
    const auto label = [&](double planted) {
        const double noisy = planted + rng.uniform(-label_noise_m, label_noise_m);
        return std::clamp(static_cast<int>(std::lround(noisy / beta)), -radius, radius);
    };
    sample.label_row = label(sample.planted_dz);
    sample.label_col = label(sample.planted_dx);
    return sample;
}

struct OptimizeResult {
    std::vector<LossReport> trace; // steps + 1 entries: before each update, then final
    LocalizationRecord final_record;
    double final_gradient_norm = 0.0;
    RawAttributes raw;
};

inline double gradient_norm(const RawAttributes &g) {
    double s = 0.0;
    for (const double v : g.data()) {
        s += v * v;
    }
    return std::sqrt(s);
}

/// Plain gradient descent on the raw attributes through render -> match -> loss.
inline OptimizeResult optimize_primitives(TrainingSample sample, const PipelineConfig &cfg, const LossConfig &loss,
                                          int steps, double step_size) {
    if (steps < 1) {
        throw DomainError("steps must be >= 1");
    }
    OptimizeResult result;
    for (int step = 0; step <= steps; ++step) {
        const ObjectiveResult obj = evaluate_objective(sample, cfg, loss, true);
        if (!std::isfinite(obj.report.l_total)) {
            throw NumericError("non-finite loss at step " + std::to_string(step));
        }
        result.trace.push_back(obj.report);
        result.final_gradient_norm = gradient_norm(obj.d_raw);
        if (!std::isfinite(result.final_gradient_norm)) {
            throw NumericError("non-finite gradient at step " + std::to_string(step));
        }
        if (step == steps) {
            result.final_record = make_record(sample.seed, sample.planted_dz, sample.planted_dx, obj.positive_peak);
            break;
        }
        auto &raw = sample.ground.raw.data();
        const auto &grad = obj.d_raw.data();
        for (std::size_t i = 0; i < raw.size(); ++i) {
            raw[i] -= step_size * grad[i];
        }
    }
    result.raw = sample.ground.raw;
    return result;
}

} // namespace bevsplat
