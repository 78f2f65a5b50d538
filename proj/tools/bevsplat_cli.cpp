// Copyright Contributors to the bevsplat project
// SPDX-License-Identifier: Apache-2.0

// Command-line front end. Exit codes: 0 success, 1 numeric or check failure, 2 usage
// error (bad flag, missing or malformed input).

#include "bevsplat/bevsplat.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

namespace fs = std::filesystem;
using namespace bevsplat;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

/// Raised for failed checks that are not exceptions of the library itself.
struct CheckFailed : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void ensure_dir(const fs::path &dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        throw IoError(0, "cannot create directory " + dir.string() + ": " + ec.message());
    }
}

/// Plain-text PPM (P3) of a scalar map, values clamped to [0, 1].
void write_ppm(const ScalarMap &m, const fs::path &path) {
    std::ofstream out(path);
    if (!out) {
        throw IoError(0, "cannot open " + path.string() + " for writing");
    }
    out << "P3\n" << m.cols << ' ' << m.rows << "\n255\n";
    for (int r = 0; r < m.rows; ++r) {
        for (int c = 0; c < m.cols; ++c) {
            const int v = static_cast<int>(std::lround(255.0 * std::clamp(m.at(r, c), 0.0, 1.0)));
            out << v << ' ' << v << ' ' << v << (c + 1 == m.cols ? '\n' : ' ');
        }
    }
}

void write_bev(const BevOutput &bev, const fs::path &dir, DType dtype) {
    ensure_dir(dir);
    save_tensor(to_tensor(bev.f_bev, dtype), dir / "f_bev.bvt");
    save_tensor(to_tensor(bev.c_bev, dtype), dir / "c_bev.bvt");
    save_tensor(to_tensor(bev.final_t, dtype), dir / "final_t.bvt");
    write_ppm(bev.c_bev, dir / "c_bev.ppm");
}

void write_similarity(const SimilarityMap &m, const fs::path &path) {
    const std::uint64_t side = static_cast<std::uint64_t>(m.side());
    save_tensor(Tensor({side, side}, m.values), path);
    fs::path sidecar = path;
    sidecar += ".json";
    save_json(Json{{"r", m.radius}, {"beta", m.beta}}, sidecar);
}

/// Columns: mean xyz, scale xyz, quaternion wxyz, opacity, confidence, C features.
constexpr int kPrimitiveColumns = 12;

PrimitiveSet read_primitive_file(const fs::path &path, std::optional<int> dim) {
    PrimitiveSet set;
    if (fs::file_size(path) == 0) {
        if (!dim || *dim < 1) {
            throw DomainError("empty primitive file needs --dim >= 1");
        }
        set.feature_dim = *dim;
        return set;
    }
    const Tensor t = load_tensor(path);
    if (t.ndim() != 2 || t.shape()[1] <= kPrimitiveColumns) {
        throw ParseError("shape", "primitive tensor must be [N, 12 + C] with C >= 1");
    }
    const int cols = static_cast<int>(t.shape()[1]);
    set.feature_dim = cols - kPrimitiveColumns;
    if (dim && *dim != set.feature_dim) {
        throw DomainError("--dim disagrees with the primitive file");
    }
    const auto v = t.to_doubles();
    for (std::uint64_t i = 0; i < t.shape()[0]; ++i) {
        const double *row = v.data() + i * cols;
        GaussianPrimitive p;
        p.mean = Vec3(row[0], row[1], row[2]);
        p.scale = Vec3(row[3], row[4], row[5]);
        p.rotation = Quat(row[6], row[7], row[8], row[9]);
        if (p.rotation.norm() < kMinQuaternionNorm) {
            throw DomainError("primitive " + std::to_string(i) + " has a zero quaternion");
        }
        p.rotation.normalize();
        p.opacity = row[10];
        p.confidence = row[11];
        p.feature.assign(row + kPrimitiveColumns, row + cols);
        set.items.push_back(std::move(p));
    }
    return set;
}

GroundInputs read_ground_dir(const fs::path &dir, int primitives_per_pixel, bool need_depth) {
    GroundInputs in;
    in.features = feature_map_from(load_tensor(dir / "features.bvt"));
    const int h = in.features.rows;
    const int w = in.features.cols;
    if (fs::exists(dir / "confidence.bvt")) {
        in.confidence = scalar_map_from(load_tensor(dir / "confidence.bvt"));
    } else {
        in.confidence = ScalarMap(h, w, 1.0);
    }
    if (need_depth || fs::exists(dir / "depth.bvt")) {
        in.depth = scalar_map_from(load_tensor(dir / "depth.bvt"));
    } else {
        in.depth = ScalarMap(h, w);
    }
    if (fs::exists(dir / "raw.bvt")) {
        in.raw = RawAttributes::from_tensor(load_tensor(dir / "raw.bvt"));
    } else {
        in.raw = RawAttributes(primitives_per_pixel, h, w);
    }
    return in;
}

Json read_config(const std::string &path) { return load_json(path); }

/// Scene spec documents are either a bare spec or {"scene": spec, "loss": ..., ...}.
const Json &scene_section(const Json &doc) { return doc.contains("scene") ? doc.at("scene") : doc; }

// ---------------------------------------------------------------------------------------

struct RenderArgs {
    std::string primitives;
    std::string grid;
    std::string out;
    std::optional<int> dim;
    bool exact = false;
    bool f32 = false;
};

int cmd_render(const RenderArgs &a, int threads) {
    const Json cfg = read_config(a.grid);
    const BevGridSpec grid = grid_from_json(cfg);
    RenderSettings settings = render_from_json(cfg);
    if (a.exact) {
        settings = RenderSettings::exact();
    }
    const PrimitiveSet set = read_primitive_file(a.primitives, a.dim);
    const auto splats = project_all(set, grid, settings);
    const BevOutput bev = render_forward(splats, grid, set.feature_dim, settings, threads);
    write_bev(bev, a.out, a.f32 ? DType::f32 : DType::f64);
    std::cout << "rendered " << set.size() << " primitives onto " << grid.size << "x" << grid.size << " cells -> "
              << a.out << "\n";
    return kExitOk;
}

struct GradcheckArgs {
    std::uint64_t seed = 1;
    int splats = 32;
    int dim = 4;
    double tol = 1e-3;
    int lambda1 = 1;
};

int cmd_gradcheck(const GradcheckArgs &a) {
    if (a.splats > 64) {
        throw DomainError("--splats must be <= 64");
    }
    GradcheckOptions o;
    o.splats = a.splats;
    o.dim = a.dim;
    o.lambda1 = a.lambda1;
    const GradcheckCase gc = make_gradcheck_case(a.seed, o);
    const GradcheckReport rep = run_gradcheck(gc, o);
    for (const auto &g : rep.groups) {
        std::printf("%-10s n=%-4zu max_rel=%.3e max_abs=%.3e max_grad=%.3e\n", g.name.c_str(), g.count, g.max_rel,
                    g.max_abs, g.max_gradient);
    }
    std::printf("parameters %zu, max relative error %.3e (tolerance %.1e)\n", rep.parameters, rep.max_rel, a.tol);
    if (!rep.selections_stable) {
        std::fprintf(stderr, "error: a finite-difference step changed an argmax selection\n");
        return kExitFailure;
    }
    return rep.max_rel < a.tol ? kExitOk : kExitFailure;
}

struct LocalizeArgs {
    std::string sat;
    std::string ground_dir;
    std::string config;
    std::string out;
    std::string pipeline = "bevsplat";
    std::string similarity;
    std::optional<int> radius;
};

int cmd_localize(const LocalizeArgs &a, int threads) {
    PipelineConfig cfg = pipeline_from_json(read_config(a.config));
    cfg.threads = threads;
    if (a.radius) {
        cfg.search_radius = *a.radius;
    }
    const PipelineKind kind = parse_pipeline(a.pipeline);
    const GroundInputs in = read_ground_dir(a.ground_dir, cfg.primitives.primitives_per_pixel,
                                            kind != PipelineKind::ipm);
    const FeatureMap sat = feature_map_from(load_tensor(a.sat));
    const auto res = localize(in, sat, kind, cfg);
    const Json out{{"pipeline", pipeline_name(kind)},
                   {"d_row", res.peak.d_row},
                   {"d_col", res.peak.d_col},
                   {"dz_m", res.peak.dz_m},
                   {"dx_m", res.peak.dx_m},
                   {"peak", res.peak.value},
                   {"radius", res.map.radius},
                   {"beta", res.map.beta}};
    save_json(out, a.out);
    if (!a.similarity.empty()) {
        write_similarity(res.map, a.similarity);
    }
    std::cout << out.dump() << "\n";
    return kExitOk;
}

struct BaselineArgs {
    std::string method;
    std::string ground_dir;
    std::string config;
    std::string out;
};

int cmd_baseline(const BaselineArgs &a, int threads) {
    PipelineConfig cfg = pipeline_from_json(read_config(a.config));
    ensure_dir(a.out);
    BevMap bev;
    if (a.method == "ipm") {
        const GroundInputs in = read_ground_dir(a.ground_dir, cfg.primitives.primitives_per_pixel, false);
        bev = ipm_project(in.features, cfg.camera, cfg.cam_height, cfg.grid, threads);
    } else {
        const GroundInputs in = read_ground_dir(a.ground_dir, cfg.primitives.primitives_per_pixel, true);
        bev = direct_project(generate_primitives(in.depth, in.features, in.confidence, in.raw, cfg.camera,
                                                 cfg.primitives),
                             cfg.grid);
    }
    save_tensor(to_tensor(bev.features), fs::path(a.out) / "bev.bvt");
    save_tensor(to_tensor(bev.mask), fs::path(a.out) / "mask.bvt");
    write_ppm(bev.mask, fs::path(a.out) / "mask.ppm");
    std::cout << a.method << " BEV written to " << a.out << "\n";
    return kExitOk;
}

struct SynthArgs {
    std::string spec;
    int n = 1;
    std::string pipeline = "bevsplat";
    std::string out;
    std::string records;
    std::string emit_dir;
    std::optional<int> per_pixel; // overrides the config file
};

void emit_scene(const Scene &scene, int per_pixel, const fs::path &dir) {
    ensure_dir(dir);
    save_tensor(to_tensor(scene.depth), dir / "depth.bvt");
    save_tensor(to_tensor(scene.features), dir / "features.bvt");
    save_tensor(to_tensor(scene.confidence), dir / "confidence.bvt");
    save_tensor(to_tensor(scene.satellite), dir / "satellite.bvt");
    save_tensor(initial_raw_attributes(scene, per_pixel).to_tensor(), dir / "raw.bvt");
    Json cfg{{"grid", {{"size", scene.grid.size}, {"beta", scene.grid.beta}}},
             {"search_m", scene.spec.search_m},
             {"cam_height", scene.spec.cam_height}};
    if (const auto *p = std::get_if<PanoramaGeometry>(&scene.camera)) {
        cfg["camera"] = {{"kind", "panorama"}, {"width", p->width}, {"height", p->height}};
    } else {
        const auto &k = std::get<PinholeIntrinsics>(scene.camera);
        cfg["camera"] = {{"kind", "pinhole"}, {"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}};
    }
    save_json(cfg, dir / "config.json");
    save_json(Json{{"planted_m", {scene.planted_dz, scene.planted_dx}}}, dir / "planted.json");
}

int cmd_synth(const SynthArgs &a, int threads) {
    if (a.n < 1) {
        throw DomainError("--n must be >= 1");
    }
    SceneSpec spec;
    PrimitiveOptions prims;
    RenderSettings render;
    if (!a.spec.empty()) {
        const Json doc = read_config(a.spec);
        spec = scene_spec_from_json(scene_section(doc));
        prims = primitives_from_json(doc);
        render = render_from_json(doc);
    }
    if (a.per_pixel) {
        prims.primitives_per_pixel = *a.per_pixel;
    }
    const PipelineKind kind = parse_pipeline(a.pipeline);
    const LocalizationSummary summary = evaluate_localization(spec, a.n, kind, prims, render, threads);
    if (!a.records.empty()) {
        std::ofstream lines(a.records);
        if (!lines) {
            throw IoError(0, "cannot open " + a.records + " for writing");
        }
        for (const auto &r : summary.records) {
            lines << to_json(r).dump() << '\n';
        }
    }
    if (!a.emit_dir.empty()) {
        for (int i = 0; i < a.n; ++i) {
            emit_scene(make_scene(scene_spec_for(spec, i)), prims.primitives_per_pixel,
                       fs::path(a.emit_dir) / ("scene_" + std::to_string(i)));
        }
    }
    Json out = to_json(summary);
    out["pipeline"] = pipeline_name(kind);
    out["spec"] = to_json(spec);
    save_json(out, a.out);
    std::cout << to_json(summary).dump() << "\n";
    return kExitOk;
}

struct OptimizeArgs {
    std::string spec;
    int steps = 100;
    double lr = 1e-2;
    std::optional<int> lambda1;
    std::optional<int> negatives;
    std::string out;
    std::optional<int> per_pixel; // overrides the config file
};

int cmd_optimize(const OptimizeArgs &a, int threads) {
    const Json doc = read_config(a.spec);
    const SceneSpec spec = scene_spec_from_json(scene_section(doc));
    LossConfig loss = loss_from_json(doc);
    if (a.lambda1) {
        if (*a.lambda1 != 0 && *a.lambda1 != 1) {
            throw DomainError("--lambda1 must be 0 or 1");
        }
        loss.lambda1 = *a.lambda1;
    }
    if (a.negatives) {
        loss.negatives = *a.negatives;
    }
    PipelineConfig cfg = pipeline_config_for(make_scene(spec));
    cfg.primitives = primitives_from_json(doc);
    if (a.per_pixel) {
        cfg.primitives.primitives_per_pixel = *a.per_pixel;
    }
    TrainingSample sample = make_training_sample(spec, loss.negatives, cfg.primitives.primitives_per_pixel);
    cfg.render = render_from_json(doc);
    cfg.threads = threads;
    const OptimizeResult res = optimize_primitives(std::move(sample), cfg, loss, a.steps, a.lr);
    Json trace = Json::array();
    for (const auto &r : res.trace) {
        trace.push_back(to_json(r));
    }
    const Json out{{"steps", a.steps},
                   {"lr", a.lr},
                   {"trace", trace},
                   {"initial_l_total", res.trace.front().l_total},
                   {"final_l_total", res.trace.back().l_total},
                   {"final_gradient_norm", res.final_gradient_norm},
                   {"final", to_json(res.final_record)}};
    save_json(out, a.out);
    std::printf("l_total %.6f -> %.6f over %d steps, final error %.3f m\n", res.trace.front().l_total,
                res.trace.back().l_total, a.steps, res.final_record.error);
    return kExitOk;
}

struct BenchArgs {
    std::size_t splats = 49152;
    int size = 128;
    int dim = 8;
    std::uint64_t seed = 1;
    int repeats = 3;
    std::string out;
};

int cmd_bench(const BenchArgs &a, int threads) {
    const BenchReport r = run_bench(a.seed, a.splats, a.size, threads, a.dim, a.repeats);
    const Json out{{"splats", r.splats},
                   {"size", r.size},
                   {"threads", r.threads},
                   {"reference_cells_per_sec", r.reference_cells_per_sec},
                   {"tiled_cells_per_sec", r.tiled_cells_per_sec},
                   {"speedup", r.speedup},
                   {"max_abs_diff_exact", r.max_abs_diff_exact},
                   {"max_abs_diff_culled", r.max_abs_diff_culled},
                   {"thread_invariant", r.thread_invariant}};
    if (!a.out.empty()) {
        save_json(out, a.out);
    }
    std::printf("reference %.3g cells/s, tiled %.3g cells/s (%.1fx, %d threads)\n", r.reference_cells_per_sec,
                r.tiled_cells_per_sec, r.speedup, r.threads);
    std::printf("exact tiled vs reference max |diff| %.3e, culled %.3e, thread invariant %s\n", r.max_abs_diff_exact,
                r.max_abs_diff_culled, r.thread_invariant ? "yes" : "no");
    if (r.max_abs_diff_exact > 1e-5 || !r.thread_invariant) {
        throw CheckFailed("tiled renderer disagrees with the reference");
    }
    return kExitOk;
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"bevsplat: feature-Gaussian BEV splatting and satellite matching"};
    app.require_subcommand(1);
    int threads = 0;
    app.add_option("--threads", threads, "worker cap (default: BEVSPLAT_THREADS, then all cores)")
        ->check(CLI::NonNegativeNumber);

    RenderArgs render;
    auto *c_render = app.add_subcommand("render", "forward splatting of a primitive file");
    c_render->add_option("--primitives", render.primitives, "[N, 12 + C] tensor")
        ->required()
        ->check(CLI::ExistingFile);
    c_render->add_option("--grid", render.grid, "JSON with a grid section")->required()->check(CLI::ExistingFile);
    c_render->add_option("--out", render.out, "output directory")->required();
    c_render->add_option("--dim", render.dim, "feature channels (needed for an empty file)");
    c_render->add_flag("--exact", render.exact, "disable alpha floor, early stop and footprint culling");
    c_render->add_flag("--f32", render.f32, "write f32 tensors");

    GradcheckArgs gradcheck;
    auto *c_grad = app.add_subcommand("gradcheck", "analytic backward vs central differences");
    c_grad->add_option("--seed", gradcheck.seed);
    c_grad->add_option("--splats", gradcheck.splats)->check(CLI::Range(1, 64));
    c_grad->add_option("--dim", gradcheck.dim)->check(CLI::Range(1, 64));
    c_grad->add_option("--tol", gradcheck.tol);
    c_grad->add_option("--lambda1", gradcheck.lambda1)->check(CLI::IsMember({0, 1}));

    LocalizeArgs loc;
    auto *c_loc = app.add_subcommand("localize", "one query through the full pipeline");
    c_loc->add_option("--sat", loc.sat, "satellite feature map [C, S, S]")->required()->check(CLI::ExistingFile);
    c_loc->add_option("--ground-dir", loc.ground_dir, "features.bvt, depth.bvt, confidence.bvt, raw.bvt")
        ->required()
        ->check(CLI::ExistingDirectory);
    c_loc->add_option("--config", loc.config)->required()->check(CLI::ExistingFile);
    c_loc->add_option("--out", loc.out)->required();
    c_loc->add_option("--pipeline", loc.pipeline)->check(CLI::IsMember({"bevsplat", "ipm", "direct"}));
    c_loc->add_option("--similarity", loc.similarity, "also write the similarity map (.bvt + .json sidecar)");
    c_loc->add_option("--radius", loc.radius, "search radius in cells (overrides config)");

    BaselineArgs base;
    auto *c_base = app.add_subcommand("baseline", "IPM or direct-projection BEV");
    c_base->add_option("--method", base.method)->required()->check(CLI::IsMember({"ipm", "direct"}));
    c_base->add_option("--ground-dir", base.ground_dir)->required()->check(CLI::ExistingDirectory);
    c_base->add_option("--config", base.config)->required()->check(CLI::ExistingFile);
    c_base->add_option("--out", base.out, "output directory")->required();

    SynthArgs synth;
    auto *c_synth = app.add_subcommand("synth", "synthetic localization benchmark");
    c_synth->add_option("--spec", synth.spec, "scene spec JSON")->check(CLI::ExistingFile);
    c_synth->add_option("--n", synth.n)->check(CLI::PositiveNumber);
    c_synth->add_option("--pipeline", synth.pipeline)->check(CLI::IsMember({"bevsplat", "ipm", "direct"}));
    c_synth->add_option("--out", synth.out, "aggregate summary JSON")->required();
    c_synth->add_option("--records", synth.records, "per-scene JSON lines");
    c_synth->add_option("--emit-dir", synth.emit_dir, "write each scene's maps as .bvt");
    c_synth->add_option("--per-pixel", synth.per_pixel, "primitives per pixel")->check(CLI::PositiveNumber);

    OptimizeArgs opt;
    auto *c_opt = app.add_subcommand("optimize", "gradient descent on raw primitive attributes");
    c_opt->add_option("--spec", opt.spec)->required()->check(CLI::ExistingFile);
    c_opt->add_option("--steps", opt.steps)->check(CLI::PositiveNumber);
    c_opt->add_option("--lr", opt.lr)->check(CLI::NonNegativeNumber);
    c_opt->add_option("--lambda1", opt.lambda1)->check(CLI::IsMember({0, 1}));
    c_opt->add_option("--negatives", opt.negatives)->check(CLI::PositiveNumber);
    c_opt->add_option("--per-pixel", opt.per_pixel)->check(CLI::PositiveNumber);
    c_opt->add_option("--out", opt.out)->required();

    BenchArgs bench;
    auto *c_bench = app.add_subcommand("bench", "reference vs tiled renderer throughput");
    c_bench->add_option("--splats", bench.splats)->check(CLI::PositiveNumber);
    c_bench->add_option("--size", bench.size)->check(CLI::PositiveNumber);
    c_bench->add_option("--dim", bench.dim)->check(CLI::PositiveNumber);
    c_bench->add_option("--seed", bench.seed);
    c_bench->add_option("--repeats", bench.repeats)->check(CLI::PositiveNumber);
    c_bench->add_option("--out", bench.out, "JSON report");

    // --threads is accepted on every subcommand as well as globally.
    for (auto *sub : {c_render, c_loc, c_base, c_synth, c_opt, c_bench}) {
        sub->add_option("--threads", threads)->check(CLI::NonNegativeNumber);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*c_render) {
            return cmd_render(render, threads);
        }
        if (*c_grad) {
            return cmd_gradcheck(gradcheck);
        }
        if (*c_loc) {
            return cmd_localize(loc, threads);
        }
        if (*c_base) {
            return cmd_baseline(base, threads);
        }
        if (*c_synth) {
            return cmd_synth(synth, threads);
        }
        if (*c_opt) {
            return cmd_optimize(opt, threads);
        }
        if (*c_bench) {
            return cmd_bench(bench, threads);
        }
    } catch (const NumericError &e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return kExitFailure;
    } catch (const CheckFailed &e) {
        std::cerr << "check failed: " << e.what() << "\n";
        return kExitFailure;
    } catch (const ParseError &e) {
        std::cerr << "error: malformed input (" << e.field() << "): " << e.what() << "\n";
        return kExitUsage;
    } catch (const IoError &e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const DomainError &e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception &e) {
        std::cerr << "failure: " << e.what() << "\n";
        return kExitFailure;
    }
    return kExitUsage;
}
