// gsrefine: synthesize toy scenes, initialize gaussians from depth, run the
// forward-only refinement loop, train the update head, and evaluate results.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "gsr/config.hpp"
#include "gsr/core.hpp"
#include "gsr/io.hpp"
#include "gsr/memtrack.hpp"
#include "gsr/metrics.hpp"
#include "gsr/plot.hpp"
#include "gsr/refine.hpp"
#include "gsr/threading.hpp"
#include "gsr/train.hpp"

namespace fs = std::filesystem;
using namespace gsr;

namespace {

std::string view_name(std::size_t i, const char* ext) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "view_%03zu.%s", i, ext);
    return buf;
}

Vec3 parse_vec3(const std::string& text) {
    Vec3 v;
    std::istringstream is(text);
    char comma;
    if (!(is >> v.x >> comma >> v.y >> comma >> v.z)) {
        throw UsageError("expected 'r,g,b', got: " + text);
    }
    return v;
}

SyntheticSceneSpec dataset_from_config(const Config& cfg) {
    SyntheticSceneSpec spec;
    spec.min_gaussians = static_cast<int>(cfg.integer("gaussians_min", spec.min_gaussians));
    spec.max_gaussians = static_cast<int>(cfg.integer("gaussians_max", spec.max_gaussians));
    spec.extent = cfg.number("extent", spec.extent);
    const std::string palette = cfg.str("palette", "random");
    if (palette == "random") {
        spec.palette = SyntheticSceneSpec::Palette::Random;
    } else if (palette == "plane") {
        spec.palette = SyntheticSceneSpec::Palette::TexturedPlane;
    } else {
        throw UsageError("palette must be 'random' or 'plane', got: " + palette);
    }
    spec.camera_count = static_cast<int>(cfg.integer("cameras", spec.camera_count));
    spec.ring_radius = cfg.number("ring_radius", spec.ring_radius);
    spec.ring_height = cfg.number("ring_height", spec.ring_height);
    spec.image_width = static_cast<int>(cfg.integer("width", spec.image_width));
    spec.image_height = static_cast<int>(cfg.integer("height", spec.image_height));
    spec.fov_degrees = cfg.number("fov_deg", spec.fov_degrees);
    return spec;
}

RenderOptions render_from_config(const Config& cfg) {
    RenderOptions opts;
    opts.k_top = static_cast<int>(cfg.integer("k_top", opts.k_top));
    opts.near_plane = cfg.number("near_plane", opts.near_plane);
    if (cfg.has("background")) opts.background = parse_vec3(cfg.str("background", "0,0,0"));
    const std::string precision = cfg.str("precision", "f32");
    if (precision == "f64") {
        opts.use_double = true;
    } else if (precision != "f32") {
        throw UsageError("precision must be f32 or f64, got: " + precision);
    }
    return opts;
}

PerturbConfig perturb_from_config(const Config& cfg) {
    PerturbConfig p;
    p.position_sigma_rel = cfg.number("perturb_pos", 0.01);
    p.log_scale_sigma = cfg.number("perturb_logscale", 0.15);
    p.color_sigma = cfg.number("perturb_color", 0.12);
    p.opacity_sigma = cfg.number("perturb_opacity", 0.6);
    return p;
}

FeatureExtractorSpec features_from_config(const Config& cfg) {
    const std::string path = cfg.str("feature_weights", "");
    if (path.empty()) return FeatureExtractorSpec::handcrafted();
    return FeatureExtractorSpec::loaded(path);
}

std::vector<std::pair<Image, Camera>> load_views(const std::string& cameras_path,
                                                 const std::string& images_dir) {
    const auto cams = load_cameras(cameras_path);
    if (cams.empty()) throw IoError(cameras_path + ": no cameras");
    std::vector<std::pair<Image, Camera>> views;
    views.reserve(cams.size());
    for (std::size_t i = 0; i < cams.size(); ++i) {
        views.emplace_back(read_png_rgb8(images_dir + "/" + view_name(i, "png")), cams[i]);
    }
    return views;
}

void write_text(const std::string& path, const std::string& text) {
    write_file_atomic(path, text.data(), text.size());
}

// ---- synth ----------------------------------------------------------------

int cmd_synth(const Config& cfg, const std::string& out_dir, std::uint64_t seed) {
    const SyntheticSceneSpec spec = dataset_from_config(cfg);
    const RenderOptions render_opts = render_from_config(cfg);
    const FeatureExtractorSpec feats = features_from_config(cfg);

    fs::create_directories(out_dir);
    fs::create_directories(out_dir + "/images");
    fs::create_directories(out_dir + "/depth");

    const SyntheticScene scene = generate_scene(spec, seed, render_opts, feats);
    save_scene(out_dir + "/scene.gspl", scene.ground_truth);
    save_cameras(out_dir + "/cameras.json", scene.cameras);
    for (std::size_t m = 0; m < scene.cameras.size(); ++m) {
        write_png_rgb8(out_dir + "/images/" + view_name(m, "png"), scene.images[m]);
        save_depth(out_dir + "/depth/" + view_name(m, "dpth"), scene.depths[m]);
    }
    std::cout << "wrote dataset: " << out_dir << " (" << scene.ground_truth.size()
              << " gaussians, " << scene.cameras.size() << " views)\n";
    return 0;
}

// ---- init ------------------------------------------------------------------

int cmd_init(const std::string& cameras_path, const std::string& images_dir,
             const std::string& depth_dir, const std::string& out_path, int stride,
             const Config& cfg) {
    const auto cams = load_cameras(cameras_path);
    std::vector<std::tuple<Image, Camera, Image>> views;
    for (std::size_t i = 0; i < cams.size(); ++i) {
        views.emplace_back(read_png_rgb8(images_dir + "/" + view_name(i, "png")), cams[i],
                           load_depth(depth_dir + "/" + view_name(i, "dpth")));
    }
    const GaussianScene scene = initialize_from_depth(views, features_from_config(cfg), stride);
    save_scene(out_path, scene);
    std::cout << "initialized " << scene.size() << " gaussians -> " << out_path << "\n";
    return 0;
}

// ---- refine ----------------------------------------------------------------

int cmd_refine(const Config& cfg, const std::string& scene_path,
               const std::string& cameras_path, const std::string& images_dir,
               const std::string& head_path, const std::string& out_path,
               const std::string& trace_path, const std::string& dump_dir) {
    const GaussianScene scene0 = load_scene(scene_path);
    const auto views = load_views(cameras_path, images_dir);
    const HeadParams params = load_head_params(head_path);

    RefineConfig rc;
    rc.steps = static_cast<int>(cfg.integer("steps", 3));
    rc.mode = parse_refine_mode(cfg.str("mode", "ifsplat"));
    rc.enhancer = EnhancerSpec::parse(cfg.str("enhancer", "identity"));
    rc.enhancer.external_workdir = cfg.str("enhancer_workdir", ".");
    rc.enhancer.external_timeout_seconds = cfg.number("enhancer_timeout", 30.0);
    rc.features = features_from_config(cfg);
    rc.cell_size = cfg.number("cell_size", 0.0);
    rc.k_win = static_cast<int>(cfg.integer("k_win", kDefaultWindowCap));
    rc.render = render_from_config(cfg);
    rc.prior_on_refs = cfg.flag("prior_on_refs", false);
    rc.record_trajectory = !dump_dir.empty();

    const auto [refined, trace] = refine(scene0, views, params, rc);
    save_scene(out_path, refined);
    if (!trace_path.empty()) write_text(trace_path, trace.to_json());

    if (!dump_dir.empty()) {
        fs::create_directories(dump_dir);
        for (std::size_t t = 0; t < trace.snapshots.size(); ++t) {
            for (std::size_t m = 0; m < views.size(); ++m) {
                const RenderOutput ro = render(trace.snapshots[t], views[m].second, rc.render);
                char name[64];
                std::snprintf(name, sizeof(name), "step_%02zu_view_%03zu.png", t, m);
                write_png_rgb8(dump_dir + "/" + std::string(name), ro.image);
            }
        }
    }

    const auto& first = trace.steps.front();
    const auto& last = trace.steps.back();
    auto mean = [](const std::vector<double>& v) {
        double acc = 0.0;
        for (double x : v) acc += x;
        return v.empty() ? 0.0 : acc / v.size();
    };
    std::cout << "refined " << refined.size() << " gaussians over " << rc.steps
              << " steps: mean reference PSNR " << mean(first.view_psnr) << " -> "
              << mean(last.view_psnr) << " dB\n";
    return 0;
}

// ---- train -----------------------------------------------------------------

TrainConfig train_from_config(const Config& cfg, std::uint64_t seed) {
    TrainConfig tc;
    tc.unroll_steps = static_cast<int>(cfg.integer("unroll_steps", 3));
    if (cfg.has("omega")) {
        std::istringstream is(cfg.str("omega", ""));
        std::string tok;
        while (std::getline(is, tok, ',')) tc.omega.push_back(std::stod(tok));
    }
    tc.lambda_feat = cfg.number("lambda_feat", 0.1);
    tc.lr = cfg.number("lr", 3e-4);
    tc.beta1 = cfg.number("beta1", 0.9);
    tc.beta2 = cfg.number("beta2", 0.999);
    tc.eps_opt = cfg.number("eps_opt", 1e-8);
    tc.batch = static_cast<int>(cfg.integer("batch", 4));
    tc.iterations = static_cast<int>(cfg.integer("iterations", 2000));
    tc.seed = seed;
    tc.num_scenes = static_cast<int>(cfg.integer("scenes", 200));
    tc.dataset = dataset_from_config(cfg);
    tc.perturb = perturb_from_config(cfg);
    tc.ref_view_stride = static_cast<int>(cfg.integer("ref_view_stride", 2));
    tc.cell_size = cfg.number("cell_size", 0.0);
    tc.k_win = static_cast<int>(cfg.integer("k_win", kDefaultWindowCap));
    tc.render = render_from_config(cfg);
    tc.features = features_from_config(cfg);
    tc.tau[0] = tc.tau[1] = tc.tau[2] = cfg.number("tau_pos", 0.02);
    tc.tau[3] = tc.tau[4] = tc.tau[5] = cfg.number("tau_scale", 0.2);
    tc.tau[6] = tc.tau[7] = tc.tau[8] = cfg.number("tau_color", 0.2);
    tc.tau[9] = cfg.number("tau_opacity", 1.0);
    tc.log_every = static_cast<int>(cfg.integer("log_every", 25));
    tc.eval_every = static_cast<int>(cfg.integer("eval_every", 0));
    tc.eval_scenes = static_cast<int>(cfg.integer("eval_scenes", 2));
    return tc;
}

int cmd_train(const Config& cfg, const std::string& out_path, const std::string& log_path,
              std::uint64_t seed) {
    const TrainConfig tc = train_from_config(cfg, seed);
    auto [params, log] = train_head(tc);
    save_head_params(out_path, params);
    if (!log_path.empty()) write_text(log_path, log.to_json());
    if (log.aborted_non_finite) {
        std::cerr << "training aborted on non-finite loss; last good checkpoint written to "
                  << out_path << "\n";
        throw NumericError("non-finite training loss");
    }
    std::cout << "trained head (" << tc.iterations << " iterations) -> " << out_path << "\n";
    return 0;
}

// ---- baseline ----------------------------------------------------------------

int cmd_baseline(const Config& cfg, const std::string& scene_path,
                 const std::string& cameras_path, const std::string& images_dir, int steps,
                 double lr, bool line_search, const std::string& out_path,
                 const std::string& curve_path) {
    const GaussianScene scene0 = load_scene(scene_path);
    const auto views = load_views(cameras_path, images_dir);
    BaselineOptions opts;
    opts.line_search = line_search;
    opts.render = render_from_config(cfg);
    const BaselineResult result = gradient_descent_baseline(scene0, views, steps, lr, opts);
    save_scene(out_path, result.scene);
    if (!curve_path.empty()) {
        std::ostringstream os;
        os << "step,loss\n";
        for (std::size_t i = 0; i < result.loss_curve.size(); ++i) {
            os << i << "," << result.loss_curve[i] << "\n";
        }
        write_text(curve_path, os.str());
    }
    std::cout << "baseline: loss " << result.loss_curve.front() << " -> "
              << result.loss_curve.back() << " over " << result.loss_curve.size() - 1
              << " steps" << (result.diverged ? " (diverged, stopped early)" : "") << "\n";
    return 0;
}

// ---- eval ----------------------------------------------------------------------

int cmd_eval(const Config& cfg, const std::string& scene_path, const std::string& cameras_path,
             const std::string& images_dir, const std::string& report_path,
             const std::string& table_path) {
    const GaussianScene scene = load_scene(scene_path);
    const auto views = load_views(cameras_path, images_dir);
    const MetricReport report =
        evaluate(scene, views, render_from_config(cfg), features_from_config(cfg));
    if (!report_path.empty()) write_text(report_path, report.to_json());
    const std::string table = report.to_table();
    if (!table_path.empty()) write_text(table_path, table);
    std::cout << table;
    return 0;
}

// ---- bench -----------------------------------------------------------------------

int cmd_bench(const Config& cfg, const std::string& csv_path, const std::string& plot_path,
              int t_min, int t_max, int repeats, std::uint64_t seed) {
    if (t_min < 0 || t_max < t_min || repeats < 1) {
        throw UsageError("bench: need 0 <= t-min <= t-max and repeats >= 1");
    }
    const SyntheticSceneSpec spec = dataset_from_config(cfg);
    const RenderOptions render_opts = render_from_config(cfg);
    const FeatureExtractorSpec feats = features_from_config(cfg);
    const SyntheticScene scene = generate_scene(spec, subseed(seed, 11), render_opts, feats);
    const GaussianScene init =
        perturb_scene(scene.ground_truth, perturb_from_config(cfg), subseed(seed, 12));
    std::vector<std::pair<Image, Camera>> views;
    for (std::size_t m = 0; m < scene.cameras.size(); ++m) {
        views.emplace_back(scene.images[m], scene.cameras[m]);
    }

    HeadShape shape;
    shape.cue_dim = feats.channel_count();
    shape.feat_dim = feats.channel_count();
    const HeadParams params = init_head_params(shape, subseed(seed, 13));

    RefineConfig rc;
    rc.mode = parse_refine_mode(cfg.str("mode", "ifsplat"));
    rc.enhancer = EnhancerSpec::parse(cfg.str("enhancer", "unsharp"));
    rc.features = feats;
    rc.cell_size = cfg.number("cell_size", 0.0);
    rc.render = render_opts;

    std::vector<double> ts, means, peaks;
    std::ostringstream csv;
    csv << "T,mean_seconds,peak_step_bytes\n";
    for (int t = t_min; t <= t_max; ++t) {
        rc.steps = t;
        double total = 0.0;
        std::uint64_t peak_delta = 0;
        for (int r = 0; r < repeats; ++r) {
            const std::uint64_t baseline = memtrack::reset_peak();
            const auto t0 = std::chrono::steady_clock::now();
            auto result = refine(init, views, params, rc);
            total += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            peak_delta = memtrack::peak_bytes() - baseline;
            (void)result;
        }
        const double mean_s = total / repeats;
        ts.push_back(t);
        means.push_back(mean_s);
        peaks.push_back(static_cast<double>(peak_delta));
        csv << t << "," << mean_s << "," << peak_delta << "\n";
        std::cout << "T=" << t << ": " << mean_s << " s, peak " << peak_delta << " bytes\n";
    }
    write_text(csv_path, csv.str());
    if (!plot_path.empty()) {
        write_png_rgb8(plot_path, render_line_plot(ts, means));
    }
    return 0;
}

int run(int argc, char** argv) {
    CLI::App app{"Forward-only iterative refinement of 3D gaussian splatting scenes"};
    app.require_subcommand(1);
    app.fallthrough();

    int threads = 0;
    std::string config_path;
    std::uint64_t seed = 1;
    app.add_option("--threads", threads, "worker thread cap (0 = hardware)");
    app.add_option("--config", config_path, "key = value configuration file");
    app.add_option("--seed", seed, "random seed");

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    std::string synth_out;
    synth->add_option("--out", synth_out, "output directory")->required();

    // init
    auto* init = app.add_subcommand("init", "initialize a scene from depth maps");
    std::string init_cameras, init_images, init_depth, init_out;
    int init_stride = 2;
    init->add_option("--cameras", init_cameras)->required();
    init->add_option("--images", init_images)->required();
    init->add_option("--depths", init_depth)->required();
    init->add_option("--out", init_out)->required();
    init->add_option("--stride", init_stride, "pixel stride (default 2)");

    // refine
    auto* refine_cmd = app.add_subcommand("refine", "run the forward-only refinement loop");
    std::string rf_scene, rf_cameras, rf_images, rf_head, rf_out, rf_trace, rf_dump;
    std::string rf_mode, rf_enhancer;
    int rf_steps = -1;
    refine_cmd->add_option("--scene", rf_scene)->required();
    refine_cmd->add_option("--cameras", rf_cameras)->required();
    refine_cmd->add_option("--images", rf_images)->required();
    refine_cmd->add_option("--head", rf_head, "head checkpoint")->required();
    refine_cmd->add_option("--out", rf_out, "refined scene path")->required();
    refine_cmd->add_option("--trace", rf_trace, "trace JSON path");
    refine_cmd->add_option("--steps", rf_steps, "refinement step count T");
    refine_cmd->add_option("--mode", rf_mode, "ifsplat | gifsplat");
    refine_cmd->add_option("--enhancer", rf_enhancer,
                           "identity | unsharp[:s] | external:<cmd>");
    refine_cmd->add_option("--dump-steps", rf_dump, "directory for step-wise renders");

    // train
    auto* train_cmd = app.add_subcommand("train", "train the residual update head");
    std::string tr_out, tr_log;
    int tr_iters = -1;
    train_cmd->add_option("--out", tr_out, "checkpoint path")->required();
    train_cmd->add_option("--log", tr_log, "training log JSON path");
    train_cmd->add_option("--iterations", tr_iters, "override iteration count");

    // baseline
    auto* baseline_cmd =
        app.add_subcommand("baseline", "per-scene gradient-descent baseline");
    std::string bl_scene, bl_cameras, bl_images, bl_out, bl_curve;
    int bl_steps = 500;
    double bl_lr = 2e-3;
    bool bl_line_search = false;
    baseline_cmd->add_option("--scene", bl_scene)->required();
    baseline_cmd->add_option("--cameras", bl_cameras)->required();
    baseline_cmd->add_option("--images", bl_images)->required();
    baseline_cmd->add_option("--out", bl_out)->required();
    baseline_cmd->add_option("--curve", bl_curve, "loss curve CSV path");
    baseline_cmd->add_option("--steps", bl_steps);
    baseline_cmd->add_option("--lr", bl_lr);
    baseline_cmd->add_flag("--line-search", bl_line_search, "backtracking line search");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "render held-out views and report metrics");
    std::string ev_scene, ev_cameras, ev_images, ev_report, ev_table;
    eval_cmd->add_option("--scene", ev_scene)->required();
    eval_cmd->add_option("--cameras", ev_cameras)->required();
    eval_cmd->add_option("--images", ev_images)->required();
    eval_cmd->add_option("--report", ev_report, "metric report JSON path");
    eval_cmd->add_option("--table", ev_table, "text table path");

    // bench
    auto* bench_cmd = app.add_subcommand("bench", "runtime scaling sweep over T");
    std::string bn_csv, bn_plot;
    int bn_tmin = 1, bn_tmax = 6, bn_repeats = 5;
    bench_cmd->add_option("--out", bn_csv, "CSV path")->required();
    bench_cmd->add_option("--plot", bn_plot, "line-plot PNG path");
    bench_cmd->add_option("--t-min", bn_tmin);
    bench_cmd->add_option("--t-max", bn_tmax);
    bench_cmd->add_option("--repeats", bn_repeats);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    set_max_threads(threads);
    Config cfg;
    if (!config_path.empty()) cfg = Config::load(config_path);
    if (!app.get_option("--seed")->empty()) {
        cfg.set("seed", std::to_string(seed));
    }
    seed = static_cast<std::uint64_t>(cfg.integer("seed", static_cast<long long>(seed)));

    if (synth->parsed()) return cmd_synth(cfg, synth_out, seed);
    if (init->parsed()) {
        if (init->get_option("--stride")->empty()) {
            init_stride = static_cast<int>(cfg.integer("stride", 2));
        }
        return cmd_init(init_cameras, init_images, init_depth, init_out, init_stride, cfg);
    }
    if (refine_cmd->parsed()) {
        if (rf_steps >= 0) cfg.set("steps", std::to_string(rf_steps));
        if (!rf_mode.empty()) cfg.set("mode", rf_mode);
        if (!rf_enhancer.empty()) cfg.set("enhancer", rf_enhancer);
        return cmd_refine(cfg, rf_scene, rf_cameras, rf_images, rf_head, rf_out, rf_trace,
                          rf_dump);
    }
    if (train_cmd->parsed()) {
        if (tr_iters >= 0) cfg.set("iterations", std::to_string(tr_iters));
        return cmd_train(cfg, tr_out, tr_log, seed);
    }
    if (baseline_cmd->parsed()) {
        return cmd_baseline(cfg, bl_scene, bl_cameras, bl_images, bl_steps, bl_lr,
                            bl_line_search, bl_out, bl_curve);
    }
    if (eval_cmd->parsed()) {
        return cmd_eval(cfg, ev_scene, ev_cameras, ev_images, ev_report, ev_table);
    }
    if (bench_cmd->parsed()) {
        return cmd_bench(cfg, bn_csv, bn_plot, bn_tmin, bn_tmax, bn_repeats, seed);
    }
    throw UsageError("no subcommand given");
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const UsageError& e) {
        std::cerr << "error (usage): " << e.what() << "\n";
        return 1;
    } catch (const IoError& e) {
        std::cerr << "error (io): " << e.what() << "\n";
        return 2;
    } catch (const EnhancerError& e) {
        std::cerr << "error (enhancer): " << e.what() << "\n";
        return 4;
    } catch (const NumericError& e) {
        std::cerr << "error (numeric): " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
