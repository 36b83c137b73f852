#include "gsr/refine.hpp"

#include <chrono>
#include <cmath>
#include <random>

#include <json.hpp>

#include "gsr/core.hpp"
#include "gsr/metrics.hpp"
#include "gsr/threading.hpp"

namespace gsr {
namespace {

double mean_row_norm(const std::vector<double>& rows, std::size_t n, int dim) {
    if (n == 0) return 0.0;
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (int d = 0; d < dim; ++d) {
            const double v = rows[i * dim + d];
            s += v * v;
        }
        acc += std::sqrt(s);
    }
    return acc / static_cast<double>(n);
}

std::vector<RenderOutput> render_views(const GaussianScene& scene,
                                       const std::vector<Camera>& cams,
                                       const RenderOptions& opts) {
    std::vector<RenderOutput> outs(cams.size());
    parallel_chunks(cams.size(), [&](std::size_t m) { outs[m] = render(scene, cams[m], opts); });
    return outs;
}

} // namespace

RefineMode parse_refine_mode(const std::string& text) {
    if (text == "ifsplat") return RefineMode::IfSplat;
    if (text == "gifsplat") return RefineMode::GifSplat;
    throw UsageError("unknown mode: " + text + " (expected ifsplat or gifsplat)");
}

std::string to_string(RefineMode mode) {
    return mode == RefineMode::IfSplat ? "ifsplat" : "gifsplat";
}

std::vector<Camera> novel_cameras(const std::vector<Camera>& refs,
                                  const std::vector<NovelViewSpec>& specs) {
    std::vector<NovelViewSpec> use = specs;
    if (use.empty()) {
        const int b = refs.size() > 1 ? 1 : 0;
        use = {{0, b, 1.0 / 3.0}, {0, b, 2.0 / 3.0}};
    }
    std::vector<Camera> cams;
    cams.reserve(use.size());
    for (const auto& s : use) {
        if (s.cam_a < 0 || s.cam_b < 0 || s.cam_a >= static_cast<int>(refs.size()) ||
            s.cam_b >= static_cast<int>(refs.size())) {
            throw UsageError("novel view pair index out of range");
        }
        cams.push_back(interpolate_cameras(refs[s.cam_a], refs[s.cam_b], s.t));
    }
    return cams;
}

std::pair<GaussianScene, RefineTrace>
refine(const GaussianScene& scene0, const std::vector<std::pair<Image, Camera>>& views,
       const HeadParams& params, const RefineConfig& cfg) {
    if (cfg.steps < 0) throw UsageError("refine: steps must be >= 0");
    if (views.empty()) throw UsageError("refine: needs at least one view");
    validate_scene(scene0);

    std::vector<Camera> ref_cams;
    ref_cams.reserve(views.size());
    for (const auto& [img, cam] : views) {
        if (img.width != cam.width || img.height != cam.height || img.channels != 3) {
            throw UsageError("refine: reference image does not match its camera");
        }
        ref_cams.push_back(cam);
    }

    GaussianScene scene = scene0;
    RefineTrace trace;
    trace.steps.resize(static_cast<std::size_t>(cfg.steps) + 1);
    if (cfg.record_trajectory) trace.snapshots.push_back(scene);

    const int cue_dim = cfg.features.channel_count();
    const std::size_t n = scene.size();

    auto record_metrics = [&](RefineTrace::Step& entry, const std::vector<RenderOutput>& renders) {
        entry.view_mse.resize(renders.size());
        entry.view_psnr.resize(renders.size());
        for (std::size_t m = 0; m < renders.size(); ++m) {
            entry.view_mse[m] = mse(views[m].first, renders[m].image);
            entry.view_psnr[m] = psnr(views[m].first, renders[m].image);
        }
    };

    for (int t = 0; t < cfg.steps; ++t) {
        const auto t_begin = std::chrono::steady_clock::now();
        auto& entry = trace.steps[static_cast<std::size_t>(t)];

        const auto renders = render_views(scene, ref_cams, cfg.render);
        record_metrics(entry, renders);

        auto [obs, coverage] = compute_observation_cues(scene, views, renders, cfg.features);
        entry.mean_obs_norm = mean_row_norm(obs, n, cue_dim);

        std::vector<double> prior;
        if (cfg.mode == RefineMode::GifSplat) {
            std::vector<Camera> prior_cams = novel_cameras(ref_cams, cfg.novel_views);
            std::vector<RenderOutput> prior_renders = render_views(scene, prior_cams, cfg.render);
            if (cfg.prior_on_refs) {
                for (std::size_t m = 0; m < renders.size(); ++m) {
                    prior_renders.push_back(renders[m]);
                }
            }
            std::vector<Image> enhanced(prior_renders.size());
            for (std::size_t m = 0; m < prior_renders.size(); ++m) {
                enhanced[m] = enhance(prior_renders[m].image, cfg.enhancer);
            }
            prior = compute_prior_cues(scene, prior_renders, enhanced, cfg.features).first;
            entry.mean_prior_norm = mean_row_norm(prior, n, cue_dim);
        }

        const WindowPartition windows =
            build_windows(scene, cfg.effective_cell_size(scene.scene_extent), t, cfg.k_win);
        const std::vector<double> tokens = build_tokens(
            scene, obs.data(), prior.empty() ? nullptr : prior.data(), windows, params.shape);
        const std::vector<double> delta =
            head_forward(tokens, n, windows, params, scene.scene_extent);
        scene = update_scene(scene, delta);
        for (std::size_t i = 0; i < n; ++i) {
            if (!gaussian_finite(scene.gaussians[i])) {
                throw NumericError("refine: non-finite state after step " + std::to_string(t));
            }
        }

        entry.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t_begin).count();
        if (cfg.record_trajectory) trace.snapshots.push_back(scene);
    }

    // Final entry: metrics of the refined state.
    {
        const auto t_begin = std::chrono::steady_clock::now();
        auto& entry = trace.steps.back();
        const auto renders = render_views(scene, ref_cams, cfg.render);
        record_metrics(entry, renders);
        entry.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t_begin).count();
    }
    return {std::move(scene), std::move(trace)};
}

std::string RefineTrace::to_json(bool include_timing) const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& s : steps) {
        nlohmann::json j;
        j["view_mse"] = s.view_mse;
        j["view_psnr"] = s.view_psnr;
        j["mean_obs_norm"] = s.mean_obs_norm;
        j["mean_prior_norm"] = s.mean_prior_norm;
        if (include_timing) j["wall_seconds"] = s.wall_seconds;
        arr.push_back(j);
    }
    nlohmann::json root;
    root["steps"] = arr;
    return root.dump(2) + "\n";
}

GaussianScene initialize_from_depth(const std::vector<std::tuple<Image, Camera, Image>>& views,
                                    const FeatureExtractorSpec& feat_spec, int stride) {
    if (views.empty()) throw UsageError("initialize_from_depth: needs at least one view");
    if (stride < 1) throw UsageError("initialize_from_depth: stride must be >= 1");

    GaussianScene scene;
    scene.feat_dim = feat_spec.channel_count();

    for (const auto& [img, cam, depth] : views) {
        if (img.width != cam.width || img.height != cam.height) {
            throw UsageError("initialize_from_depth: image/camera resolution mismatch");
        }
        if (depth.width != cam.width || depth.height != cam.height || depth.channels != 1) {
            throw UsageError("initialize_from_depth: depth/camera resolution mismatch");
        }
        const Image feats = extract_features(img, feat_spec);
        const Mat3 cam_to_world = cam.rotation.transposed();
        const double f_mean = 0.5 * (cam.fx + cam.fy);
        for (int y = 0; y < cam.height; y += stride) {
            for (int x = 0; x < cam.width; x += stride) {
                const double d = depth.at(y, x, 0);
                if (!(d > 0.0)) continue; // invalid depth, pixel skipped
                const Vec3 p_cam{(x - cam.cx) * d / cam.fx, (y - cam.cy) * d / cam.fy, d};
                Gaussian g;
                g.position = cam_to_world * (p_cam - cam.translation);
                // Footprint of roughly `stride` pixels: sigma covers half the
                // sample spacing on each side.
                const double sigma = 0.5 * stride * d / f_mean;
                const double ls = std::log(std::max(sigma, 1e-6));
                g.log_scale = {ls, ls, ls};
                g.color = {img.at(y, x, 0), img.at(y, x, 1), img.at(y, x, 2)};
                g.opacity_logit = 0.0; // opacity 0.5
                scene.gaussians.push_back(g);
                for (int c = 0; c < scene.feat_dim; ++c) {
                    scene.features.push_back(feats.at(y, x, c));
                }
            }
        }
    }
    if (scene.gaussians.empty()) {
        throw NumericError("initialize_from_depth: no valid depth samples");
    }

    Vec3 centroid{0, 0, 0};
    for (const auto& g : scene.gaussians) centroid += g.position;
    centroid = centroid / static_cast<double>(scene.size());
    double radius = 0.0;
    for (const auto& g : scene.gaussians) {
        radius = std::max(radius, norm(g.position - centroid));
    }
    scene.scene_extent = std::max(radius, 1e-3);

    const double ls_max = std::log(scene.scene_extent);
    for (auto& g : scene.gaussians) {
        for (int a = 0; a < 3; ++a) {
            g.log_scale[a] = std::min(g.log_scale[a], ls_max);
        }
    }
    validate_scene(scene);
    return scene;
}

GaussianScene perturb_scene(const GaussianScene& scene, const PerturbConfig& cfg,
                            std::uint64_t seed) {
    if (cfg.position_sigma_rel < 0 || cfg.log_scale_sigma < 0 || cfg.color_sigma < 0 ||
        cfg.opacity_sigma < 0) {
        throw UsageError("perturb_scene: noise scales must be >= 0");
    }
    GaussianScene out = scene;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const double pos_sigma = cfg.position_sigma_rel * scene.scene_extent;
    const double ls_min = std::log(1e-6);
    const double ls_max = std::log(scene.scene_extent);
    // Fixed draw order per gaussian: position, log_scale, color, opacity.
    for (auto& g : out.gaussians) {
        for (int a = 0; a < 3; ++a) g.position[a] += pos_sigma * normal(rng);
        for (int a = 0; a < 3; ++a) {
            g.log_scale[a] = std::clamp(g.log_scale[a] + cfg.log_scale_sigma * normal(rng),
                                        ls_min, ls_max);
        }
        for (int a = 0; a < 3; ++a) g.color[a] = clamp01(g.color[a] + cfg.color_sigma * normal(rng));
        g.opacity_logit += cfg.opacity_sigma * normal(rng);
    }
    return out;
}

} // namespace gsr
