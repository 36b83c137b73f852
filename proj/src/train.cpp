#include "gsr/train.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <json.hpp>

#include "gsr/core.hpp"
#include "gsr/cues.hpp"
#include "gsr/metrics.hpp"
#include "gsr/threading.hpp"

namespace gsr {
namespace {

struct Splitmix {
    std::uint64_t state;
    std::uint64_t next() {
        std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }
};

Camera look_at_camera(const Vec3& eye, const Vec3& target, int width, int height,
                      double fov_degrees) {
    const Vec3 up{0, 0, 1};
    const Vec3 fwd = normalized(target - eye);
    Vec3 right = cross(fwd, up);
    if (norm(right) < 1e-9) right = Vec3{1, 0, 0};
    right = normalized(right);
    const Vec3 down = cross(fwd, right);

    Camera cam;
    cam.width = width;
    cam.height = height;
    const double f = (width / 2.0) / std::tan(fov_degrees * M_PI / 360.0);
    cam.fx = f;
    cam.fy = f;
    cam.cx = width / 2.0;
    cam.cy = height / 2.0;
    for (int c = 0; c < 3; ++c) {
        cam.rotation(0, c) = right[c];
        cam.rotation(1, c) = down[c];
        cam.rotation(2, c) = fwd[c];
    }
    cam.translation = cam.rotation * (eye * -1.0);
    return cam;
}

void assign_features(GaussianScene& scene, const Image& reference, const Camera& cam,
                     const FeatureExtractorSpec& feat_spec) {
    const Image feats = extract_features(reference, feat_spec);
    scene.feat_dim = feats.channels;
    scene.features.assign(scene.size() * static_cast<std::size_t>(scene.feat_dim), 0.0);
    for (std::size_t i = 0; i < scene.size(); ++i) {
        const Vec3 p = cam.to_camera(scene.gaussians[i].position);
        if (p.z <= 0.0) continue;
        const int x = static_cast<int>(std::lround(cam.fx * p.x / p.z + cam.cx));
        const int y = static_cast<int>(std::lround(cam.fy * p.y / p.z + cam.cy));
        if (x < 0 || y < 0 || x >= reference.width || y >= reference.height) continue;
        double* dst = scene.feature_row(i);
        for (int c = 0; c < feats.channels; ++c) dst[c] = feats.at(y, x, c);
    }
}

// dLoss/dRGB of one view for the pixel MSE term plus (optionally) the
// feature-space MSE term.
Image loss_upstream(const Image& rendered, const Image& target, const Image* target_feats,
                    double pixel_scale, double feat_scale,
                    const FeatureExtractorSpec& feat_spec) {
    Image up(rendered.width, rendered.height, 3);
    for (std::size_t i = 0; i < up.data.size(); ++i) {
        up.data[i] = pixel_scale * 2.0 * (rendered.data[i] - target.data[i]);
    }
    if (target_feats && feat_scale != 0.0) {
        const Image rf = extract_features(rendered, feat_spec);
        Image fup(rf.width, rf.height, rf.channels);
        for (std::size_t i = 0; i < fup.data.size(); ++i) {
            fup.data[i] = feat_scale * 2.0 * (rf.data[i] - target_feats->data[i]);
        }
        const Image back = extract_features_backward(rendered, fup, feat_spec);
        for (std::size_t i = 0; i < up.data.size(); ++i) up.data[i] += back.data[i];
    }
    return up;
}

double feature_mse(const Image& rendered, const Image& target_feats,
                   const FeatureExtractorSpec& feat_spec) {
    const Image rf = extract_features(rendered, feat_spec);
    double acc = 0.0;
    for (std::size_t i = 0; i < rf.data.size(); ++i) {
        const double d = rf.data[i] - target_feats.data[i];
        acc += d * d;
    }
    return acc / static_cast<double>(rf.data.size());
}

std::vector<double> default_omega(int t_steps) {
    std::vector<double> omega(t_steps);
    for (int t = 1; t <= t_steps; ++t) {
        omega[t - 1] = static_cast<double>(t) / static_cast<double>(t_steps);
    }
    return omega;
}

} // namespace

std::uint64_t subseed(std::uint64_t seed, std::uint64_t stream) {
    Splitmix s{seed ^ (0xA0761D6478BD642Full * (stream + 1))};
    return s.next();
}

SyntheticScene generate_scene(const SyntheticSceneSpec& spec, std::uint64_t seed,
                              const RenderOptions& render_opts,
                              const FeatureExtractorSpec& feat_spec) {
    if (spec.min_gaussians < 1 || spec.max_gaussians < spec.min_gaussians) {
        throw UsageError("generate_scene: bad gaussian count range");
    }
    if (spec.camera_count < 1) throw UsageError("generate_scene: need at least one camera");

    SyntheticScene out;
    GaussianScene& scene = out.ground_truth;
    scene.scene_extent = spec.extent;

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);

    if (spec.palette == SyntheticSceneSpec::Palette::Random) {
        std::uniform_int_distribution<int> count_dist(spec.min_gaussians, spec.max_gaussians);
        const int n = count_dist(rng);
        scene.gaussians.resize(n);
        for (auto& g : scene.gaussians) {
            // Surface-like layout: a thin shell keeps splats from stacking up
            // along rays the way a volumetric cloud would.
            Vec3 dir{normal(rng), normal(rng), normal(rng)};
            dir = normalized(dir);
            const double r = (0.72 + 0.18 * uni(rng)) * spec.extent;
            g.position = dir * r;
            const double sigma = (0.035 + 0.03 * uni(rng)) * spec.extent;
            g.log_scale = {std::log(sigma * (0.7 + 0.6 * uni(rng))),
                           std::log(sigma * (0.7 + 0.6 * uni(rng))),
                           std::log(sigma * (0.7 + 0.6 * uni(rng)))};
            Quat q{normal(rng), normal(rng), normal(rng), normal(rng)};
            g.rotation = q.normalized();
            g.color = {0.05 + 0.9 * uni(rng), 0.05 + 0.9 * uni(rng), 0.05 + 0.9 * uni(rng)};
            g.opacity_logit = logit(0.82 + 0.16 * uni(rng));
        }
    } else {
        const int side = std::max(2, static_cast<int>(std::lround(
                                         std::sqrt(static_cast<double>(spec.max_gaussians)))));
        const double span = 0.85 * spec.extent;
        const double spacing = 2.0 * span / (side - 1);
        scene.gaussians.reserve(static_cast<std::size_t>(side) * side);
        for (int iy = 0; iy < side; ++iy) {
            for (int ix = 0; ix < side; ++ix) {
                Gaussian g;
                const double x = -span + ix * spacing;
                const double y = -span + iy * spacing;
                g.position = {x, y, 0.0};
                const double sigma = spacing / 1.5;
                g.log_scale = {std::log(sigma), std::log(sigma), std::log(sigma * 0.3)};
                const double e = spec.extent;
                g.color = {0.5 + 0.45 * std::sin(6.0 * x / e),
                           0.5 + 0.45 * std::sin(9.0 * y / e + 1.0),
                           0.5 + 0.45 * std::sin(4.0 * (x + y) / e + 2.0)};
                g.opacity_logit = logit(0.9);
                scene.gaussians.push_back(g);
            }
        }
    }

    if (!(spec.ring_radius > std::abs(spec.ring_height))) {
        throw UsageError("generate_scene: ring_radius must exceed |ring_height|");
    }
    out.cameras.reserve(spec.camera_count);
    // Camera centers sit exactly ring_radius from the centroid, lifted by
    // ring_height above its plane.
    const double rho =
        std::sqrt(spec.ring_radius * spec.ring_radius - spec.ring_height * spec.ring_height);
    for (int i = 0; i < spec.camera_count; ++i) {
        const double theta = 2.0 * M_PI * i / spec.camera_count + 0.37;
        const Vec3 eye{rho * std::cos(theta), rho * std::sin(theta), spec.ring_height};
        out.cameras.push_back(
            look_at_camera(eye, Vec3{0, 0, 0}, spec.image_width, spec.image_height,
                           spec.fov_degrees));
    }

    out.images.resize(out.cameras.size());
    out.depths.resize(out.cameras.size());
    for (std::size_t m = 0; m < out.cameras.size(); ++m) {
        const RenderOutput ro = render(scene, out.cameras[m], render_opts);
        out.images[m] = ro.image;
        Image depth(ro.width, ro.height, 1);
        depth.data = ro.depth;
        out.depths[m] = std::move(depth);
    }

    assign_features(scene, out.images[0], out.cameras[0], feat_spec);
    return out;
}

std::pair<double, SceneGradients> stage1_loss(const GaussianScene& scene,
                                              const std::vector<std::pair<Image, Camera>>& views,
                                              double lambda_rgb, const RenderOptions& opts) {
    if (views.empty()) throw UsageError("stage1_loss: needs at least one view");
    const double m_views = static_cast<double>(views.size());
    double loss = 0.0;
    SceneGradients grads;
    grads.resize(scene.size());
    for (const auto& [target, cam] : views) {
        const RenderOutput ro = render(scene, cam, opts);
        const double view_mse = mse(target, ro.image);
        loss += lambda_rgb * view_mse / m_views;
        if (lambda_rgb == 0.0) continue;
        const double scale =
            lambda_rgb / (static_cast<double>(target.data.size()) * m_views);
        Image up(target.width, target.height, 3);
        for (std::size_t i = 0; i < up.data.size(); ++i) {
            up.data[i] = 2.0 * scale * (ro.image.data[i] - target.data[i]);
        }
        grads.accumulate(render_backward(scene, cam, up, opts));
    }
    return {loss, std::move(grads)};
}

double stage2_loss(const std::vector<std::vector<Image>>& step_renders,
                   const std::vector<Image>& ground_truth, const std::vector<double>& omega) {
    if (omega.size() != step_renders.size()) {
        throw UsageError("stage2_loss: omega length must equal the step count");
    }
    double total = 0.0;
    for (std::size_t t = 0; t < step_renders.size(); ++t) {
        if (step_renders[t].size() != ground_truth.size()) {
            throw UsageError("stage2_loss: view count mismatch at step " + std::to_string(t));
        }
        double step_mse = 0.0;
        for (std::size_t m = 0; m < ground_truth.size(); ++m) {
            step_mse += mse(ground_truth[m], step_renders[t][m]);
        }
        total += omega[t] * step_mse / static_cast<double>(ground_truth.size());
    }
    return total;
}

TrainSample make_train_sample(const SyntheticScene& scene, const PerturbConfig& perturb,
                              std::uint64_t seed, int ref_view_stride,
                              const FeatureExtractorSpec& feat_spec) {
    (void)feat_spec;
    if (ref_view_stride < 1) throw UsageError("ref_view_stride must be >= 1");
    TrainSample sample;
    sample.init = perturb_scene(scene.ground_truth, perturb, seed);
    for (std::size_t m = 0; m < scene.cameras.size(); m += ref_view_stride) {
        sample.ref_views.emplace_back(scene.images[m], scene.cameras[m]);
    }
    return sample;
}

double unrolled_loss_and_grads(const TrainSample& sample, const HeadParams& params,
                               const TrainConfig& cfg, HeadParams* dparams,
                               UnrollContext* record, const UnrollContext* frozen) {
    const int t_steps = cfg.unroll_steps;
    if (t_steps < 1) throw UsageError("unrolled_loss_and_grads: unroll_steps must be >= 1");
    const std::vector<double> omega = cfg.omega.empty() ? default_omega(t_steps) : cfg.omega;
    if (static_cast<int>(omega.size()) != t_steps) {
        throw UsageError("omega length must equal unroll_steps");
    }

    const std::size_t n = sample.init.size();
    const std::size_t m_views = sample.ref_views.size();
    const double cell =
        cfg.cell_size > 0.0 ? cfg.cell_size : sample.init.scene_extent * 0.5;

    std::vector<Camera> ref_cams;
    for (const auto& [img, cam] : sample.ref_views) ref_cams.push_back(cam);

    // Target features are fixed; compute once.
    std::vector<Image> target_feats;
    if (cfg.lambda_feat != 0.0) {
        target_feats.resize(m_views);
        for (std::size_t m = 0; m < m_views; ++m) {
            target_feats[m] = extract_features(sample.ref_views[m].first, cfg.features);
        }
    }

    // ---- Forward pass, caching what the backward sweep needs. ----
    std::vector<GaussianScene> scenes(static_cast<std::size_t>(t_steps) + 1);
    std::vector<WindowPartition> windows(t_steps);
    std::vector<HeadForwardCache> caches(t_steps);
    std::vector<std::vector<std::uint8_t>> gates(t_steps);
    std::vector<std::vector<RenderOutput>> renders(static_cast<std::size_t>(t_steps) + 1);
    scenes[0] = sample.init;

    if (record) {
        record->observation.resize(t_steps);
        record->prior.resize(t_steps);
        record->windows.resize(t_steps);
    }
    for (int t = 0; t < t_steps; ++t) {
        renders[t].resize(m_views);
        for (std::size_t m = 0; m < m_views; ++m) {
            renders[t][m] = render(scenes[t], ref_cams[m], cfg.render);
        }
        std::vector<double> obs;
        if (frozen) {
            obs = frozen->observation[t];
            windows[t] = frozen->windows[t];
        } else {
            obs = compute_observation_cues(scenes[t], sample.ref_views, renders[t], cfg.features)
                      .first;
            windows[t] = build_windows(scenes[t], cell, t, cfg.k_win);
        }
        if (record) {
            record->observation[t] = obs;
            record->windows[t] = windows[t];
        }
        const std::vector<double> tokens =
            build_tokens(scenes[t], obs.data(), nullptr, windows[t], params.shape);
        const std::vector<double> delta = head_forward(
            tokens, n, windows[t], params, scenes[t].scene_extent, dparams ? &caches[t] : nullptr);
        scenes[t + 1] = update_scene(scenes[t], delta, &gates[t]);
    }
    renders[t_steps].resize(m_views);
    for (std::size_t m = 0; m < m_views; ++m) {
        renders[t_steps][m] = render(scenes[t_steps], ref_cams[m], cfg.render);
    }

    // ---- Loss ----
    double loss = 0.0;
    for (int t = 1; t <= t_steps; ++t) {
        const double w = omega[static_cast<std::size_t>(t) - 1];
        double step_pixel = 0.0, step_feat = 0.0;
        for (std::size_t m = 0; m < m_views; ++m) {
            step_pixel += mse(sample.ref_views[m].first, renders[t][m].image);
            if (cfg.lambda_feat != 0.0) {
                step_feat += feature_mse(renders[t][m].image, target_feats[m], cfg.features);
            }
        }
        loss += w * (step_pixel + cfg.lambda_feat * step_feat) / static_cast<double>(m_views);
    }
    if (!dparams) return loss;

    // ---- Backward sweep ----
    auto loss_grads_at = [&](int t) {
        const double w = omega[static_cast<std::size_t>(t) - 1];
        SceneGradients g;
        g.resize(n);
        for (std::size_t m = 0; m < m_views; ++m) {
            const Image& target = sample.ref_views[m].first;
            const double pixel_scale =
                w / (static_cast<double>(target.data.size()) * static_cast<double>(m_views));
            double feat_scale = 0.0;
            const Image* tf = nullptr;
            if (cfg.lambda_feat != 0.0) {
                tf = &target_feats[m];
                feat_scale = w * cfg.lambda_feat /
                             (static_cast<double>(tf->data.size()) * static_cast<double>(m_views));
            }
            const Image up = loss_upstream(renders[t][m].image, target, tf, pixel_scale,
                                           feat_scale, cfg.features);
            g.accumulate(render_backward(scenes[t], ref_cams[m], up, cfg.render));
        }
        return g;
    };

    SceneGradients lambda = loss_grads_at(t_steps);
    const std::size_t td = static_cast<std::size_t>(params.shape.token_dim());

    for (int t = t_steps - 1; t >= 0; --t) {
        // Through update_scene: identity on all fields (color gated), plus the
        // head path via the residual matrix.
        std::vector<double> d_delta(n * kResidualDim, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            const GaussianGrad& lg = lambda.per_gaussian[i];
            double* dd = d_delta.data() + i * kResidualDim;
            dd[0] = lg.position.x;
            dd[1] = lg.position.y;
            dd[2] = lg.position.z;
            dd[3] = lg.log_scale.x;
            dd[4] = lg.log_scale.y;
            dd[5] = lg.log_scale.z;
            for (int c = 0; c < 3; ++c) {
                dd[6 + c] = gates[t][i * 3 + c] ? lg.color[c] : 0.0;
            }
            dd[9] = lg.opacity_logit;
        }

        std::vector<double> dtokens(n * td, 0.0);
        head_backward(caches[t], windows[t], params, d_delta, *dparams, dtokens);

        SceneGradients prev;
        prev.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            const GaussianGrad& lg = lambda.per_gaussian[i];
            GaussianGrad& pg = prev.per_gaussian[i];
            const double* dt = dtokens.data() + i * td;
            pg.position = lg.position + Vec3{dt[0], dt[1], dt[2]} / windows[t].cell_size;
            pg.log_scale = lg.log_scale + Vec3{dt[3], dt[4], dt[5]};
            for (int c = 0; c < 3; ++c) {
                pg.color[c] = (gates[t][i * 3 + c] ? lg.color[c] : 0.0) + dt[6 + c];
            }
            pg.opacity_logit = lg.opacity_logit + dt[9];
            for (int k = 0; k < 4; ++k) pg.rotation[k] = lg.rotation[k];
        }
        if (t >= 1) prev.accumulate(loss_grads_at(t));
        lambda = std::move(prev);
    }
    return loss;
}

std::string TrainLog::to_json() const {
    nlohmann::json j;
    nlohmann::json iters = nlohmann::json::array();
    for (const auto& it : iterations) iters.push_back({{"iter", it.iter}, {"loss", it.loss}});
    j["iterations"] = iters;
    nlohmann::json probes_j = nlohmann::json::array();
    for (const auto& p : probes) {
        probes_j.push_back({{"iter", p.iter}, {"step_psnr", p.step_psnr}});
    }
    j["probes"] = probes_j;
    j["aborted_non_finite"] = aborted_non_finite;
    return j.dump(2) + "\n";
}

std::pair<HeadParams, TrainLog> train_head(const TrainConfig& cfg) {
    if (cfg.iterations < 0 || cfg.batch < 1 || cfg.num_scenes < 1) {
        throw UsageError("train_head: bad iteration/batch/scene counts");
    }
    if (!(cfg.lr >= 0.0)) throw UsageError("train_head: learning rate must be >= 0");
    if (!cfg.omega.empty()) {
        for (double w : cfg.omega) {
            if (!(w > 0.0)) throw UsageError("train_head: omega entries must be positive");
        }
    }

    HeadShape shape;
    shape.cue_dim = cfg.features.channel_count();
    shape.feat_dim = cfg.features.channel_count();
    HeadParams params = init_head_params(shape, subseed(cfg.seed, 1));
    params.tau = cfg.tau;
    const auto layout = params.layout();

    // Pregenerate the dataset; per-scene seeds are decorrelated streams.
    std::vector<TrainSample> samples(cfg.num_scenes);
    parallel_ranges(static_cast<std::size_t>(cfg.num_scenes), 1,
                    [&](std::size_t, std::size_t b, std::size_t e) {
                        for (std::size_t i = b; i < e; ++i) {
                            const SyntheticScene scene = generate_scene(
                                cfg.dataset, subseed(cfg.seed, 1000 + i), cfg.render,
                                cfg.features);
                            samples[i] = make_train_sample(scene, cfg.perturb,
                                                           subseed(cfg.seed, 2000 + i),
                                                           cfg.ref_view_stride, cfg.features);
                        }
                    });

    TrainLog log;
    std::vector<double> m(params.data.size(), 0.0);
    std::vector<double> v(params.data.size(), 0.0);
    HeadParams last_good = params;

    auto run_probe = [&](int iter) {
        TrainLog::Probe probe;
        probe.iter = iter;
        probe.step_psnr.assign(static_cast<std::size_t>(cfg.unroll_steps) + 1, 0.0);
        for (int s = 0; s < cfg.eval_scenes; ++s) {
            const SyntheticScene scene = generate_scene(
                cfg.dataset, subseed(cfg.seed, 5000 + static_cast<std::uint64_t>(s)), cfg.render,
                cfg.features);
            const TrainSample sample =
                make_train_sample(scene, cfg.perturb, subseed(cfg.seed, 6000 + s),
                                  cfg.ref_view_stride, cfg.features);
            RefineConfig rc;
            rc.steps = cfg.unroll_steps;
            rc.mode = RefineMode::IfSplat;
            rc.features = cfg.features;
            rc.cell_size = cfg.cell_size;
            rc.k_win = cfg.k_win;
            rc.render = cfg.render;
            const auto [refined, trace] = refine(sample.init, sample.ref_views, params, rc);
            for (std::size_t t = 0; t < trace.steps.size(); ++t) {
                double mean = 0.0;
                for (double p : trace.steps[t].view_psnr) mean += p;
                probe.step_psnr[t] +=
                    mean / (trace.steps[t].view_psnr.size() * cfg.eval_scenes);
            }
        }
        log.probes.push_back(std::move(probe));
    };

    for (int iter = 0; iter < cfg.iterations; ++iter) {
        std::vector<double> losses(cfg.batch, 0.0);
        std::vector<HeadParams> grads(cfg.batch);
        parallel_chunks(static_cast<std::size_t>(cfg.batch), [&](std::size_t j) {
            grads[j] = zeros_like(params);
            const std::size_t idx =
                (static_cast<std::size_t>(iter) * cfg.batch + j) % samples.size();
            losses[j] = unrolled_loss_and_grads(samples[idx], params, cfg, &grads[j]);
        });

        double loss = 0.0;
        for (double l : losses) loss += l;
        loss /= cfg.batch;
        if (!std::isfinite(loss)) {
            log.aborted_non_finite = true;
            params = last_good;
            break;
        }
        last_good = params;

        // Adam step on the flat parameter vector.
        const double bias1 = 1.0 - std::pow(cfg.beta1, iter + 1);
        const double bias2 = 1.0 - std::pow(cfg.beta2, iter + 1);
        for (std::size_t p = 0; p < params.data.size(); ++p) {
            double g = 0.0;
            for (int j = 0; j < cfg.batch; ++j) g += grads[j].data[p];
            g /= cfg.batch;
            m[p] = cfg.beta1 * m[p] + (1.0 - cfg.beta1) * g;
            v[p] = cfg.beta2 * v[p] + (1.0 - cfg.beta2) * g * g;
            params.data[p] -=
                cfg.lr * (m[p] / bias1) / (std::sqrt(v[p] / bias2) + cfg.eps_opt);
        }
        for (int k = 0; k < kResidualDim; ++k) {
            params.data[layout.sigma_step + k] =
                std::max(params.data[layout.sigma_step + k], cfg.sigma_step_min);
        }

        if (cfg.log_every > 0 && (iter % cfg.log_every == 0 || iter + 1 == cfg.iterations)) {
            log.iterations.push_back({iter, loss});
        }
        if (cfg.eval_every > 0 && (iter + 1) % cfg.eval_every == 0) {
            run_probe(iter + 1);
        }
    }
    return {std::move(params), std::move(log)};
}

BaselineResult gradient_descent_baseline(const GaussianScene& scene0,
                                         const std::vector<std::pair<Image, Camera>>& views,
                                         int steps, double lr, const BaselineOptions& opts) {
    if (steps < 1) throw UsageError("gradient_descent_baseline: steps must be >= 1");
    BaselineResult result;
    result.scene = scene0;

    const double pixel_count =
        views.empty() ? 1.0
                      : static_cast<double>(views[0].first.data.size());
    const double ls_min = std::log(1e-6);
    const double ls_max = std::log(scene0.scene_extent);

    auto apply_step = [&](const GaussianScene& scene, const SceneGradients& grads,
                          double step_size) {
        GaussianScene next = scene;
        // Mean-based gradients are rescaled by the per-view pixel count so lr
        // is resolution-independent.
        const double base = step_size * pixel_count;
        for (std::size_t i = 0; i < next.size(); ++i) {
            Gaussian& g = next.gaussians[i];
            const GaussianGrad& gr = grads.per_gaussian[i];
            g.position -= gr.position * (base * opts.position_scale * scene.scene_extent);
            for (int a = 0; a < 3; ++a) {
                g.log_scale[a] = std::clamp(
                    g.log_scale[a] - base * opts.log_scale_scale * gr.log_scale[a], ls_min,
                    ls_max);
            }
            g.rotation.w -= base * opts.rotation_scale * gr.rotation[0];
            g.rotation.x -= base * opts.rotation_scale * gr.rotation[1];
            g.rotation.y -= base * opts.rotation_scale * gr.rotation[2];
            g.rotation.z -= base * opts.rotation_scale * gr.rotation[3];
            g.rotation = g.rotation.normalized();
            for (int a = 0; a < 3; ++a) {
                g.color[a] = clamp01(g.color[a] - base * opts.color_scale * gr.color[a]);
            }
            g.opacity_logit -= base * opts.opacity_scale * gr.opacity_logit;
        }
        return next;
    };

    auto [loss, grads] = stage1_loss(result.scene, views, 1.0, opts.render);
    result.loss_curve.push_back(loss);
    const double initial_loss = loss;

    for (int s = 0; s < steps; ++s) {
        if (loss > 10.0 * initial_loss) {
            result.diverged = true;
            break;
        }
        if (lr == 0.0) {
            result.loss_curve.push_back(loss);
            continue;
        }
        if (opts.line_search) {
            double step_size = lr;
            bool accepted = false;
            for (int half = 0; half < 30; ++half) {
                GaussianScene candidate = apply_step(result.scene, grads, step_size);
                auto [cand_loss, cand_grads] = stage1_loss(candidate, views, 1.0, opts.render);
                if (cand_loss <= loss) {
                    result.scene = std::move(candidate);
                    loss = cand_loss;
                    grads = std::move(cand_grads);
                    accepted = true;
                    break;
                }
                step_size *= 0.5;
            }
            result.loss_curve.push_back(loss);
            if (!accepted) break; // no descent direction at any tried step
        } else {
            result.scene = apply_step(result.scene, grads, lr);
            auto [new_loss, new_grads] = stage1_loss(result.scene, views, 1.0, opts.render);
            loss = new_loss;
            grads = std::move(new_grads);
            result.loss_curve.push_back(loss);
        }
    }
    return result;
}

} // namespace gsr
