#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gsr/head.hpp"
#include "gsr/rasterizer.hpp"
#include "gsr/refine.hpp"
#include "gsr/types.hpp"

namespace gsr {

struct SyntheticSceneSpec {
    int min_gaussians = 400;
    int max_gaussians = 600;
    double extent = 1.0;
    enum class Palette { Random, TexturedPlane };
    Palette palette = Palette::Random;
    int camera_count = 5;
    double ring_radius = 2.6;  // world units
    double ring_height = 0.9;  // world units above the centroid plane
    int image_width = 64;
    int image_height = 64;
    double fov_degrees = 55.0;
};

struct SyntheticScene {
    GaussianScene ground_truth;
    std::vector<Camera> cameras;
    std::vector<Image> images; // self-rendered ground truth, one per camera
    std::vector<Image> depths; // 1-channel expected-depth buffers
};

// Seeded synthetic data. Ground-truth images/depths come from this repo's own
// rasterizer, so the targets are realizable by construction. Per-gaussian
// features are sampled from psi(image_0) at each gaussian's projection.
SyntheticScene generate_scene(const SyntheticSceneSpec& spec, std::uint64_t seed,
                              const RenderOptions& render_opts = {},
                              const FeatureExtractorSpec& feat_spec = {});

// Pixel reconstruction loss: lambda_rgb * mean squared error over pixels and
// views, with gradients through the rasterizer.
std::pair<double, SceneGradients> stage1_loss(const GaussianScene& scene,
                                              const std::vector<std::pair<Image, Camera>>& views,
                                              double lambda_rgb = 1.0,
                                              const RenderOptions& opts = {});

// Multi-step render loss: sum_t omega[t] * MSE_t. step_renders[t] holds the
// renders of every view after step t+1.
double stage2_loss(const std::vector<std::vector<Image>>& step_renders,
                   const std::vector<Image>& ground_truth, const std::vector<double>& omega);

struct TrainConfig {
    int unroll_steps = 3;          // T
    std::vector<double> omega;     // per-step loss weights; empty -> t/T
    double lambda_feat = 0.1;      // feature-space MSE weight (0 disables)
    double lr = 3e-4;
    double beta1 = 0.9, beta2 = 0.999, eps_opt = 1e-8;
    int batch = 4;
    int iterations = 2000;
    std::uint64_t seed = 1;

    int num_scenes = 200;
    SyntheticSceneSpec dataset;
    PerturbConfig perturb{0.01, 0.15, 0.12, 0.6};
    int ref_view_stride = 2;   // every stride-th camera is a reference view

    double cell_size = 0.0; // 0 -> extent / 2
    int k_win = kDefaultWindowCap;
    RenderOptions render;
    FeatureExtractorSpec features;
    TauVector tau = default_tau();
    double sigma_step_min = 1e-4;

    int log_every = 25;
    int eval_every = 0; // 0 disables periodic per-step PSNR probes
    int eval_scenes = 2;
};

struct TrainLog {
    struct Iteration {
        int iter = 0;
        double loss = 0.0;
    };
    struct Probe {
        int iter = 0;
        std::vector<double> step_psnr; // mean over probe scenes, steps 0..T
    };
    std::vector<Iteration> iterations;
    std::vector<Probe> probes;
    bool aborted_non_finite = false;

    std::string to_json() const;
};

// A single training example: a degraded initialization plus the reference
// views driving the cues and the loss.
struct TrainSample {
    GaussianScene init;
    std::vector<std::pair<Image, Camera>> ref_views;
};

TrainSample make_train_sample(const SyntheticScene& scene, const PerturbConfig& perturb,
                              std::uint64_t seed, int ref_view_stride,
                              const FeatureExtractorSpec& feat_spec);

// Stop-gradient quantities of one unrolled run: per-step cue vectors and
// window partitions. The backward pass treats these as constants, so the
// finite-difference oracle re-runs the forward pass with them frozen.
struct UnrollContext {
    std::vector<std::vector<double>> observation; // per step, N x D
    std::vector<std::vector<double>> prior;       // per step, empty when unused
    std::vector<WindowPartition> windows;         // per step
};

// Loss and parameter gradients for one sample through the unrolled loop.
// Gradients flow through the state path (update -> head -> tokens) and
// through the per-step render losses; cue vectors and the window partition
// are treated as constants. `record`/`frozen` expose those constants for the
// gradient-check harness.
double unrolled_loss_and_grads(const TrainSample& sample, const HeadParams& params,
                               const TrainConfig& cfg, HeadParams* dparams,
                               UnrollContext* record = nullptr,
                               const UnrollContext* frozen = nullptr);

std::pair<HeadParams, TrainLog> train_head(const TrainConfig& cfg);

struct BaselineResult {
    GaussianScene scene;
    std::vector<double> loss_curve; // length steps + 1, entry 0 = initial
    bool diverged = false;
};

struct BaselineOptions {
    bool line_search = false;
    // Per-parameter step scales, multiplied by lr; position additionally
    // scales with scene_extent.
    double position_scale = 1.0;
    double log_scale_scale = 1.0;
    double rotation_scale = 1.0;
    double color_scale = 1.0;
    double opacity_scale = 1.0;
    RenderOptions render;
};

// Plain per-scene gradient descent on all gaussian parameters against the
// pixel reconstruction loss. No densification, no momentum.
BaselineResult gradient_descent_baseline(const GaussianScene& scene0,
                                         const std::vector<std::pair<Image, Camera>>& views,
                                         int steps, double lr,
                                         const BaselineOptions& opts = {});

// Derives decorrelated per-purpose seeds from one user seed.
std::uint64_t subseed(std::uint64_t seed, std::uint64_t stream);

} // namespace gsr
