#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gsr/cues.hpp"
#include "gsr/enhancer.hpp"
#include "gsr/features.hpp"
#include "gsr/head.hpp"
#include "gsr/rasterizer.hpp"
#include "gsr/types.hpp"

namespace gsr {

enum class RefineMode { IfSplat, GifSplat };

RefineMode parse_refine_mode(const std::string& text);
std::string to_string(RefineMode mode);

// Novel-view sampling: interpolate between two reference cameras.
struct NovelViewSpec {
    int cam_a = 0;
    int cam_b = 1;
    double t = 0.5;
};

struct RefineConfig {
    int steps = 3; // T >= 0
    RefineMode mode = RefineMode::IfSplat;
    EnhancerSpec enhancer;
    FeatureExtractorSpec features;
    double cell_size = 0.0; // 0 -> scene_extent / 2
    int k_win = kDefaultWindowCap;
    RenderOptions render;
    // Per-step novel views used for prior cues (gifsplat). Empty -> slerp
    // t in {1/3, 2/3} between the first camera pair.
    std::vector<NovelViewSpec> novel_views;
    bool prior_on_refs = false; // also enhance reference renders for the prior
    bool record_trajectory = false;

    double effective_cell_size(double scene_extent) const {
        return cell_size > 0.0 ? cell_size : scene_extent * 0.5;
    }
};

struct RefineTrace {
    struct Step {
        std::vector<double> view_mse;  // per reference view
        std::vector<double> view_psnr; // per reference view
        double wall_seconds = 0.0;
        double mean_obs_norm = 0.0;   // mean |o_i| over gaussians
        double mean_prior_norm = 0.0; // mean |p_i| over gaussians
    };
    std::vector<Step> steps;              // T + 1 entries (entry 0 = initial state)
    std::vector<GaussianScene> snapshots; // T + 1 scenes when recorded

    std::string to_json(bool include_timing = true) const;
};

// The forward-only refinement loop: render -> cues -> residual head ->
// bounded update, repeated `steps` times. No gradient structures are
// allocated anywhere on this path.
std::pair<GaussianScene, RefineTrace>
refine(const GaussianScene& scene0, const std::vector<std::pair<Image, Camera>>& views,
       const HeadParams& params, const RefineConfig& cfg);

// Depth-map unprojection initializer: one gaussian per stride-th pixel, sized
// so its projected footprint spans about `stride` pixels in the source view.
GaussianScene initialize_from_depth(const std::vector<std::tuple<Image, Camera, Image>>& views,
                                    const FeatureExtractorSpec& feat_spec, int stride = 2);

struct PerturbConfig {
    double position_sigma_rel = 0.0; // relative to scene_extent, per axis
    double log_scale_sigma = 0.0;
    double color_sigma = 0.0;
    double opacity_sigma = 0.0;
};

// Seeded gaussian noise on position/log_scale/color/opacity_logit. Colors are
// clamped to [0,1] and log scales to the legal range after perturbation.
GaussianScene perturb_scene(const GaussianScene& scene, const PerturbConfig& cfg,
                            std::uint64_t seed);

// Shared helper: the camera set actually used for prior cues at one step.
std::vector<Camera> novel_cameras(const std::vector<Camera>& refs,
                                  const std::vector<NovelViewSpec>& specs);

} // namespace gsr
