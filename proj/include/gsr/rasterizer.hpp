#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "gsr/types.hpp"

namespace gsr {

struct RenderOptions {
    Vec3 background{0.0, 0.0, 0.0};
    double near_plane = 0.01; // world units; gaussians closer than this are culled
    int k_top = 16;           // contributions kept per pixel
    bool use_double = false;  // compositing precision (float32 is the default)
};

// One retained splat weight at a pixel. Lists are truncated to the k_top
// largest weights; padding entries carry index = kInvalidIndex and weight 0.
struct PixelContribution {
    std::uint32_t index = 0xffffffffu;
    float weight = 0.0f;
};

constexpr std::uint32_t kInvalidIndex = 0xffffffffu;

struct RenderOutput {
    Image image;                              // H x W x 3
    std::vector<double> final_transmittance;  // H x W
    std::vector<double> weight_sum;           // H x W, pre-truncation sum of weights
    std::vector<double> depth;                // H x W weight-averaged view depth
    std::vector<PixelContribution> contributions; // H x W x k_top, row-major pixels
    int width = 0, height = 0, k_top = 0;

    const PixelContribution* pixel_contributions(int y, int x) const {
        return contributions.data() +
               (static_cast<std::size_t>(y) * width + x) * k_top;
    }
};

struct GaussianGrad {
    Vec3 position;
    Vec3 log_scale;
    double rotation[4] = {0, 0, 0, 0}; // (w, x, y, z)
    Vec3 color;
    double opacity_logit = 0.0;

    GaussianGrad& operator+=(const GaussianGrad& o) {
        position += o.position;
        log_scale += o.log_scale;
        for (int i = 0; i < 4; ++i) rotation[i] += o.rotation[i];
        color += o.color;
        opacity_logit += o.opacity_logit;
        return *this;
    }
};

struct SceneGradients {
    std::vector<GaussianGrad> per_gaussian;

    std::size_t size() const { return per_gaussian.size(); }
    void resize(std::size_t n) { per_gaussian.assign(n, GaussianGrad{}); }
    void accumulate(const SceneGradients& o, double scale = 1.0);
    bool all_finite() const;
};

// Front-to-back alpha compositing of depth-sorted EWA-projected gaussians.
RenderOutput render(const GaussianScene& scene, const Camera& camera,
                    const RenderOptions& opts = {});

// Exact reverse-mode gradients of the forward compositing with respect to all
// gaussian parameters, given dLoss/dRGB per pixel. Accumulation order is
// fixed (tile index, then pixel, then splat) regardless of thread count.
SceneGradients render_backward(const GaussianScene& scene, const Camera& camera,
                               const Image& upstream, const RenderOptions& opts = {});

// Scatter of a per-pixel buffer onto gaussians using the retained
// contribution lists. Returns (weighted sums N x D, weight sums N).
std::pair<std::vector<double>, std::vector<double>>
pool_over_pixels(const RenderOutput& output, const Image& per_pixel, std::size_t n_gaussians);

} // namespace gsr
