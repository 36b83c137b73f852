#pragma once

#include <string>
#include <vector>

#include "gsr/features.hpp"
#include "gsr/rasterizer.hpp"
#include "gsr/types.hpp"

namespace gsr {

struct MetricReport {
    struct Entry {
        std::string view;
        double psnr = 0.0;
        double ssim = 0.0;
        double featdist = 0.0; // feature-space RMS distance (perceptual stand-in)
    };
    std::vector<Entry> per_view;
    double mean_psnr = 0.0;
    double mean_ssim = 0.0;
    double mean_featdist = 0.0;

    std::string to_json() const;
    std::string to_table() const;
};

constexpr double kPsnrCap = 100.0;

double mse(const Image& a, const Image& b);

// 10*log10(1/MSE) on unit dynamic range, capped at 100 dB.
double psnr(const Image& a, const Image& b);

// Single-scale luminance SSIM: 11x11 Gaussian window (sigma 1.5),
// C1 = 0.01^2, C2 = 0.03^2, mean over windows fully inside the image.
double ssim(const Image& a, const Image& b);

double feature_distance(const Image& a, const Image& b, const FeatureExtractorSpec& spec);

MetricReport evaluate(const GaussianScene& scene,
                      const std::vector<std::pair<Image, Camera>>& eval_views,
                      const RenderOptions& opts = {},
                      const FeatureExtractorSpec& feat_spec = {});

} // namespace gsr
