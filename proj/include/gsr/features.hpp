#pragma once

#include <string>
#include <vector>

#include "gsr/types.hpp"

namespace gsr {

// Frozen image feature extractor. The handcrafted bank has 12 channels:
//   0-2  raw RGB
//   3-5  Sobel gradient magnitude per channel (1/8-normalized kernels)
//   6-8  RGB after one 5x5 binomial blur
//   9-11 RGB after two 5x5 binomial blurs
// Loaded mode applies a small two-layer convolution read from a tensor file.
struct FeatureExtractorSpec {
    enum class Mode { Handcrafted, Loaded };
    Mode mode = Mode::Handcrafted;
    std::string weights_path; // loaded mode only

    int channel_count() const;

    static FeatureExtractorSpec handcrafted() { return {}; }
    static FeatureExtractorSpec loaded(const std::string& path);
};

constexpr int kHandcraftedFeatureDim = 12;

Image extract_features(const Image& image, const FeatureExtractorSpec& spec);

// Exact adjoint of extract_features: maps dLoss/dFeatures back to
// dLoss/dImage (used by the optional feature-space training loss).
Image extract_features_backward(const Image& image, const Image& upstream,
                                const FeatureExtractorSpec& spec);

// Elementwise a - b; shapes must match.
Image feature_difference(const Image& a, const Image& b);

namespace detail {
// Shared 5x5 binomial kernel (weights 1,4,6,4,1 per axis, normalized).
void binomial_blur5(const Image& src, Image& dst);
} // namespace detail

} // namespace gsr
