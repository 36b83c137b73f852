#pragma once

#include <utility>
#include <vector>

#include "gsr/enhancer.hpp"
#include "gsr/features.hpp"
#include "gsr/rasterizer.hpp"
#include "gsr/types.hpp"

namespace gsr {

// Per-gaussian pooled discrepancy vectors. Rows with zero pooled weight are
// exactly zero. These are forward cues only; no gradient ever flows through
// them.
struct CueVectors {
    std::vector<double> observation; // N x D
    std::vector<double> prior;       // N x D
    std::vector<double> coverage;    // N pooled weight sums (observation pass)
    int dim = 0;

    const double* observation_row(std::size_t i) const {
        return observation.data() + i * static_cast<std::size_t>(dim);
    }
    const double* prior_row(std::size_t i) const {
        return prior.data() + i * static_cast<std::size_t>(dim);
    }
};

constexpr double kPoolingEpsilon = 1e-8;

// Pools psi(I_m) - psi(R_m) over every reference view: one global
// numerator/denominator per gaussian across all views, then a single division
// by (weight + epsilon).
std::pair<std::vector<double>, std::vector<double>>
compute_observation_cues(const GaussianScene& scene,
                         const std::vector<std::pair<Image, Camera>>& ref_views,
                         const std::vector<RenderOutput>& renders,
                         const FeatureExtractorSpec& feat_spec);

// Same pooling applied to psi(enhance(R_m)) - psi(R_m) over the prior views.
std::pair<std::vector<double>, std::vector<double>>
compute_prior_cues(const GaussianScene& scene, const std::vector<RenderOutput>& renders,
                   const std::vector<Image>& enhanced, const FeatureExtractorSpec& feat_spec);

} // namespace gsr
