#include "gsr/cues.hpp"

#include <string>

#include "gsr/threading.hpp"

namespace gsr {
namespace {

// Accumulates pooled numerators/denominators for one view into (sums, wsums).
void pool_view(const RenderOutput& render_out, const Image& diff, std::size_t n,
               std::vector<double>& sums, std::vector<double>& wsums) {
    auto [s, w] = pool_over_pixels(render_out, diff, n);
    for (std::size_t i = 0; i < s.size(); ++i) sums[i] += s[i];
    for (std::size_t i = 0; i < w.size(); ++i) wsums[i] += w[i];
}

std::pair<std::vector<double>, std::vector<double>>
finalize(std::vector<double> sums, std::vector<double> wsums, int dim) {
    for (std::size_t i = 0; i < wsums.size(); ++i) {
        const double denom = wsums[i] + kPoolingEpsilon;
        double* row = sums.data() + i * static_cast<std::size_t>(dim);
        for (int d = 0; d < dim; ++d) row[d] /= denom;
    }
    return {std::move(sums), std::move(wsums)};
}

} // namespace

std::pair<std::vector<double>, std::vector<double>>
compute_observation_cues(const GaussianScene& scene,
                         const std::vector<std::pair<Image, Camera>>& ref_views,
                         const std::vector<RenderOutput>& renders,
                         const FeatureExtractorSpec& feat_spec) {
    if (ref_views.size() != renders.size()) {
        throw UsageError("compute_observation_cues: view/render count mismatch (" +
                         std::to_string(ref_views.size()) + " vs " +
                         std::to_string(renders.size()) + ")");
    }
    const std::size_t n = scene.size();
    const int dim = feat_spec.channel_count();
    std::vector<double> sums(n * static_cast<std::size_t>(dim), 0.0);
    std::vector<double> wsums(n, 0.0);

    // Per-view feature differences may be computed concurrently; pooled sums
    // are merged in view order.
    std::vector<Image> diffs(ref_views.size());
    parallel_chunks(ref_views.size(), [&](std::size_t m) {
        diffs[m] = feature_difference(extract_features(ref_views[m].first, feat_spec),
                                      extract_features(renders[m].image, feat_spec));
    });
    for (std::size_t m = 0; m < ref_views.size(); ++m) {
        pool_view(renders[m], diffs[m], n, sums, wsums);
    }
    return finalize(std::move(sums), std::move(wsums), dim);
}

std::pair<std::vector<double>, std::vector<double>>
compute_prior_cues(const GaussianScene& scene, const std::vector<RenderOutput>& renders,
                   const std::vector<Image>& enhanced, const FeatureExtractorSpec& feat_spec) {
    if (renders.size() != enhanced.size()) {
        throw UsageError("compute_prior_cues: render/enhanced count mismatch");
    }
    for (std::size_t m = 0; m < renders.size(); ++m) {
        if (!renders[m].image.same_shape(enhanced[m])) {
            throw NumericError("compute_prior_cues: enhanced image shape mismatch at view " +
                               std::to_string(m));
        }
    }
    const std::size_t n = scene.size();
    const int dim = feat_spec.channel_count();
    std::vector<double> sums(n * static_cast<std::size_t>(dim), 0.0);
    std::vector<double> wsums(n, 0.0);

    std::vector<Image> diffs(renders.size());
    parallel_chunks(renders.size(), [&](std::size_t m) {
        diffs[m] = feature_difference(extract_features(enhanced[m], feat_spec),
                                      extract_features(renders[m].image, feat_spec));
    });
    for (std::size_t m = 0; m < renders.size(); ++m) {
        pool_view(renders[m], diffs[m], n, sums, wsums);
    }
    return finalize(std::move(sums), std::move(wsums), dim);
}

} // namespace gsr
