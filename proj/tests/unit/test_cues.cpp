#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "../test_support.hpp"
#include "gsr/cues.hpp"

using namespace gsr;
using namespace gsr::testsupport;

namespace {

std::vector<std::pair<Image, Camera>> self_views(const GaussianScene& scene,
                                                 const std::vector<Camera>& cams) {
    std::vector<std::pair<Image, Camera>> views;
    for (const auto& cam : cams) views.emplace_back(render(scene, cam).image, cam);
    return views;
}

std::vector<RenderOutput> render_all(const GaussianScene& scene,
                                     const std::vector<Camera>& cams) {
    std::vector<RenderOutput> outs;
    for (const auto& cam : cams) outs.push_back(render(scene, cam));
    return outs;
}

} // namespace

TEST_CASE("matching reference views give exactly zero observation cues") {
    const GaussianScene scene = random_visible_scene(30, 1);
    const std::vector<Camera> cams = {axis_camera(32, 32, 35)};
    const auto views = self_views(scene, cams);
    const auto renders = render_all(scene, cams);
    auto [obs, coverage] = compute_observation_cues(scene, views, renders, {});
    for (double v : obs) CHECK(v == 0.0);
}

TEST_CASE("constant feature difference pools to v * S / (S + eps)") {
    const GaussianScene scene = random_visible_scene(20, 2);
    const std::vector<Camera> cams = {axis_camera(32, 32, 35)};
    const auto renders = render_all(scene, cams);

    // Shift the red channel of the reference by a constant. The raw feature
    // channel then differs by exactly v everywhere; gradient channels cancel.
    const double v = 0.125;
    auto views = self_views(scene, cams);
    for (std::size_t i = 0; i < views.front().first.data.size(); i += 3) {
        views.front().first.data[i] += v;
    }

    auto [obs, coverage] = compute_observation_cues(scene, views, renders, {});
    const int d = 12;
    for (std::size_t i = 0; i < scene.size(); ++i) {
        const double s = coverage[i];
        const double want = v * s / (s + kPoolingEpsilon);
        CHECK(obs[i * d + 0] == doctest::Approx(want).epsilon(1e-9));
        // Sobel magnitude channels are unchanged by a constant shift.
        CHECK(obs[i * d + 3] == doctest::Approx(0.0).epsilon(1e-9));
        if (s >= 1e-3) {
            CHECK(std::abs(obs[i * d + 0] - v) <= 1e-5);
        }
    }
}

TEST_CASE("hand-computed two-splat, two-pixel pooling") {
    // Same weights as the spec'd pooling example; the cue division adds the
    // epsilon stabilizer.
    RenderOutput out;
    out.width = 2;
    out.height = 1;
    out.k_top = 2;
    out.image = Image(2, 1, 3);
    out.final_transmittance = {0.2, 0.4};
    out.weight_sum = {0.8, 0.6};
    out.depth = {1, 1};
    out.contributions = {{0, 0.6f}, {1, 0.2f}, {1, 0.5f}, {0, 0.1f}};

    Image diff(2, 1, 1);
    diff.at(0, 0, 0) = 1.0;
    diff.at(0, 1, 0) = 2.0;
    auto [sums, wsums] = pool_over_pixels(out, diff, 2);
    const double o1 = sums[0] / (wsums[0] + kPoolingEpsilon);
    const double o2 = sums[1] / (wsums[1] + kPoolingEpsilon);
    CHECK(std::abs(o1 - 0.8 / 0.7) <= 1e-6);
    CHECK(std::abs(o2 - 1.2 / 0.7) <= 1e-6);
}

TEST_CASE("cues are invariant to view order") {
    const GaussianScene scene = random_visible_scene(25, 3);
    Camera a = axis_camera(32, 32, 35);
    Camera b = axis_camera(32, 32, 35);
    b.translation = {0.2, -0.1, 0.1};

    auto views = self_views(scene, {a, b});
    // Make the references differ from the renders so cues are nonzero.
    for (auto& [img, cam] : views) {
        for (std::size_t i = 0; i < img.data.size(); i += 7) img.data[i] = clamp01(img.data[i] + 0.3);
    }
    auto renders = render_all(scene, {a, b});

    auto [obs1, cov1] = compute_observation_cues(scene, views, renders, {});
    std::swap(views[0], views[1]);
    std::swap(renders[0], renders[1]);
    auto [obs2, cov2] = compute_observation_cues(scene, views, renders, {});
    for (std::size_t i = 0; i < obs1.size(); ++i) {
        CHECK(std::abs(obs1[i] - obs2[i]) <= 1e-6);
    }
}

TEST_CASE("a splat invisible from every view gets exactly zero cues") {
    GaussianScene scene = random_visible_scene(5, 4);
    Gaussian hidden;
    hidden.position = {0, 0, -5}; // behind the camera
    hidden.color = {1, 0, 0};
    scene.gaussians.push_back(hidden);

    const std::vector<Camera> cams = {axis_camera(32, 32, 35)};
    auto views = self_views(scene, cams);
    for (auto& v : views.front().first.data) v = clamp01(v + 0.2);
    const auto renders = render_all(scene, cams);
    auto [obs, coverage] = compute_observation_cues(scene, views, renders, {});
    CHECK(coverage.back() == 0.0);
    for (int d = 0; d < 12; ++d) CHECK(obs[5 * 12 + d] == 0.0);
}

TEST_CASE("view count mismatch is rejected") {
    const GaussianScene scene = random_visible_scene(4, 5);
    const std::vector<Camera> cams = {axis_camera(32, 32, 35)};
    auto views = self_views(scene, cams);
    CHECK_THROWS_AS(compute_observation_cues(scene, views, {}, {}), UsageError);
}

TEST_CASE("identity enhancer gives exactly zero prior cues") {
    const GaussianScene scene = random_visible_scene(15, 6);
    const std::vector<Camera> cams = {axis_camera(32, 32, 35)};
    const auto renders = render_all(scene, cams);
    std::vector<Image> enhanced = {renders[0].image};
    auto [prior, cov] = compute_prior_cues(scene, renders, enhanced, {});
    for (double v : prior) CHECK(v == 0.0);
}

TEST_CASE("constant-shift enhancer propagates through raw channels only") {
    const GaussianScene scene = random_visible_scene(15, 7);
    const std::vector<Camera> cams = {axis_camera(32, 32, 35)};
    const auto renders = render_all(scene, cams);
    Image enhanced = renders[0].image;
    for (std::size_t i = 1; i < enhanced.data.size(); i += 3) enhanced.data[i] += 0.1;

    auto [prior, cov] = compute_prior_cues(scene, renders, {enhanced}, {});
    for (std::size_t i = 0; i < scene.size(); ++i) {
        const double s = cov[i];
        CHECK(prior[i * 12 + 1] == doctest::Approx(0.1 * s / (s + kPoolingEpsilon)).epsilon(1e-9));
        CHECK(prior[i * 12 + 0] == doctest::Approx(0.0).epsilon(1e-12));
        CHECK(prior[i * 12 + 4] == doctest::Approx(0.0).epsilon(1e-9)); // gradient channel
    }
}

TEST_CASE("single-splat prior cue equals the brute-force pooled mean") {
    GaussianScene scene;
    Gaussian g;
    g.position = {0, 0, 2};
    g.log_scale = {std::log(0.8), std::log(0.8), std::log(0.8)};
    g.color = {0.5, 0.5, 0.5};
    g.opacity_logit = 2.0;
    scene.gaussians.push_back(g);

    const Camera cam = axis_camera(32, 32, 35);
    const auto renders = render_all(scene, {cam});
    Image enhanced = renders[0].image;
    for (std::size_t i = 0; i < enhanced.data.size(); ++i) {
        enhanced.data[i] = clamp01(enhanced.data[i] + 0.03 * ((i * 13) % 7));
    }

    auto [prior, cov] = compute_prior_cues(scene, renders, {enhanced}, {});

    // Brute force: loop over pixels using the stored contribution lists.
    const Image diff = feature_difference(extract_features(enhanced, {}),
                                          extract_features(renders[0].image, {}));
    std::vector<double> num(12, 0.0);
    double den = 0.0;
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) {
            const PixelContribution* pc = renders[0].pixel_contributions(y, x);
            for (int j = 0; j < renders[0].k_top; ++j) {
                if (pc[j].index != 0) continue;
                den += pc[j].weight;
                for (int d = 0; d < 12; ++d) num[d] += pc[j].weight * diff.at(y, x, d);
            }
        }
    for (int d = 0; d < 12; ++d) {
        CHECK(prior[d] == doctest::Approx(num[d] / (den + kPoolingEpsilon)).epsilon(1e-9));
    }
}
