#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "gsr/features.hpp"
#include "gsr/io.hpp"

using namespace gsr;

namespace {

Image constant_image(int w, int h, double r, double g, double b) {
    Image img(w, h, 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            img.at(y, x, 0) = r;
            img.at(y, x, 1) = g;
            img.at(y, x, 2) = b;
        }
    return img;
}

int reflect_idx(int i, int n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - i - 1;
    return i;
}

// Independent direct convolution of the 1/8-normalized Sobel pair.
void sobel_oracle(const Image& img, int c, int y, int x, double& gx, double& gy) {
    static const double kx[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
    gx = gy = 0.0;
    for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
            const double v = img.at(reflect_idx(y + dy, img.height), reflect_idx(x + dx, img.width), c);
            gx += kx[dy + 1][dx + 1] * v;
            gy += kx[dx + 1][dy + 1] * v;
        }
    gx /= 8.0;
    gy /= 8.0;
}

} // namespace

TEST_CASE("constant gray image features") {
    const Image img = constant_image(16, 12, 0.5, 0.5, 0.5);
    const Image f = extract_features(img, FeatureExtractorSpec::handcrafted());
    REQUIRE(f.channels == 12);
    for (int y = 0; y < f.height; ++y)
        for (int x = 0; x < f.width; ++x) {
            for (int c = 0; c < 3; ++c) {
                CHECK(f.at(y, x, c) == doctest::Approx(0.5));
                CHECK(f.at(y, x, 3 + c) == doctest::Approx(0.0).epsilon(1e-9));
                CHECK(f.at(y, x, 6 + c) == doctest::Approx(0.5));
                CHECK(f.at(y, x, 9 + c) == doctest::Approx(0.5));
            }
        }
}

TEST_CASE("black image gives all-zero features") {
    const Image img = constant_image(9, 9, 0, 0, 0);
    const Image f = extract_features(img, {});
    for (double v : f.data) CHECK(v == doctest::Approx(0.0));
}

TEST_CASE("vertical step edge matches direct kernel oracle") {
    Image img(16, 10, 3);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = x >= 8 ? 1.0 : 0.0;
    const Image f = extract_features(img, {});

    int peak_col = -1;
    double peak = -1.0;
    for (int x = 0; x < img.width; ++x) {
        if (f.at(5, x, 3) > peak) {
            peak = f.at(5, x, 3);
            peak_col = x;
        }
    }
    CHECK((peak_col == 7 || peak_col == 8));
    for (int x = 0; x < img.width; ++x) {
        double gx, gy;
        sobel_oracle(img, 0, 5, x, gx, gy);
        CHECK(f.at(5, x, 3) == doctest::Approx(std::sqrt(gx * gx + gy * gy)).epsilon(1e-5));
    }
}

TEST_CASE("feature_difference identities") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Image a(8, 6, 3), b(8, 6, 3);
    for (auto& v : a.data) v = u(rng);
    for (auto& v : b.data) v = u(rng);
    const auto fa = extract_features(a, {});
    const auto fb = extract_features(b, {});

    const Image zero = feature_difference(fa, fa);
    for (double v : zero.data) CHECK(v == 0.0);

    Image zeros(8, 6, 12);
    const Image same = feature_difference(fa, zeros);
    CHECK(same.data == fa.data);

    // O + psi(b) == psi(a) elementwise.
    const Image diff = feature_difference(fa, fb);
    for (std::size_t i = 0; i < diff.data.size(); ++i) {
        CHECK(diff.data[i] + fb.data[i] == doctest::Approx(fa.data[i]).epsilon(1e-12));
    }

    Image small(4, 6, 12);
    CHECK_THROWS_AS(feature_difference(fa, small), NumericError);
}

TEST_CASE("extractor is Lipschitz with L = 4") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Image img(12, 12, 3);
    for (auto& v : img.data) v = u(rng);
    const Image f0 = extract_features(img, {});

    for (int trial = 0; trial < 10; ++trial) {
        Image img2 = img;
        const int y = static_cast<int>(rng() % 12);
        const int x = static_cast<int>(rng() % 12);
        const int c = static_cast<int>(rng() % 3);
        const double delta = 0.2;
        img2.at(y, x, c) = clamp01(img2.at(y, x, c) + delta);
        const double actual = std::abs(img2.at(y, x, c) - img.at(y, x, c));
        const Image f1 = extract_features(img2, {});
        double max_change = 0.0;
        for (std::size_t i = 0; i < f0.data.size(); ++i) {
            max_change = std::max(max_change, std::abs(f1.data[i] - f0.data[i]));
        }
        CHECK(max_change <= 4.0 * actual + 1e-12);
    }
}

TEST_CASE("extract_features is bit-stable across calls") {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Image img(10, 7, 3);
    for (auto& v : img.data) v = u(rng);
    const Image f1 = extract_features(img, {});
    const Image f2 = extract_features(img, {});
    CHECK(f1.data == f2.data);
}

TEST_CASE("backward pass is the exact adjoint (directional oracle)") {
    std::mt19937_64 rng(13);
    std::uniform_real_distribution<double> u(0.1, 0.9);
    std::normal_distribution<double> n(0.0, 1.0);
    Image img(9, 8, 3);
    for (auto& v : img.data) v = u(rng);

    const FeatureExtractorSpec spec;
    const Image f = extract_features(img, spec);
    Image upstream(f.width, f.height, f.channels);
    for (auto& v : upstream.data) v = n(rng);
    const Image grad = extract_features_backward(img, upstream, spec);

    // Directional finite difference along a random direction.
    Image dir(img.width, img.height, 3);
    for (auto& v : dir.data) v = n(rng);
    const double h = 1e-6;
    Image plus = img, minus = img;
    for (std::size_t i = 0; i < img.data.size(); ++i) {
        plus.data[i] += h * dir.data[i];
        minus.data[i] -= h * dir.data[i];
    }
    const Image fp = extract_features(plus, spec);
    const Image fm = extract_features(minus, spec);
    double fd = 0.0;
    for (std::size_t i = 0; i < fp.data.size(); ++i) {
        fd += upstream.data[i] * (fp.data[i] - fm.data[i]) / (2.0 * h);
    }
    double analytic = 0.0;
    for (std::size_t i = 0; i < grad.data.size(); ++i) analytic += grad.data[i] * dir.data[i];
    CHECK(fd == doctest::Approx(analytic).epsilon(1e-5));
}

TEST_CASE("loaded mode applies a convolution from file") {
    namespace fs = std::filesystem;
    const std::string path = (fs::temp_directory_path() / "gsr_feat_conv.bin").string();

    // Single 1x1 layer: out = [r+g, 2b, r, g+b+0.5].
    TensorFile tf;
    TensorBlock w;
    w.name = "conv1_weight";
    w.shape = {4, 3, 1, 1};
    w.data = {1, 1, 0, /**/ 0, 0, 2, /**/ 1, 0, 0, /**/ 0, 1, 1};
    TensorBlock b;
    b.name = "conv1_bias";
    b.shape = {4};
    b.data = {0, 0, 0, 0.5};
    tf.tensors = {w, b};
    save_tensor_file(path, tf);

    const auto spec = FeatureExtractorSpec::loaded(path);
    CHECK(spec.channel_count() == 4);
    Image img = constant_image(6, 5, 0.2, 0.3, 0.4);
    const Image f = extract_features(img, spec);
    CHECK(f.channels == 4);
    CHECK(f.at(2, 2, 0) == doctest::Approx(0.5));
    CHECK(f.at(2, 2, 1) == doctest::Approx(0.8));
    CHECK(f.at(2, 2, 2) == doctest::Approx(0.2));
    CHECK(f.at(2, 2, 3) == doctest::Approx(1.2));
    fs::remove(path);
}

TEST_CASE("loaded mode rejects malformed weight files") {
    namespace fs = std::filesystem;
    const std::string path = (fs::temp_directory_path() / "gsr_feat_bad.bin").string();
    TensorFile tf;
    TensorBlock w;
    w.name = "conv1_weight";
    w.shape = {4, 3, 2, 2}; // even kernel: invalid
    w.data.assign(48, 0.0f);
    TensorBlock b;
    b.name = "conv1_bias";
    b.shape = {4};
    b.data.assign(4, 0.0f);
    tf.tensors = {w, b};
    save_tensor_file(path, tf);
    CHECK_THROWS_AS(FeatureExtractorSpec::loaded(path), IoError);
    fs::remove(path);
}
