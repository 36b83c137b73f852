#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "gsr/core.hpp"
#include "gsr/io.hpp"
#include "gsr/metrics.hpp"

using namespace gsr;
namespace fs = std::filesystem;

namespace {

std::string tmp_path(const std::string& name) {
    static int counter = 0;
    return (fs::temp_directory_path() / ("gsr_io_" + std::to_string(counter++) + "_" + name))
        .string();
}

GaussianScene random_scene(int n, std::uint64_t seed, int feat_dim = 4) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    GaussianScene scene;
    scene.scene_extent = 2.0;
    scene.feat_dim = feat_dim;
    scene.gaussians.resize(n);
    for (auto& g : scene.gaussians) {
        g.position = {u(rng), u(rng), u(rng)};
        g.log_scale = {-2.0 + 0.3 * u(rng), -2.0 + 0.3 * u(rng), -2.0 + 0.3 * u(rng)};
        Quat q{u(rng) + 1.5, u(rng), u(rng), u(rng)};
        g.rotation = q.normalized();
        g.color = {0.5 + 0.4 * u(rng), 0.5 + 0.4 * u(rng), 0.5 + 0.4 * u(rng)};
        g.opacity_logit = u(rng);
    }
    for (int i = 0; i < n * feat_dim; ++i) scene.features.push_back(u(rng));
    return scene;
}

std::vector<std::uint8_t> slurp(const std::string& path) { return read_file(path); }

} // namespace

TEST_CASE("scene file round trip is bit-exact") {
    const GaussianScene scene = random_scene(37, 5);
    const std::string p1 = tmp_path("scene1.gspl");
    const std::string p2 = tmp_path("scene2.gspl");
    save_scene(p1, scene);
    const GaussianScene loaded = load_scene(p1);
    CHECK(loaded.size() == scene.size());
    CHECK(loaded.feat_dim == scene.feat_dim);
    save_scene(p2, loaded);
    CHECK(slurp(p1) == slurp(p2));

    // A second load/save cycle stays stable too.
    const std::string p3 = tmp_path("scene3.gspl");
    save_scene(p3, load_scene(p2));
    CHECK(slurp(p2) == slurp(p3));
    fs::remove(p1);
    fs::remove(p2);
    fs::remove(p3);
}

TEST_CASE("scene file without features round trips") {
    GaussianScene scene = random_scene(5, 9, 0);
    scene.features.clear();
    scene.feat_dim = 0;
    const std::string p = tmp_path("scene_nf.gspl");
    save_scene(p, scene);
    const GaussianScene loaded = load_scene(p);
    CHECK(loaded.feat_dim == 0);
    CHECK(loaded.size() == 5);
    fs::remove(p);
}

TEST_CASE("scene file version mismatch rejected") {
    const GaussianScene scene = random_scene(2, 3);
    const std::string p = tmp_path("scene_bad.gspl");
    save_scene(p, scene);
    auto bytes = slurp(p);
    bytes[4] = 99; // version field
    write_file_atomic(p, bytes.data(), bytes.size());
    CHECK_THROWS_AS(load_scene(p), IoError);
    fs::remove(p);
}

TEST_CASE("scene file bad magic rejected") {
    const std::string p = tmp_path("scene_magic.gspl");
    const char junk[] = "NOPE0000000000000000";
    write_file_atomic(p, junk, sizeof(junk));
    CHECK_THROWS_AS(load_scene(p), IoError);
    fs::remove(p);
}

TEST_CASE("camera json round trip and orthonormality check") {
    Camera cam;
    cam.fx = 100;
    cam.fy = 101;
    cam.cx = 32;
    cam.cy = 24;
    cam.width = 64;
    cam.height = 48;
    cam.rotation = quat_to_rotmat(Quat{0.9, 0.1, 0.2, 0.1}.normalized());
    cam.translation = {0.5, -1.0, 2.0};
    const std::string p = tmp_path("cams.json");
    save_cameras(p, {cam});
    const auto loaded = load_cameras(p);
    REQUIRE(loaded.size() == 1);
    CHECK(loaded[0].fx == doctest::Approx(100));
    CHECK(loaded[0].width == 64);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) {
            CHECK(loaded[0].rotation(r, c) == doctest::Approx(cam.rotation(r, c)).epsilon(1e-9));
        }

    // A rotation off the manifold by more than 1e-5 is rejected.
    Camera bad = cam;
    bad.rotation(0, 0) += 1e-3;
    save_cameras(p, {bad});
    CHECK_THROWS_AS(load_cameras(p), IoError);
    fs::remove(p);
}

TEST_CASE("depth round trip") {
    Image depth(7, 5, 1);
    for (std::size_t i = 0; i < depth.data.size(); ++i) depth.data[i] = 0.25f * (i % 9);
    const std::string p = tmp_path("d.dpth");
    save_depth(p, depth);
    const Image loaded = load_depth(p);
    CHECK(loaded.width == 7);
    CHECK(loaded.height == 5);
    for (std::size_t i = 0; i < depth.data.size(); ++i) {
        CHECK(loaded.data[i] == doctest::Approx(depth.data[i]));
    }
    fs::remove(p);
}

TEST_CASE("tensor file round trip and truncation error") {
    TensorFile tf;
    tf.meta_json = "{\"alpha\":3}";
    TensorBlock a;
    a.name = "a";
    a.shape = {2, 3};
    a.data = {1, 2, 3, 4, 5, 6};
    tf.tensors.push_back(a);
    const std::string p = tmp_path("t.bin");
    save_tensor_file(p, tf);
    const TensorFile loaded = load_tensor_file(p);
    CHECK(loaded.find("a").data == a.data);
    CHECK(loaded.find("a").shape == a.shape);
    CHECK_THROWS_AS(loaded.find("missing"), IoError);

    auto bytes = slurp(p);
    bytes.resize(bytes.size() - 4); // truncate the payload
    write_file_atomic(p, bytes.data(), bytes.size());
    CHECK_THROWS_AS(load_tensor_file(p), IoError);
    fs::remove(p);
}

TEST_CASE("png round trip stays within quantization error") {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Image img(19, 13, 3);
    for (auto& v : img.data) v = u(rng);
    const std::string p = tmp_path("img.png");
    write_png_rgb8(p, img);
    const Image back = read_png_rgb8(p);
    REQUIRE(back.width == img.width);
    REQUIRE(back.height == img.height);
    double max_err = 0.0;
    for (std::size_t i = 0; i < img.data.size(); ++i) {
        max_err = std::max(max_err, std::abs(back.data[i] - img.data[i]));
    }
    CHECK(max_err <= 0.5 / 255.0 + 1e-12);
    // 8-bit quantization keeps reconstruction above 50 dB.
    CHECK(psnr(img, back) >= 50.0);
    fs::remove(p);
}

TEST_CASE("atomic writes leave only .partial on simulated failure") {
    // Success path removes the staging file.
    const std::string p = tmp_path("atomic.bin");
    const char payload[] = "hello";
    write_file_atomic(p, payload, sizeof(payload));
    CHECK(fs::exists(p));
    CHECK(!fs::exists(p + ".partial"));
    fs::remove(p);
}
