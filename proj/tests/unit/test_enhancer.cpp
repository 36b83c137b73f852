#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include <unistd.h>

#include "gsr/enhancer.hpp"
#include "gsr/io.hpp"

using namespace gsr;
namespace fs = std::filesystem;

namespace {

Image random_image(int w, int h, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Image img(w, h, 3);
    for (auto& v : img.data) v = u(rng);
    return img;
}

int reflect_idx(int i, int n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - i - 1;
    return i;
}

// Independent full 5x5 binomial blur (non-separable evaluation).
double blur_oracle(const Image& img, int y, int x, int c) {
    static const double k[5] = {1, 4, 6, 4, 1};
    double acc = 0.0;
    for (int dy = -2; dy <= 2; ++dy)
        for (int dx = -2; dx <= 2; ++dx) {
            acc += k[dy + 2] * k[dx + 2] *
                   img.at(reflect_idx(y + dy, img.height), reflect_idx(x + dx, img.width), c);
        }
    return acc / 256.0;
}

std::string temp_dir() {
    static int counter = 0;
    const auto d = fs::temp_directory_path() /
                   ("gsr_enh_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(d);
    return d.string();
}

} // namespace

TEST_CASE("identity enhancer is bit-identical and idempotent") {
    const Image img = random_image(11, 9, 1);
    const Image out = enhance(img, EnhancerSpec::identity());
    CHECK(out.data == img.data);
    CHECK(enhance(out, EnhancerSpec::identity()).data == img.data);
}

TEST_CASE("unsharp leaves constant images unchanged") {
    Image img(10, 10, 3);
    for (auto& v : img.data) v = 0.42;
    const Image out = enhance(img, EnhancerSpec::unsharp(1.0));
    for (double v : out.data) CHECK(v == doctest::Approx(0.42).epsilon(1e-12));
}

TEST_CASE("unsharp on a step edge matches direct kernel arithmetic") {
    Image img(16, 8, 3);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = x >= 8 ? 1.0 : 0.0;

    const double lambda = 1.0;
    const Image out = enhance(img, EnhancerSpec::unsharp(lambda));
    for (int x = 0; x < img.width; ++x) {
        const double expect =
            clamp01(img.at(4, x, 0) + lambda * (img.at(4, x, 0) - blur_oracle(img, 4, x, 0)));
        CHECK(out.at(4, x, 0) == doctest::Approx(expect).epsilon(1e-12));
    }
    // Overshoot exists before clamping on the bright side of the edge.
    CHECK(out.at(4, 8, 0) == doctest::Approx(1.0)); // clamped to 1 exactly
    CHECK(out.at(4, 6, 0) == doctest::Approx(0.0)); // clamped to 0 exactly
}

TEST_CASE("enhancer spec parsing") {
    CHECK(EnhancerSpec::parse("identity").kind == EnhancerSpec::Kind::Identity);
    CHECK(EnhancerSpec::parse("unsharp").kind == EnhancerSpec::Kind::Unsharp);
    CHECK(EnhancerSpec::parse("unsharp:0.5").unsharp_strength == doctest::Approx(0.5));
    const auto ext = EnhancerSpec::parse("external:/bin/cp -f");
    CHECK(ext.kind == EnhancerSpec::Kind::External);
    CHECK(ext.external_command == "/bin/cp -f");
    CHECK_THROWS_AS(EnhancerSpec::parse("sharpen"), UsageError);
}

TEST_CASE("external enhancer protocol with a copy command") {
    const std::string dir = temp_dir();
    EnhancerSpec spec = EnhancerSpec::external("/bin/cp", dir);
    const Image img = random_image(12, 7, 3);
    const Image out = enhance(img, spec);
    REQUIRE(out.width == img.width);
    REQUIRE(out.height == img.height);
    // The round trip quantizes to 8 bits; values agree with the quantized input.
    for (std::size_t i = 0; i < img.data.size(); ++i) {
        const double quantized = std::lround(img.data[i] * 255.0) / 255.0;
        CHECK(out.data[i] == doctest::Approx(quantized).epsilon(1e-9));
    }
    // Protocol files are cleaned up on success.
    int stray = 0;
    for (const auto& e : fs::directory_iterator(dir)) {
        (void)e;
        ++stray;
    }
    CHECK(stray == 0);
}

TEST_CASE("external enhancer failures are diagnosed") {
    const std::string dir = temp_dir();

    // Nonzero exit.
    EnhancerSpec fail = EnhancerSpec::external("/bin/false", dir);
    CHECK_THROWS_AS(enhance(random_image(6, 6, 4), fail), EnhancerError);

    // Timeout.
    EnhancerSpec slow = EnhancerSpec::external("/bin/sleep 5", dir);
    slow.external_timeout_seconds = 0.2;
    CHECK_THROWS_AS(enhance(random_image(6, 6, 5), slow), EnhancerError);

    // Malformed output: a script that writes garbage to the output path.
    const std::string script = dir + "/garbage.sh";
    {
        std::ofstream f(script);
        f << "#!/bin/sh\necho notapng > \"$2\"\n";
    }
    fs::permissions(script, fs::perms::owner_all);
    EnhancerSpec garbage = EnhancerSpec::external(script, dir);
    CHECK_THROWS_AS(enhance(random_image(6, 6, 6), garbage), EnhancerError);
    fs::remove(script);
}
