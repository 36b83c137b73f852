#include <doctest.h>

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <cmath>
#include <random>

#include "gsr/core.hpp"

using namespace gsr;

namespace {

Eigen::Matrix3d to_eigen(const Mat3& m) {
    Eigen::Matrix3d e;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) e(r, c) = m(r, c);
    return e;
}

Quat random_unit_quat(std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Quat q{n(rng), n(rng), n(rng), n(rng)};
    return q.normalized();
}

} // namespace

TEST_CASE("quat_to_rotmat identity and axis cases") {
    const Mat3 id = quat_to_rotmat(Quat{1, 0, 0, 0});
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) CHECK(id(r, c) == doctest::Approx(r == c ? 1.0 : 0.0));

    // 180 degrees about z.
    const Mat3 rz = quat_to_rotmat(Quat{0, 0, 0, 1});
    CHECK(rz(0, 0) == doctest::Approx(-1.0));
    CHECK(rz(1, 1) == doctest::Approx(-1.0));
    CHECK(rz(2, 2) == doctest::Approx(1.0));
    CHECK(std::abs(rz(0, 1)) < 1e-12);

    // 90 degrees about x, checked against an axis-angle oracle.
    const double c45 = std::cos(M_PI / 4), s45 = std::sin(M_PI / 4);
    const Mat3 rx = quat_to_rotmat(Quat{c45, s45, 0, 0});
    const Eigen::Matrix3d oracle =
        Eigen::AngleAxisd(M_PI / 2, Eigen::Vector3d::UnitX()).toRotationMatrix();
    CHECK((to_eigen(rx) - oracle).norm() < 1e-12);
}

TEST_CASE("quat_to_rotmat rejects non-finite input") {
    CHECK_THROWS_AS(quat_to_rotmat(Quat{std::nan(""), 0, 0, 0}), NumericError);
}

TEST_CASE("quaternion round trip recovers input up to sign") {
    std::mt19937_64 rng(7);
    for (int i = 0; i < 200; ++i) {
        const Quat q = random_unit_quat(rng);
        const Quat back = rotmat_to_quat(quat_to_rotmat(q));
        const double same = std::abs(back.w - q.w) + std::abs(back.x - q.x) +
                            std::abs(back.y - q.y) + std::abs(back.z - q.z);
        const double flip = std::abs(back.w + q.w) + std::abs(back.x + q.x) +
                            std::abs(back.y + q.y) + std::abs(back.z + q.z);
        CHECK(std::min(same, flip) < 1e-6);
    }
}

TEST_CASE("gaussian_covariance closed forms") {
    Gaussian g;
    g.log_scale = {0, 0, 0};
    Mat3 cov = gaussian_covariance(g);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) CHECK(cov(r, c) == doctest::Approx(r == c ? 1.0 : 0.0));

    g.log_scale = {std::log(2.0), 0, 0};
    cov = gaussian_covariance(g);
    CHECK(cov(0, 0) == doctest::Approx(4.0));
    CHECK(cov(1, 1) == doctest::Approx(1.0));
    CHECK(cov(2, 2) == doctest::Approx(1.0));
}

TEST_CASE("gaussian_covariance matches eigendecomposition oracle") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int i = 0; i < 50; ++i) {
        Gaussian g;
        g.rotation = random_unit_quat(rng);
        g.log_scale = {u(rng), u(rng), u(rng)};
        const Eigen::Matrix3d cov = to_eigen(gaussian_covariance(g));

        Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(cov);
        Eigen::Vector3d want{std::exp(2 * g.log_scale.x), std::exp(2 * g.log_scale.y),
                             std::exp(2 * g.log_scale.z)};
        std::sort(want.data(), want.data() + 3);
        CHECK((es.eigenvalues() - want).cwiseAbs().maxCoeff() < 1e-9 * want.maxCoeff());

        // Reconstruction from the eigen system reproduces the matrix.
        const Eigen::Matrix3d recon = es.eigenvectors() * es.eigenvalues().asDiagonal() *
                                      es.eigenvectors().transpose();
        CHECK((recon - cov).norm() < 1e-9);
    }
}

TEST_CASE("gaussian_covariance is invariant under quaternion sign flip") {
    std::mt19937_64 rng(13);
    for (int i = 0; i < 20; ++i) {
        Gaussian g;
        g.rotation = random_unit_quat(rng);
        g.log_scale = {0.3, -0.2, 0.1};
        Gaussian h = g;
        h.rotation = -g.rotation;
        const Mat3 a = gaussian_covariance(g);
        const Mat3 b = gaussian_covariance(h);
        for (int k = 0; k < 9; ++k) CHECK(a.m[k] == doctest::Approx(b.m[k]).epsilon(1e-12));
    }
}

TEST_CASE("interpolate_cameras endpoints and midpoint") {
    Camera a;
    a.fx = a.fy = 50;
    a.cx = a.cy = 16;
    a.width = a.height = 32;
    Camera b = a;
    b.rotation = quat_to_rotmat(Quat{std::cos(M_PI / 4), 0, std::sin(M_PI / 4), 0});
    b.translation = {1, 2, 3};
    b.fx = 60;

    const Camera c0 = interpolate_cameras(a, b, 0.0);
    CHECK(c0.fx == a.fx);
    CHECK((to_eigen(c0.rotation) - to_eigen(a.rotation)).norm() < 1e-12);

    const Camera c1 = interpolate_cameras(a, b, 1.0);
    CHECK(c1.fx == b.fx);
    CHECK((to_eigen(c1.rotation) - to_eigen(b.rotation)).norm() < 1e-12);

    // Halfway between identity and 90 degrees about y: 45 degrees about y.
    const Camera ch = interpolate_cameras(a, b, 0.5);
    const Eigen::Matrix3d oracle =
        Eigen::AngleAxisd(M_PI / 4, Eigen::Vector3d::UnitY()).toRotationMatrix();
    CHECK((to_eigen(ch.rotation) - oracle).norm() < 1e-9);
    CHECK(ch.translation.x == doctest::Approx(0.5));
    CHECK(ch.fx == doctest::Approx(55.0));

    CHECK_THROWS_AS(interpolate_cameras(a, b, 1.5), UsageError);
    CHECK_THROWS_AS(interpolate_cameras(a, b, -0.1), UsageError);
}

TEST_CASE("slerp agrees with Eigen") {
    std::mt19937_64 rng(17);
    for (int i = 0; i < 50; ++i) {
        const Quat a = random_unit_quat(rng);
        const Quat b = random_unit_quat(rng);
        const double t = 0.37;
        const Quat mine = slerp(a, b, t);
        const Eigen::Quaterniond qa(a.w, a.x, a.y, a.z), qb(b.w, b.x, b.y, b.z);
        const Eigen::Quaterniond ref = qa.slerp(t, qb);
        const double same = std::abs(mine.w - ref.w()) + std::abs(mine.x - ref.x()) +
                            std::abs(mine.y - ref.y()) + std::abs(mine.z - ref.z());
        const double flip = std::abs(mine.w + ref.w()) + std::abs(mine.x + ref.x()) +
                            std::abs(mine.y + ref.y()) + std::abs(mine.z + ref.z());
        CHECK(std::min(same, flip) < 1e-9);
    }
}

TEST_CASE("validate_scene flags offending gaussian") {
    GaussianScene scene;
    scene.gaussians.resize(3);
    scene.gaussians[1].position.x = std::numeric_limits<double>::infinity();
    try {
        validate_scene(scene);
        CHECK(false);
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("gaussian 1") != std::string::npos);
    }
}
