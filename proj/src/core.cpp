#include "gsr/core.hpp"

#include <cmath>
#include <string>

namespace gsr {

Mat3 quat_to_rotmat(const Quat& q) {
    if (!std::isfinite(q.w) || !std::isfinite(q.x) || !std::isfinite(q.y) ||
        !std::isfinite(q.z)) {
        throw NumericError("quat_to_rotmat: non-finite quaternion");
    }
    const double w = q.w, x = q.x, y = q.y, z = q.z;
    Mat3 r;
    r(0, 0) = 1.0 - 2.0 * (y * y + z * z);
    r(0, 1) = 2.0 * (x * y - w * z);
    r(0, 2) = 2.0 * (x * z + w * y);
    r(1, 0) = 2.0 * (x * y + w * z);
    r(1, 1) = 1.0 - 2.0 * (x * x + z * z);
    r(1, 2) = 2.0 * (y * z - w * x);
    r(2, 0) = 2.0 * (x * z - w * y);
    r(2, 1) = 2.0 * (y * z + w * x);
    r(2, 2) = 1.0 - 2.0 * (x * x + y * y);
    return r;
}

Quat rotmat_to_quat(const Mat3& r) {
    // Shepperd's method: pick the largest diagonal combination for stability.
    Quat q;
    const double tr = r(0, 0) + r(1, 1) + r(2, 2);
    if (tr > 0.0) {
        double s = std::sqrt(tr + 1.0) * 2.0;
        q.w = 0.25 * s;
        q.x = (r(2, 1) - r(1, 2)) / s;
        q.y = (r(0, 2) - r(2, 0)) / s;
        q.z = (r(1, 0) - r(0, 1)) / s;
    } else if (r(0, 0) > r(1, 1) && r(0, 0) > r(2, 2)) {
        double s = std::sqrt(1.0 + r(0, 0) - r(1, 1) - r(2, 2)) * 2.0;
        q.w = (r(2, 1) - r(1, 2)) / s;
        q.x = 0.25 * s;
        q.y = (r(0, 1) + r(1, 0)) / s;
        q.z = (r(0, 2) + r(2, 0)) / s;
    } else if (r(1, 1) > r(2, 2)) {
        double s = std::sqrt(1.0 + r(1, 1) - r(0, 0) - r(2, 2)) * 2.0;
        q.w = (r(0, 2) - r(2, 0)) / s;
        q.x = (r(0, 1) + r(1, 0)) / s;
        q.y = 0.25 * s;
        q.z = (r(1, 2) + r(2, 1)) / s;
    } else {
        double s = std::sqrt(1.0 + r(2, 2) - r(0, 0) - r(1, 1)) * 2.0;
        q.w = (r(1, 0) - r(0, 1)) / s;
        q.x = (r(0, 2) + r(2, 0)) / s;
        q.y = (r(1, 2) + r(2, 1)) / s;
        q.z = 0.25 * s;
    }
    return q.normalized();
}

Quat slerp(const Quat& a, const Quat& b, double t) {
    Quat bb = b;
    double cosom = dot(a, b);
    if (cosom < 0.0) {
        bb = -b;
        cosom = -cosom;
    }
    double wa, wb;
    if (cosom > 1.0 - 1e-10) {
        wa = 1.0 - t;
        wb = t;
    } else {
        const double omega = std::acos(std::min(cosom, 1.0));
        const double sinom = std::sin(omega);
        wa = std::sin((1.0 - t) * omega) / sinom;
        wb = std::sin(t * omega) / sinom;
    }
    Quat q{wa * a.w + wb * bb.w, wa * a.x + wb * bb.x, wa * a.y + wb * bb.y,
           wa * a.z + wb * bb.z};
    return q.normalized();
}

Mat3 gaussian_covariance(const Gaussian& g) {
    if (!gaussian_finite(g)) {
        throw NumericError("gaussian_covariance: non-finite gaussian");
    }
    const Mat3 r = quat_to_rotmat(g.rotation.normalized());
    const Vec3 s2{std::exp(2.0 * g.log_scale.x), std::exp(2.0 * g.log_scale.y),
                  std::exp(2.0 * g.log_scale.z)};
    return r * Mat3::diag(s2) * r.transposed();
}

Camera interpolate_cameras(const Camera& a, const Camera& b, double t) {
    if (a.width != b.width || a.height != b.height) {
        throw UsageError("interpolate_cameras: mismatched resolutions");
    }
    if (!(t >= 0.0 && t <= 1.0)) {
        throw UsageError("interpolate_cameras: t must be in [0,1], got " + std::to_string(t));
    }
    if (t == 0.0) return a;
    if (t == 1.0) return b;
    Camera c;
    c.width = a.width;
    c.height = a.height;
    c.fx = (1.0 - t) * a.fx + t * b.fx;
    c.fy = (1.0 - t) * a.fy + t * b.fy;
    c.cx = (1.0 - t) * a.cx + t * b.cx;
    c.cy = (1.0 - t) * a.cy + t * b.cy;
    c.rotation = quat_to_rotmat(slerp(rotmat_to_quat(a.rotation), rotmat_to_quat(b.rotation), t));
    c.translation = (1.0 - t) * a.translation + t * b.translation;
    return c;
}

bool gaussian_finite(const Gaussian& g) {
    const double vals[] = {g.position.x,  g.position.y,  g.position.z, g.log_scale.x,
                           g.log_scale.y, g.log_scale.z, g.rotation.w, g.rotation.x,
                           g.rotation.y,  g.rotation.z,  g.color.x,    g.color.y,
                           g.color.z,     g.opacity_logit};
    for (double v : vals) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

void validate_scene(const GaussianScene& scene) {
    if (scene.scene_extent <= 0.0 || !std::isfinite(scene.scene_extent)) {
        throw NumericError("scene_extent must be positive and finite");
    }
    if (scene.feat_dim > 0 &&
        scene.features.size() != scene.size() * static_cast<std::size_t>(scene.feat_dim)) {
        throw NumericError("feature matrix row count does not match gaussian count");
    }
    for (std::size_t i = 0; i < scene.size(); ++i) {
        if (!gaussian_finite(scene.gaussians[i])) {
            throw NumericError("gaussian " + std::to_string(i) + " has non-finite parameters");
        }
    }
}

void validate_camera(const Camera& cam) {
    if (cam.width <= 0 || cam.height <= 0) throw NumericError("camera resolution must be positive");
    if (!(cam.fx > 0.0) || !(cam.fy > 0.0)) throw NumericError("camera focal lengths must be positive");
    // Orthonormality: R R^T = I within 1e-6 and det = +1.
    const Mat3 rrt = cam.rotation * cam.rotation.transposed();
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) {
            const double want = (r == c) ? 1.0 : 0.0;
            if (std::abs(rrt(r, c) - want) > 1e-5) {
                throw NumericError("camera rotation is not orthonormal");
            }
        }
}

void renormalize_rotations(GaussianScene& scene) {
    for (auto& g : scene.gaussians) {
        // Only touch quaternions that violate the unit invariant; values that
        // are unit within tolerance stay bit-identical so that file round
        // trips are exact.
        if (std::abs(g.rotation.norm() - 1.0) > 1e-6) {
            g.rotation = g.rotation.normalized();
        }
    }
}

} // namespace gsr
