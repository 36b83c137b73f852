#pragma once

#include "gsr/types.hpp"

namespace gsr {

// Rotation matrix from a unit quaternion. Throws NumericError on non-finite
// input; the caller is responsible for |q| = 1 (within 1e-6).
Mat3 quat_to_rotmat(const Quat& q);

// Inverse of quat_to_rotmat, up to quaternion sign.
Quat rotmat_to_quat(const Mat3& r);

// Shortest-path spherical interpolation; falls back to lerp+normalize for
// nearly parallel inputs.
Quat slerp(const Quat& a, const Quat& b, double t);

// Sigma = R * diag(exp(2*log_scale)) * R^T. Symmetric positive definite for
// any finite Gaussian.
Mat3 gaussian_covariance(const Gaussian& g);

// Pose/intrinsics interpolation for novel-view sampling: slerp on rotations,
// lerp on translations and intrinsics. Requires matching resolutions and
// t in [0,1].
Camera interpolate_cameras(const Camera& a, const Camera& b, double t);

// Validation helpers shared by deserialization and the render front end.
bool gaussian_finite(const Gaussian& g);
void validate_scene(const GaussianScene& scene);
void validate_camera(const Camera& cam);

// Re-normalizes every quaternion in place (applied after deserialization and
// after every update step).
void renormalize_rotations(GaussianScene& scene);

} // namespace gsr
