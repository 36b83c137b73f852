#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "gsr/error.hpp"

namespace gsr {

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;

    double& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }
    double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
    Vec3& operator+=(const Vec3& o) {
        x += o.x;
        y += o.y;
        z += o.z;
        return *this;
    }
    Vec3& operator-=(const Vec3& o) {
        x -= o.x;
        y -= o.y;
        z -= o.z;
        return *this;
    }
    Vec3 operator-() const { return {-x, -y, -z}; }
};

inline Vec3 operator*(double s, const Vec3& v) { return v * s; }
inline double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(const Vec3& v) { return std::sqrt(dot(v, v)); }
inline Vec3 normalized(const Vec3& v) {
    double n = norm(v);
    return n > 0.0 ? v / n : Vec3{0, 0, 0};
}
inline Vec3 cwise_min(const Vec3& a, const Vec3& b) {
    return {std::min(a.x, b.x), std::min(a.y, b.y), std::min(a.z, b.z)};
}
inline Vec3 cwise_max(const Vec3& a, const Vec3& b) {
    return {std::max(a.x, b.x), std::max(a.y, b.y), std::max(a.z, b.z)};
}

// Row-major 3x3 matrix.
struct Mat3 {
    std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

    double& operator()(int r, int c) { return m[static_cast<std::size_t>(r) * 3 + c]; }
    double operator()(int r, int c) const { return m[static_cast<std::size_t>(r) * 3 + c]; }

    static Mat3 identity() { return Mat3{}; }
    static Mat3 zero() {
        Mat3 a;
        a.m.fill(0.0);
        return a;
    }
    static Mat3 diag(const Vec3& d) {
        Mat3 a = zero();
        a(0, 0) = d.x;
        a(1, 1) = d.y;
        a(2, 2) = d.z;
        return a;
    }

    Mat3 transposed() const {
        Mat3 t;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) t(r, c) = (*this)(c, r);
        return t;
    }

    Vec3 row(int r) const { return {(*this)(r, 0), (*this)(r, 1), (*this)(r, 2)}; }
    Vec3 col(int c) const { return {(*this)(0, c), (*this)(1, c), (*this)(2, c)}; }

    Mat3 operator*(const Mat3& o) const {
        Mat3 r = zero();
        for (int i = 0; i < 3; ++i)
            for (int k = 0; k < 3; ++k) {
                double a = (*this)(i, k);
                for (int j = 0; j < 3; ++j) r(i, j) += a * o(k, j);
            }
        return r;
    }
    Vec3 operator*(const Vec3& v) const {
        return {dot(row(0), v), dot(row(1), v), dot(row(2), v)};
    }
    Mat3 operator+(const Mat3& o) const {
        Mat3 r;
        for (int i = 0; i < 9; ++i) r.m[i] = m[i] + o.m[i];
        return r;
    }
    Mat3 operator*(double s) const {
        Mat3 r;
        for (int i = 0; i < 9; ++i) r.m[i] = m[i] * s;
        return r;
    }
};

// Unit quaternion, scalar-first (w, x, y, z).
struct Quat {
    double w = 1.0, x = 0.0, y = 0.0, z = 0.0;

    double norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }
    Quat normalized() const {
        double n = norm();
        if (n <= 0.0) return Quat{1, 0, 0, 0};
        return {w / n, x / n, y / n, z / n};
    }
    Quat operator-() const { return {-w, -x, -y, -z}; }
};

inline double dot(const Quat& a, const Quat& b) {
    return a.w * b.w + a.x * b.x + a.y * b.y + a.z * b.z;
}

struct Gaussian {
    Vec3 position;              // world units
    Vec3 log_scale;             // log of per-axis stddev, world units
    Quat rotation;              // unit quaternion
    Vec3 color;                 // RGB in [0,1]
    double opacity_logit = 0.0; // opacity = sigmoid(opacity_logit)

    double opacity() const { return 1.0 / (1.0 + std::exp(-opacity_logit)); }
};

struct GaussianScene {
    std::vector<Gaussian> gaussians;
    std::vector<double> features; // N x feat_dim, row-major
    int feat_dim = 0;
    double scene_extent = 1.0; // bounding-sphere radius, world units

    std::size_t size() const { return gaussians.size(); }

    const double* feature_row(std::size_t i) const {
        return features.data() + i * static_cast<std::size_t>(feat_dim);
    }
    double* feature_row(std::size_t i) {
        return features.data() + i * static_cast<std::size_t>(feat_dim);
    }
};

// Pinhole camera. Pixel (i, j) samples the image plane at continuous
// coordinates (i, j); projection is u = fx*X/Z + cx, v = fy*Y/Z + cy in the
// camera frame x right, y down, z forward.
struct Camera {
    double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;
    int width = 0, height = 0;
    Mat3 rotation;    // world -> camera
    Vec3 translation; // x_cam = rotation * x_world + translation

    Vec3 to_camera(const Vec3& p) const { return rotation * p + translation; }
    Vec3 center() const { return rotation.transposed() * (translation * -1.0); }
};

// Dense row-major H x W x C buffer. RGB images keep values in [0,1];
// feature maps are unbounded.
struct Image {
    int width = 0, height = 0, channels = 0;
    std::vector<double> data;

    Image() = default;
    Image(int w, int h, int c) : width(w), height(h), channels(c) {
        data.assign(static_cast<std::size_t>(w) * h * c, 0.0);
    }

    double& at(int y, int x, int c) {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    double at(int y, int x, int c) const {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
    bool same_shape(const Image& o) const {
        return width == o.width && height == o.height && channels == o.channels;
    }
};

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double logit(double p) { return std::log(p / (1.0 - p)); }
inline double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

} // namespace gsr
