#include "gsr/rasterizer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "gsr/core.hpp"
#include "gsr/threading.hpp"

namespace gsr {
namespace {

constexpr int kTileSize = 16;
constexpr double kPowerCutoff = 4.5;      // 3-sigma screen-space support
constexpr double kAlphaClamp = 0.999;
constexpr double kMinTransmittance = 1e-4; // per-ray termination
constexpr double kDilation = 0.3;          // 2D covariance diagonal add

template <typename T>
struct ProjectedSplat {
    bool valid = false;
    T u = 0, v = 0;          // projected mean, pixel coordinates
    T qa = 0, qb = 0, qc = 0; // conic = inverse of the 2D covariance
    T z = 0;                 // view-space depth
    T opacity = 0;
    T col[3] = {0, 0, 0};
    T radius = 0;
};

Mat3 gaussian_covariance_from(const Mat3& rot, const Vec3& log_scale) {
    const Vec3 s2{std::exp(2.0 * log_scale.x), std::exp(2.0 * log_scale.y),
                  std::exp(2.0 * log_scale.z)};
    return rot * Mat3::diag(s2) * rot.transposed();
}

template <typename T>
ProjectedSplat<T> project_splat(const Gaussian& g, const Camera& cam, double near_plane) {
    ProjectedSplat<T> out;
    const Quat qn = g.rotation.normalized();
    const Mat3 rot = quat_to_rotmat(qn);

    const Vec3 t64 = cam.to_camera(g.position);
    if (t64.z < near_plane) return out;

    const T tx = static_cast<T>(t64.x), ty = static_cast<T>(t64.y), tz = static_cast<T>(t64.z);
    const T fx = static_cast<T>(cam.fx), fy = static_cast<T>(cam.fy);

    // 3D covariance in camera frame: W * (R S^2 R^T) * W^T.
    Mat3 cov3 = gaussian_covariance_from(rot, g.log_scale);
    const Mat3 wc = cam.rotation * cov3 * cam.rotation.transposed();

    // Local-affine (EWA) projection of the camera-frame covariance.
    const T j00 = fx / tz;
    const T j02 = -fx * tx / (tz * tz);
    const T j11 = fy / tz;
    const T j12 = -fy * ty / (tz * tz);

    const T w00 = static_cast<T>(wc(0, 0)), w01 = static_cast<T>(wc(0, 1)),
            w02 = static_cast<T>(wc(0, 2)), w11 = static_cast<T>(wc(1, 1)),
            w12 = static_cast<T>(wc(1, 2)), w22 = static_cast<T>(wc(2, 2));

    // Sigma2 = J Wc J^T + dilation * I, with J = [[j00,0,j02],[0,j11,j12]].
    const T a = j00 * (j00 * w00 + j02 * w02) + j02 * (j00 * w02 + j02 * w22) +
                static_cast<T>(kDilation);
    const T b = j00 * (j11 * w01 + j12 * w02) + j02 * (j11 * w12 + j12 * w22);
    const T c = j11 * (j11 * w11 + j12 * w12) + j12 * (j11 * w12 + j12 * w22) +
                static_cast<T>(kDilation);

    const T det = a * c - b * b;
    if (!(det > T(0))) return out;

    out.qa = c / det;
    out.qb = -b / det;
    out.qc = a / det;

    const T mid = T(0.5) * (a + c);
    const T disc = std::sqrt(std::max(T(1e-12), mid * mid - det));
    out.radius = T(3) * std::sqrt(std::max(T(0), mid + disc));

    out.u = fx * tx / tz + static_cast<T>(cam.cx);
    out.v = fy * ty / tz + static_cast<T>(cam.cy);
    out.z = tz;
    out.opacity = static_cast<T>(sigmoid(g.opacity_logit));
    out.col[0] = static_cast<T>(g.color.x);
    out.col[1] = static_cast<T>(g.color.y);
    out.col[2] = static_cast<T>(g.color.z);
    out.valid = true;
    return out;
}

template <typename T>
struct Frame {
    std::vector<ProjectedSplat<T>> splats;
    // Per tile: gaussian indices sorted front to back (ties by index).
    std::vector<std::vector<std::uint32_t>> tiles;
    int tiles_x = 0, tiles_y = 0;
};

template <typename T>
Frame<T> build_frame(const GaussianScene& scene, const Camera& cam, const RenderOptions& opts) {
    Frame<T> frame;
    const std::size_t n = scene.size();
    frame.tiles_x = (cam.width + kTileSize - 1) / kTileSize;
    frame.tiles_y = (cam.height + kTileSize - 1) / kTileSize;
    frame.tiles.assign(static_cast<std::size_t>(frame.tiles_x) * frame.tiles_y, {});
    frame.splats.resize(n);

    parallel_ranges(n, 2048, [&](std::size_t, std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) {
            frame.splats[i] = project_splat<T>(scene.gaussians[i], cam, opts.near_plane);
        }
    });

    std::vector<std::uint32_t> order;
    order.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        if (frame.splats[i].valid) order.push_back(i);
    }
    std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
        const T za = frame.splats[a].z, zb = frame.splats[b].z;
        if (za != zb) return za < zb;
        return a < b;
    });

    for (std::uint32_t id : order) {
        const auto& s = frame.splats[id];
        const double r = static_cast<double>(s.radius);
        int tx0 = static_cast<int>(std::floor((static_cast<double>(s.u) - r) / kTileSize));
        int tx1 = static_cast<int>(std::floor((static_cast<double>(s.u) + r) / kTileSize));
        int ty0 = static_cast<int>(std::floor((static_cast<double>(s.v) - r) / kTileSize));
        int ty1 = static_cast<int>(std::floor((static_cast<double>(s.v) + r) / kTileSize));
        tx0 = std::max(tx0, 0);
        ty0 = std::max(ty0, 0);
        tx1 = std::min(tx1, frame.tiles_x - 1);
        ty1 = std::min(ty1, frame.tiles_y - 1);
        for (int ty = ty0; ty <= ty1; ++ty)
            for (int tx = tx0; tx <= tx1; ++tx)
                frame.tiles[static_cast<std::size_t>(ty) * frame.tiles_x + tx].push_back(id);
    }
    return frame;
}

template <typename T>
struct CompositedItem {
    std::uint32_t id;
    T alpha;
    T trans_before;
    T gval; // exp(-power)
    T dx, dy;
    bool clamped;
};

// Walks a pixel's tile list front to back, appending composited items.
// Returns the final transmittance. Identical arithmetic is used by the
// forward and backward passes so compositing decisions always agree.
template <typename T>
T composite_pixel(const Frame<T>& frame, const std::vector<std::uint32_t>& list, T px, T py,
                  std::vector<CompositedItem<T>>& items) {
    items.clear();
    T trans = T(1);
    for (std::uint32_t id : list) {
        const auto& s = frame.splats[id];
        const T dx = px - s.u;
        const T dy = py - s.v;
        const T power = T(0.5) * (s.qa * dx * dx + T(2) * s.qb * dx * dy + s.qc * dy * dy);
        if (!(power <= static_cast<T>(kPowerCutoff)) || power < T(0)) continue;
        const T gval = std::exp(-power);
        T alpha = s.opacity * gval;
        const bool clamped = alpha > static_cast<T>(kAlphaClamp);
        if (clamped) alpha = static_cast<T>(kAlphaClamp);
        if (!(alpha > T(0))) continue;
        items.push_back({id, alpha, trans, gval, dx, dy, clamped});
        trans *= (T(1) - alpha);
        if (trans < static_cast<T>(kMinTransmittance)) break;
    }
    return trans;
}

template <typename T>
void render_tiles(const GaussianScene& scene, const Camera& cam, const RenderOptions& opts,
                  RenderOutput& out) {
    const Frame<T> frame = build_frame<T>(scene, cam, opts);
    const int w = cam.width, h = cam.height;
    const int k_top = opts.k_top;
    const T bg[3] = {static_cast<T>(opts.background.x), static_cast<T>(opts.background.y),
                     static_cast<T>(opts.background.z)};

    parallel_chunks(frame.tiles.size(), [&](std::size_t tile_idx) {
        const auto& list = frame.tiles[tile_idx];
        const int tx = static_cast<int>(tile_idx) % frame.tiles_x;
        const int ty = static_cast<int>(tile_idx) / frame.tiles_x;
        const int x0 = tx * kTileSize, x1 = std::min(w, x0 + kTileSize);
        const int y0 = ty * kTileSize, y1 = std::min(h, y0 + kTileSize);

        std::vector<CompositedItem<T>> items;
        for (int y = y0; y < y1; ++y) {
            for (int x = x0; x < x1; ++x) {
                const T trans = composite_pixel(frame, list, static_cast<T>(x),
                                                static_cast<T>(y), items);
                T acc[3] = {0, 0, 0};
                T wsum = 0, wz = 0;
                for (const auto& it : items) {
                    const auto& s = frame.splats[it.id];
                    const T wgt = it.alpha * it.trans_before;
                    acc[0] += wgt * s.col[0];
                    acc[1] += wgt * s.col[1];
                    acc[2] += wgt * s.col[2];
                    wsum += wgt;
                    wz += wgt * s.z;
                }
                const std::size_t p = static_cast<std::size_t>(y) * w + x;
                out.image.data[p * 3 + 0] = static_cast<double>(acc[0] + trans * bg[0]);
                out.image.data[p * 3 + 1] = static_cast<double>(acc[1] + trans * bg[1]);
                out.image.data[p * 3 + 2] = static_cast<double>(acc[2] + trans * bg[2]);
                out.final_transmittance[p] = static_cast<double>(trans);
                out.weight_sum[p] = static_cast<double>(wsum);
                out.depth[p] = wsum > T(0) ? static_cast<double>(wz / wsum) : 0.0;

                // Retain the k_top largest weights (ties broken by index).
                PixelContribution* dst = out.contributions.data() + p * k_top;
                auto weight_of = [](const CompositedItem<T>& it) {
                    return it.alpha * it.trans_before;
                };
                auto better = [&](const CompositedItem<T>& a, const CompositedItem<T>& b) {
                    const T wa = weight_of(a), wb = weight_of(b);
                    if (wa != wb) return wa > wb;
                    return a.id < b.id;
                };
                if (static_cast<int>(items.size()) > k_top) {
                    std::nth_element(items.begin(), items.begin() + k_top, items.end(), better);
                    items.resize(k_top);
                }
                std::sort(items.begin(), items.end(), better);
                int j = 0;
                for (; j < static_cast<int>(items.size()); ++j) {
                    dst[j].index = items[j].id;
                    dst[j].weight = static_cast<float>(weight_of(items[j]));
                }
                for (; j < k_top; ++j) dst[j] = PixelContribution{};
            }
        }
    });
}

// Per-splat accumulators for the pixel-space half of the backward pass.
struct SplatGradAccum {
    double du = 0, dv = 0;          // projected mean
    double da = 0, db = 0, dc = 0;  // conic entries
    double dcol[3] = {0, 0, 0};
    double dop = 0; // raw opacity (pre-logit)
};

// dR/dq entries for a unit quaternion, contracted against dL/dR.
void quat_rotmat_backward(const Quat& q, const Mat3& dr, double dq[4]) {
    const double w = q.w, x = q.x, y = q.y, z = q.z;
    dq[0] = 2.0 * (-z * dr(0, 1) + y * dr(0, 2) + z * dr(1, 0) - x * dr(1, 2) -
                   y * dr(2, 0) + x * dr(2, 1));
    dq[1] = 2.0 * (y * dr(0, 1) + z * dr(0, 2) + y * dr(1, 0) - 2.0 * x * dr(1, 1) -
                   w * dr(1, 2) + z * dr(2, 0) + w * dr(2, 1) - 2.0 * x * dr(2, 2));
    dq[2] = 2.0 * (-2.0 * y * dr(0, 0) + x * dr(0, 1) + w * dr(0, 2) + x * dr(1, 0) +
                   z * dr(1, 2) - w * dr(2, 0) + z * dr(2, 1) - 2.0 * y * dr(2, 2));
    dq[3] = 2.0 * (-2.0 * z * dr(0, 0) - w * dr(0, 1) + x * dr(0, 2) + w * dr(1, 0) -
                   2.0 * z * dr(1, 1) + y * dr(1, 2) + x * dr(2, 0) + y * dr(2, 1));
}

// Maps accumulated (mean2d, conic, color, opacity) gradients of one splat back
// to its gaussian parameters through the projection chain.
template <typename T>
GaussianGrad projection_backward(const Gaussian& g, const Camera& cam,
                                 const ProjectedSplat<T>& s, const SplatGradAccum& acc) {
    GaussianGrad grad;
    grad.color = {acc.dcol[0], acc.dcol[1], acc.dcol[2]};
    const double op = sigmoid(g.opacity_logit);
    grad.opacity_logit = acc.dop * op * (1.0 - op);

    const double qraw_norm = g.rotation.norm();
    const Quat qn = g.rotation.normalized();
    const Mat3 rot = quat_to_rotmat(qn);
    const Vec3 t = cam.to_camera(g.position);
    const double tx = t.x, ty = t.y, tz = t.z;
    const double fx = cam.fx, fy = cam.fy;

    const Mat3 cov3 = gaussian_covariance_from(rot, g.log_scale);
    const Mat3 wc_cov = cam.rotation * cov3 * cam.rotation.transposed();

    const double j00 = fx / tz, j02 = -fx * tx / (tz * tz);
    const double j11 = fy / tz, j12 = -fy * ty / (tz * tz);

    // M = J * Rcam (2x3).
    double m[2][3];
    for (int c = 0; c < 3; ++c) {
        m[0][c] = j00 * cam.rotation(0, c) + j02 * cam.rotation(2, c);
        m[1][c] = j11 * cam.rotation(1, c) + j12 * cam.rotation(2, c);
    }

    // Conic gradient in full-matrix form, then through the 2x2 inverse:
    // dSigma2 = -Q * Gq * Q.
    const double qa = static_cast<double>(s.qa), qb = static_cast<double>(s.qb),
                 qc = static_cast<double>(s.qc);
    const double gq[2][2] = {{acc.da, 0.5 * acc.db}, {0.5 * acc.db, acc.dc}};
    double qgq[2][2];
    // tmp = Gq * Q
    const double t00 = gq[0][0] * qa + gq[0][1] * qb;
    const double t01 = gq[0][0] * qb + gq[0][1] * qc;
    const double t10 = gq[1][0] * qa + gq[1][1] * qb;
    const double t11 = gq[1][0] * qb + gq[1][1] * qc;
    qgq[0][0] = -(qa * t00 + qb * t10);
    qgq[0][1] = -(qa * t01 + qb * t11);
    qgq[1][0] = -(qb * t00 + qc * t10);
    qgq[1][1] = -(qb * t01 + qc * t11);

    // dSigma_world = M^T dSigma2 M (3x3), with Sigma2 = M Sigma_world M^T.
    Mat3 dcov3 = Mat3::zero();
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c)
            dcov3(r, c) = m[0][r] * (qgq[0][0] * m[0][c] + qgq[0][1] * m[1][c]) +
                          m[1][r] * (qgq[1][0] * m[0][c] + qgq[1][1] * m[1][c]);

    // dM = 2 * dSigma2 * M * Sigma_world.
    double mc[2][3]; // M * cov3
    for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 3; ++c)
            mc[r][c] = m[r][0] * cov3(0, c) + m[r][1] * cov3(1, c) + m[r][2] * cov3(2, c);
    double dm[2][3];
    for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 3; ++c)
            dm[r][c] = 2.0 * (qgq[r][0] * mc[0][c] + qgq[r][1] * mc[1][c]);

    // dJ = dM * Rcam^T; only the four structural entries of J are free.
    double dj00 = 0, dj02 = 0, dj11 = 0, dj12 = 0;
    for (int c = 0; c < 3; ++c) {
        dj00 += dm[0][c] * cam.rotation(0, c);
        dj02 += dm[0][c] * cam.rotation(2, c);
        dj11 += dm[1][c] * cam.rotation(1, c);
        dj12 += dm[1][c] * cam.rotation(2, c);
    }

    // View-space position gradient: mean projection plus J's dependence on t.
    double dt[3];
    dt[0] = (fx / tz) * acc.du + dj02 * (-fx / (tz * tz));
    dt[1] = (fy / tz) * acc.dv + dj12 * (-fy / (tz * tz));
    dt[2] = (-fx * tx / (tz * tz)) * acc.du + (-fy * ty / (tz * tz)) * acc.dv +
            dj00 * (-fx / (tz * tz)) + dj02 * (2.0 * fx * tx / (tz * tz * tz)) +
            dj11 * (-fy / (tz * tz)) + dj12 * (2.0 * fy * ty / (tz * tz * tz));

    grad.position = cam.rotation.transposed() * Vec3{dt[0], dt[1], dt[2]};

    // World covariance chain: cov3 = R S^2 R^T. dcov3 is already expressed in
    // world coordinates because M = J * Rcam absorbed the camera rotation.
    const Mat3& dcov_world = dcov3;
    const Vec3 s2{std::exp(2.0 * g.log_scale.x), std::exp(2.0 * g.log_scale.y),
                  std::exp(2.0 * g.log_scale.z)};
    // dR = (dcov + dcov^T) R S^2; dcov_world is symmetric by construction.
    const Mat3 dr = (dcov_world * 2.0) * rot * Mat3::diag(s2);
    double ds2[3];
    for (int k = 0; k < 3; ++k) {
        const Vec3 rk = rot.col(k);
        ds2[k] = dot(rk, dcov_world * rk);
    }
    grad.log_scale = {ds2[0] * 2.0 * s2.x, ds2[1] * 2.0 * s2.y, ds2[2] * 2.0 * s2.z};

    double dqn[4];
    quat_rotmat_backward(qn, dr, dqn);
    // Through the normalization q_hat = q / |q|.
    const double qh[4] = {qn.w, qn.x, qn.y, qn.z};
    const double proj = qh[0] * dqn[0] + qh[1] * dqn[1] + qh[2] * dqn[2] + qh[3] * dqn[3];
    for (int k = 0; k < 4; ++k) grad.rotation[k] = (dqn[k] - qh[k] * proj) / qraw_norm;

    return grad;
}

template <typename T>
void backward_tiles(const GaussianScene& scene, const Camera& cam, const Image& upstream,
                    const RenderOptions& opts, SceneGradients& grads) {
    const Frame<T> frame = build_frame<T>(scene, cam, opts);
    const int w = cam.width, h = cam.height;
    const Vec3 bg = opts.background;

    // Phase 1: pixel-space gradients per tile, merged in tile order.
    std::vector<std::vector<SplatGradAccum>> tile_accum(frame.tiles.size());
    parallel_chunks(frame.tiles.size(), [&](std::size_t tile_idx) {
        const auto& list = frame.tiles[tile_idx];
        if (list.empty()) return;
        auto& accum = tile_accum[tile_idx];
        accum.assign(list.size(), SplatGradAccum{});
        // Maps gaussian id -> slot in this tile's list.
        // Tile lists are depth-sorted, so build a small hash-free lookup by
        // scanning; lists are short enough that a sorted-index map is cheap.
        std::vector<std::pair<std::uint32_t, std::uint32_t>> slot(list.size());
        for (std::uint32_t j = 0; j < list.size(); ++j) slot[j] = {list[j], j};
        std::sort(slot.begin(), slot.end());
        auto slot_of = [&](std::uint32_t id) {
            auto it = std::lower_bound(slot.begin(), slot.end(),
                                       std::make_pair(id, std::uint32_t(0)));
            return it->second;
        };

        const int tx = static_cast<int>(tile_idx) % frame.tiles_x;
        const int ty = static_cast<int>(tile_idx) / frame.tiles_x;
        const int x0 = tx * kTileSize, x1 = std::min(w, x0 + kTileSize);
        const int y0 = ty * kTileSize, y1 = std::min(h, y0 + kTileSize);

        std::vector<CompositedItem<T>> items;
        for (int y = y0; y < y1; ++y) {
            for (int x = x0; x < x1; ++x) {
                const T trans = composite_pixel(frame, list, static_cast<T>(x),
                                                static_cast<T>(y), items);
                if (items.empty()) continue;
                const std::size_t p = static_cast<std::size_t>(y) * w + x;
                const double dC[3] = {upstream.data[p * 3 + 0], upstream.data[p * 3 + 1],
                                      upstream.data[p * 3 + 2]};
                // Suffix contribution S starts at the background term.
                double sfx[3] = {static_cast<double>(trans) * bg.x,
                                 static_cast<double>(trans) * bg.y,
                                 static_cast<double>(trans) * bg.z};
                for (std::size_t k = items.size(); k-- > 0;) {
                    const auto& it = items[k];
                    const auto& s = frame.splats[it.id];
                    const double alpha = static_cast<double>(it.alpha);
                    const double tb = static_cast<double>(it.trans_before);
                    const double wgt = alpha * tb;
                    SplatGradAccum& a = accum[slot_of(it.id)];
                    double dalpha = 0.0;
                    for (int ch = 0; ch < 3; ++ch) {
                        a.dcol[ch] += wgt * dC[ch];
                        dalpha += dC[ch] * (tb * static_cast<double>(s.col[ch]) -
                                            sfx[ch] / (1.0 - alpha));
                        sfx[ch] += wgt * static_cast<double>(s.col[ch]);
                    }
                    if (!it.clamped) {
                        const double gval = static_cast<double>(it.gval);
                        a.dop += dalpha * gval;
                        const double dgval = dalpha * static_cast<double>(s.opacity);
                        const double dpower = -dgval * gval;
                        const double dx = static_cast<double>(it.dx);
                        const double dy = static_cast<double>(it.dy);
                        a.da += dpower * 0.5 * dx * dx;
                        a.db += dpower * dx * dy;
                        a.dc += dpower * 0.5 * dy * dy;
                        const double qa = static_cast<double>(s.qa);
                        const double qb = static_cast<double>(s.qb);
                        const double qc = static_cast<double>(s.qc);
                        a.du -= dpower * (qa * dx + qb * dy);
                        a.dv -= dpower * (qb * dx + qc * dy);
                    }
                }
            }
        }
    });

    // Merge tile accumulators into per-gaussian sums, fixed tile order.
    std::vector<SplatGradAccum> total(scene.size());
    for (std::size_t tile_idx = 0; tile_idx < frame.tiles.size(); ++tile_idx) {
        const auto& list = frame.tiles[tile_idx];
        const auto& accum = tile_accum[tile_idx];
        for (std::size_t j = 0; j < accum.size(); ++j) {
            SplatGradAccum& dst = total[list[j]];
            const SplatGradAccum& src = accum[j];
            dst.du += src.du;
            dst.dv += src.dv;
            dst.da += src.da;
            dst.db += src.db;
            dst.dc += src.dc;
            for (int ch = 0; ch < 3; ++ch) dst.dcol[ch] += src.dcol[ch];
            dst.dop += src.dop;
        }
    }

    // Phase 2: per-gaussian projection chain.
    grads.resize(scene.size());
    parallel_ranges(scene.size(), 1024, [&](std::size_t, std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) {
            if (!frame.splats[i].valid) continue;
            grads.per_gaussian[i] +=
                projection_backward(scene.gaussians[i], cam, frame.splats[i], total[i]);
        }
    });
}

} // namespace

void SceneGradients::accumulate(const SceneGradients& o, double scale) {
    if (per_gaussian.size() != o.per_gaussian.size()) {
        throw NumericError("SceneGradients::accumulate: size mismatch");
    }
    for (std::size_t i = 0; i < per_gaussian.size(); ++i) {
        GaussianGrad& d = per_gaussian[i];
        const GaussianGrad& s = o.per_gaussian[i];
        d.position += s.position * scale;
        d.log_scale += s.log_scale * scale;
        for (int k = 0; k < 4; ++k) d.rotation[k] += s.rotation[k] * scale;
        d.color += s.color * scale;
        d.opacity_logit += s.opacity_logit * scale;
    }
}

bool SceneGradients::all_finite() const {
    for (const auto& g : per_gaussian) {
        const double vals[] = {g.position.x,  g.position.y,  g.position.z, g.log_scale.x,
                               g.log_scale.y, g.log_scale.z, g.rotation[0], g.rotation[1],
                               g.rotation[2], g.rotation[3], g.color.x,    g.color.y,
                               g.color.z,     g.opacity_logit};
        for (double v : vals)
            if (!std::isfinite(v)) return false;
    }
    return true;
}

RenderOutput render(const GaussianScene& scene, const Camera& camera,
                    const RenderOptions& opts) {
    validate_camera(camera);
    validate_scene(scene);
    if (opts.k_top <= 0) throw UsageError("render: k_top must be positive");

    RenderOutput out;
    out.width = camera.width;
    out.height = camera.height;
    out.k_top = opts.k_top;
    out.image = Image(camera.width, camera.height, 3);
    const std::size_t np = out.image.pixel_count();
    out.final_transmittance.assign(np, 1.0);
    out.weight_sum.assign(np, 0.0);
    out.depth.assign(np, 0.0);
    out.contributions.assign(np * static_cast<std::size_t>(opts.k_top), PixelContribution{});

    if (opts.use_double) {
        render_tiles<double>(scene, camera, opts, out);
    } else {
        render_tiles<float>(scene, camera, opts, out);
    }
    return out;
}

SceneGradients render_backward(const GaussianScene& scene, const Camera& camera,
                               const Image& upstream, const RenderOptions& opts) {
    validate_camera(camera);
    validate_scene(scene);
    if (upstream.width != camera.width || upstream.height != camera.height ||
        upstream.channels != 3) {
        throw NumericError("render_backward: upstream buffer shape mismatch");
    }
    SceneGradients grads;
    grads.resize(scene.size());
    if (opts.use_double) {
        backward_tiles<double>(scene, camera, upstream, opts, grads);
    } else {
        backward_tiles<float>(scene, camera, upstream, opts, grads);
    }
    return grads;
}

std::pair<std::vector<double>, std::vector<double>>
pool_over_pixels(const RenderOutput& output, const Image& per_pixel, std::size_t n_gaussians) {
    if (per_pixel.width != output.width || per_pixel.height != output.height) {
        throw NumericError("pool_over_pixels: buffer resolution mismatch");
    }
    const int d = per_pixel.channels;
    const std::size_t np = per_pixel.pixel_count();
    const int k = output.k_top;

    // Fixed chunking keeps sums independent of thread count.
    const std::size_t nchunks = 8;
    const std::size_t grain = (np + nchunks - 1) / nchunks;
    std::vector<std::vector<double>> part_sum(nchunks);
    std::vector<std::vector<double>> part_w(nchunks);
    parallel_ranges(np, grain, [&](std::size_t chunk, std::size_t b, std::size_t e) {
        auto& sums = part_sum[chunk];
        auto& wsums = part_w[chunk];
        sums.assign(n_gaussians * d, 0.0);
        wsums.assign(n_gaussians, 0.0);
        for (std::size_t p = b; p < e; ++p) {
            const PixelContribution* pc = output.contributions.data() + p * k;
            for (int j = 0; j < k; ++j) {
                if (pc[j].index == kInvalidIndex) break;
                const double wgt = pc[j].weight;
                const std::size_t gi = pc[j].index;
                wsums[gi] += wgt;
                const double* src = per_pixel.data.data() + p * d;
                double* dst = sums.data() + gi * d;
                for (int c = 0; c < d; ++c) dst[c] += wgt * src[c];
            }
        }
    });

    std::vector<double> sums(n_gaussians * d, 0.0);
    std::vector<double> wsums(n_gaussians, 0.0);
    for (std::size_t chunk = 0; chunk < nchunks; ++chunk) {
        if (part_sum[chunk].empty()) continue;
        for (std::size_t i = 0; i < sums.size(); ++i) sums[i] += part_sum[chunk][i];
        for (std::size_t i = 0; i < wsums.size(); ++i) wsums[i] += part_w[chunk][i];
    }
    return {std::move(sums), std::move(wsums)};
}

} // namespace gsr
