#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "gsr/types.hpp"

namespace gsr {

// Residual output channels: position (3), log_scale (3), color (3),
// opacity_logit (1).
constexpr int kResidualDim = 10;

struct HeadShape {
    int cue_dim = 12;  // observation/prior cue width D
    int feat_dim = 12; // per-gaussian feature width
    int d_model = 64;
    int heads = 4;
    int mlp_hidden = 128;

    // Token: [relative position (3) | log_scale (3) | color (3) |
    //         opacity_logit (1) | feature | observation cue | prior cue].
    int state_dim() const { return 10 + feat_dim; }
    int token_dim() const { return state_dim() + 2 * cue_dim; }
    int head_dim() const { return d_model / heads; }
};

// Per-channel residual bounds. Position entries are in units of scene_extent
// (the effective bound is tau[k] * scene_extent); the rest are absolute.
using TauVector = std::array<double, kResidualDim>;

inline TauVector default_tau() {
    return {0.02, 0.02, 0.02, 0.2, 0.2, 0.2, 0.2, 0.2, 0.2, 1.0};
}

// Weight-shared residual head parameters, stored as one flat vector so the
// optimizer and the finite-difference harness can treat them uniformly.
// Matrix layout is row-major (in_dim x out_dim): y = x * W + b.
struct HeadParams {
    HeadShape shape;
    TauVector tau = default_tau();
    std::vector<double> data;

    struct Layout {
        std::size_t embed_w, embed_b;
        std::size_t wq, bq, wk, bk, wv, bv, wo, bo;
        std::size_t w1, b1, w2, b2;
        std::size_t sigma_step;
        std::size_t total;
    };
    Layout layout() const;

    double* at(std::size_t offset) { return data.data() + offset; }
    const double* at(std::size_t offset) const { return data.data() + offset; }

    bool all_finite() const;
};

HeadParams init_head_params(const HeadShape& shape, std::uint64_t seed);
HeadParams zeros_like(const HeadParams& params);

void save_head_params(const std::string& path, const HeadParams& params);
HeadParams load_head_params(const std::string& path);

// Voxel-window partition. Windows tile the positions' bounding box; odd step
// indices shift the grid by half a cell in every axis. Oversized windows keep
// the k_win highest-opacity members in the attention set; the rest still get
// embedding+MLP updates but skip attention mixing.
struct WindowPartition {
    double cell_size = 1.0;
    Vec3 origin;
    std::vector<std::uint32_t> window_of; // N

    struct Window {
        Vec3 center;                             // cell center, world units
        std::vector<std::uint32_t> members;      // ascending gaussian index
        std::vector<std::uint32_t> attn_members; // ascending subset
    };
    std::vector<Window> windows;
};

constexpr int kDefaultWindowCap = 256;

WindowPartition build_windows(const GaussianScene& scene, double cell_size, int step_index,
                              int k_win = kDefaultWindowCap);

// N x token_dim matrix. Null cue pointers are treated as all-zero cues
// (observation-only mode passes prior = nullptr).
std::vector<double> build_tokens(const GaussianScene& scene, const double* observation,
                                 const double* prior, const WindowPartition& partition,
                                 const HeadShape& shape);

// Opaque forward activations retained for the backward pass.
struct HeadForwardCache;

// N x kResidualDim residual matrix; every entry k satisfies
// |out[:,k]| <= tau_eff[k] by the tanh bound.
std::vector<double> head_forward(const std::vector<double>& tokens, std::size_t n,
                                 const WindowPartition& partition, const HeadParams& params,
                                 double scene_extent, HeadForwardCache* cache = nullptr);

struct HeadForwardCache {
    struct WindowCache {
        std::vector<double> member_tokens; // k x token_dim
        std::vector<double> embed;         // k x d_model
        std::vector<double> q, k, v;       // k' x d_model
        std::vector<double> attn;          // heads x k' x k' softmax rows
        std::vector<double> hcat;          // k' x d_model
        std::vector<double> post_attn;     // k x d_model (embed + attention)
        std::vector<double> mlp_pre;       // k x mlp_hidden (pre-activation)
        std::vector<double> mlp_act;       // k x mlp_hidden
        std::vector<double> raw;           // k x kResidualDim (pre tanh)
    };
    std::vector<WindowCache> windows;
    double scene_extent = 0.0;
};

// Accumulates parameter gradients into dparams (same layout as params) and
// token gradients into dtokens (N x token_dim).
void head_backward(const HeadForwardCache& cache, const WindowPartition& partition,
                   const HeadParams& params, const std::vector<double>& d_out,
                   HeadParams& dparams, std::vector<double>& dtokens);

// Applies bounded residuals: position/log_scale/opacity_logit add, color adds
// then clamps to [0,1]; rotation, features and N are untouched. Quaternions
// are re-normalized (no-op here since rotations are unchanged, kept for the
// state-update contract). Optional gates record which color channels were NOT
// clamped (1 = pass-through), for backpropagation through the update.
GaussianScene update_scene(const GaussianScene& scene, const std::vector<double>& delta,
                           std::vector<std::uint8_t>* color_gates = nullptr);

} // namespace gsr
